//! Runs the full finite-difference suite: every primitive, both losses,
//! and tiny end-to-end networks, all in f64.

use pepper_core::gradcheck;

#[test]
fn primitives_match_finite_differences() {
    let results = gradcheck::check_primitives().unwrap();
    assert!(!results.is_empty());
    for r in &results {
        assert!(
            r.passed(),
            "{}: max rel err {} >= {}",
            r.name,
            r.max_rel_err,
            r.tolerance
        );
    }
}

#[test]
fn losses_match_finite_differences() {
    for r in gradcheck::check_losses().unwrap() {
        assert!(
            r.passed(),
            "{}: max rel err {} >= {}",
            r.name,
            r.max_rel_err,
            r.tolerance
        );
    }
}

#[test]
fn tiny_networks_match_finite_differences() {
    let results = gradcheck::check_networks().unwrap();
    // One entry per parameter tensor of each net.
    assert!(results.len() > 10);
    for r in &results {
        assert!(
            r.passed(),
            "{}: max rel err {} >= {}",
            r.name,
            r.max_rel_err,
            r.tolerance
        );
    }
}
