//! Training objectives.
//!
//! Two losses drive the two stages: the squared-Frobenius-norm loss for the
//! restoration network, and its asymmetric variant for the detector, where
//! each pixel's squared error is scaled by the penalty factor
//! `alpha + beta * x` (`x` being the binary noise-map value). With
//! `alpha = 1.1, beta = -0.1` a clean-pixel error weighs exactly 1.1 times
//! a noise-pixel error, which pushes the detector's false-alarm rate down.
//!
//! Each loss comes in two forms: a pure value function, and a `_node`
//! variant that builds the same expression on a [`Graph`] so gradients flow
//! through it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{expect_same_shape, Graph, NodeId, Tensor};

/// Per-class weights of the asymmetric loss: clean pixels (`x = 0`) weigh
/// `alpha`, noise pixels (`x = 1`) weigh `alpha + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub alpha: f64,
    pub beta: f64,
}

impl PenaltyParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = PenaltyParams { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || !self.alpha.is_finite() {
            return Err(Error::Config(format!(
                "penalty alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if self.alpha + self.beta <= 0.0 || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "penalty alpha + beta must be > 0, got {} + {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    /// Clean-to-noise weight ratio, `alpha / (alpha + beta)`.
    pub fn clean_to_noise_ratio(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

impl Default for PenaltyParams {
    /// The simplest pair giving the clean class 1.1x the noise weight.
    fn default() -> Self {
        PenaltyParams {
            alpha: 1.1,
            beta: -0.1,
        }
    }
}

/// Squared-F-norm loss: `(1/(2n)) * sum((output_i - target_i)^2)`.
pub fn fnorm<T: Scalar>(output: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    expect_same_shape("fnorm loss", output, target)?;
    let n = T::from_usize(output.numel());
    let mut acc = T::zero();
    for (&o, &t) in output.data().iter().zip(target.data()) {
        let d = o - t;
        acc += d * d;
    }
    Ok(acc / (T::from_f64(2.0) * n))
}

/// Asymmetric penalty loss:
/// `(1/(2N)) * sum((output_i - x_i)^2 * (alpha + beta * x_i))` for a binary
/// map `x`.
pub fn asymmetric<T: Scalar>(
    output: &Tensor<T>,
    target_map: &Tensor<T>,
    params: PenaltyParams,
) -> Result<T> {
    expect_same_shape("asymmetric loss", output, target_map)?;
    params.validate()?;
    check_binary(target_map)?;
    let n = T::from_usize(output.numel());
    let alpha = T::from_f64(params.alpha);
    let beta = T::from_f64(params.beta);
    let mut acc = T::zero();
    for (&o, &x) in output.data().iter().zip(target_map.data()) {
        let d = o - x;
        acc += d * d * (alpha + beta * x);
    }
    Ok(acc / (T::from_f64(2.0) * n))
}

/// Tape form of [`fnorm`]; gradients flow into `output`.
pub fn fnorm_node<T: Scalar>(
    g: &mut Graph<T>,
    output: NodeId,
    target: &Tensor<T>,
) -> Result<NodeId> {
    expect_same_shape("fnorm loss", g.value(output), target)?;
    let n = target.numel();
    let t = g.leaf(target.clone());
    let diff = g.sub(output, t)?;
    let sq = g.square(diff);
    let total = g.sum(sq);
    Ok(g.mul_scalar(total, T::from_f64(0.5 / n as f64)))
}

/// Tape form of [`asymmetric`]; gradients flow into `output`.
pub fn asymmetric_node<T: Scalar>(
    g: &mut Graph<T>,
    output: NodeId,
    target_map: &Tensor<T>,
    params: PenaltyParams,
) -> Result<NodeId> {
    expect_same_shape("asymmetric loss", g.value(output), target_map)?;
    params.validate()?;
    check_binary(target_map)?;
    let n = target_map.numel();
    let alpha = T::from_f64(params.alpha);
    let beta = T::from_f64(params.beta);
    let weights = target_map.map(|x| alpha + beta * x);

    let t = g.leaf(target_map.clone());
    let w = g.leaf(weights);
    let diff = g.sub(output, t)?;
    let sq = g.square(diff);
    let weighted = g.mul(sq, w)?;
    let total = g.sum(weighted);
    Ok(g.mul_scalar(total, T::from_f64(0.5 / n as f64)))
}

fn check_binary<T: Scalar>(map: &Tensor<T>) -> Result<()> {
    for &x in map.data() {
        if x != T::zero() && x != T::one() {
            return Err(Error::Config(format!(
                "asymmetric loss target map must be binary (0/1), found {x}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn fnorm_is_zero_on_equal_inputs() {
        let a = t(&[4], &[1.0, -2.0, 3.5, 0.0]);
        assert_eq!(fnorm(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn fnorm_matches_hand_value() {
        // (1/(2*2)) * (4 + 4) = 2
        let out = t(&[2], &[2.0, 2.0]);
        let tgt = t(&[2], &[0.0, 0.0]);
        assert_eq!(fnorm(&out, &tgt).unwrap(), 2.0);
    }

    #[test]
    fn fnorm_gradient_is_diff_over_n() {
        // d/d_out (1/(2n))*sum((out-t)^2) = (out-t)/n; at out=[2,2], t=[0,0] -> [1,1]
        let out = t(&[2], &[2.0, 2.0]);
        let tgt = t(&[2], &[0.0, 0.0]);
        let mut g = Graph::new();
        let o = g.param(out);
        let l = fnorm_node(&mut g, o, &tgt).unwrap();
        let store = g.backward(l).unwrap();
        assert_eq!(store.grad(o).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn fnorm_rejects_shape_mismatch() {
        let a = t(&[2], &[0.0, 0.0]);
        let b = t(&[3], &[0.0, 0.0, 0.0]);
        assert!(fnorm(&a, &b).is_err());
    }

    #[test]
    fn asymmetric_is_zero_on_equal_inputs() {
        let map = t(&[4], &[0.0, 1.0, 1.0, 0.0]);
        let p = PenaltyParams::new(3.0, -1.5).unwrap();
        assert_eq!(asymmetric(&map, &map, p).unwrap(), 0.0);
    }

    #[test]
    fn asymmetric_weights_clean_errors_1_1x() {
        let p = PenaltyParams::default();
        // Single clean pixel (x = 0) predicted 1: (1/2) * 1 * 1.1 = 0.55.
        let clean = asymmetric(&t(&[1], &[1.0]), &t(&[1], &[0.0]), p).unwrap();
        assert!((clean - 0.55).abs() < 1e-12);
        // Single noise pixel (x = 1) predicted 0: (1/2) * 1 * 1.0 = 0.5.
        let noise = asymmetric(&t(&[1], &[0.0]), &t(&[1], &[1.0]), p).unwrap();
        assert!((noise - 0.5).abs() < 1e-12);
        assert!((clean / noise - 1.1).abs() < 1e-12);
        assert!((p.clean_to_noise_ratio() - 1.1).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_with_zero_beta_is_scaled_fnorm() {
        let mut rng = crate::rng::SplitMix64::new(5);
        let out = Tensor::new(
            vec![32],
            (0..32).map(|_| rng.next_range(-2.0, 2.0)).collect(),
        )
        .unwrap();
        let map = Tensor::new(
            vec![32],
            (0..32).map(|_| f64::from(rng.next_bool())).collect(),
        )
        .unwrap();
        let alpha = 1.7;
        let a = asymmetric(&out, &map, PenaltyParams::new(alpha, 0.0).unwrap()).unwrap();
        let f = fnorm(&out, &map).unwrap();
        assert!((a - alpha * f).abs() < 1e-12, "{a} vs {}", alpha * f);
    }

    #[test]
    fn asymmetric_rejects_non_binary_map() {
        let out = t(&[2], &[0.5, 0.5]);
        let map = t(&[2], &[0.0, 0.5]);
        assert!(asymmetric(&out, &map, PenaltyParams::default()).is_err());
    }

    #[test]
    fn penalty_params_validation() {
        assert!(PenaltyParams::new(0.0, 1.0).is_err());
        assert!(PenaltyParams::new(1.0, -1.0).is_err());
        assert!(PenaltyParams::new(1.1, -0.1).is_ok());
    }

    #[test]
    fn losses_are_nonnegative_and_zero_only_at_target() {
        let mut rng = crate::rng::SplitMix64::new(9);
        for _ in 0..50 {
            let out =
                Tensor::new(vec![8], (0..8).map(|_| rng.next_range(-1.0, 1.0)).collect()).unwrap();
            let tgt =
                Tensor::new(vec![8], (0..8).map(|_| rng.next_range(-1.0, 1.0)).collect()).unwrap();
            let l = fnorm(&out, &tgt).unwrap();
            assert!(l >= 0.0);
            if out != tgt {
                assert!(l > 0.0);
            }
        }
    }

    #[test]
    fn node_forms_match_pure_forms() {
        let mut rng = crate::rng::SplitMix64::new(11);
        let out = Tensor::new(
            vec![16],
            (0..16).map(|_| rng.next_range(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let tgt = Tensor::new(
            vec![16],
            (0..16).map(|_| rng.next_range(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let map = Tensor::new(
            vec![16],
            (0..16).map(|_| f64::from(rng.next_bool())).collect(),
        )
        .unwrap();
        let p = PenaltyParams::default();

        let mut g = Graph::new();
        let o = g.leaf(out.clone());
        let lf = fnorm_node(&mut g, o, &tgt).unwrap();
        let la = asymmetric_node(&mut g, o, &map, p).unwrap();
        assert!((g.value(lf).item().unwrap() - fnorm(&out, &tgt).unwrap()).abs() < 1e-14);
        assert!((g.value(la).item().unwrap() - asymmetric(&out, &map, p).unwrap()).abs() < 1e-14);
    }
}
