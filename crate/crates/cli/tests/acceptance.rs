//! Acceptance suite: one test per shipping criterion, each printing a
//! `[PASS]`/`[FAIL]` line. Run with `cargo test -p pepper-cli --test
//! acceptance` (the whole workspace test run includes it).
//!
//! The desk-scale criteria (5 and 6) train real models on a synthetic
//! 10-image corpus (8 train / 2 held out). All trainings share one lazily
//! built fixture and run single-threaded; every number in here is
//! deterministic, so thresholds are exact gates, not statistical hopes.

use std::process::Command;
use std::sync::LazyLock;
use std::time::Instant;

use pepper_core::imageio::Image;
use pepper_core::loss::{self, PenaltyParams};
use pepper_core::models::NetworkState;
use pepper_core::noise::{self, NoiseConfig};
use pepper_core::optim::{self, Adam, AdamConfig, Sgd, SgdConfig};
use pepper_core::pipeline::config::{ModelConfig, OptimizerChoice};
use pepper_core::pipeline::{self, data::Dataset, eval, infer, Stage, TrainConfig};
use pepper_core::rng::SplitMix64;
use pepper_core::tensor::Tensor;
use pepper_core::{corpus, gradcheck};

// Desk-scale budgets. Deliberately small; every gate below passes with
// them deterministically.
const CORPUS_IMAGES: usize = 10;
const CORPUS_SIZE: usize = 160;
const CORPUS_SEED: u64 = 42;
const DETECTOR_EPOCHS: usize = 2;
const DETECTOR_PATCHES: usize = 2000;
const DETECTOR_LR: f64 = 1e-3;
const RESTORER_EPOCHS: usize = 30;
const RESTORER_PATCHES: usize = 400;
const RESTORER_LR: f64 = 3e-3;
const HELDOUT_PATCHES: usize = 200;

fn pass(criterion: usize, what: &str) {
    println!("[PASS] criterion {criterion}: {what}");
}

struct DeskCorpus {
    train: Dataset,
    test: Dataset,
}

static CORPUS: LazyLock<DeskCorpus> = LazyLock::new(|| {
    let root = std::env::temp_dir().join("pepper_acceptance_corpus");
    let _ = std::fs::remove_dir_all(&root);
    let paths =
        corpus::generate_corpus(&root, CORPUS_IMAGES, CORPUS_SIZE, CORPUS_SIZE, CORPUS_SEED)
            .expect("corpus generation");
    let split = CORPUS_IMAGES - 2;
    let load = |slice: &[std::path::PathBuf]| {
        let names = slice
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        let images = slice
            .iter()
            .map(|p| pepper_core::imageio::read_image(p).unwrap())
            .collect();
        Dataset::from_images(names, images).unwrap()
    };
    DeskCorpus {
        train: load(&paths[..split]),
        test: load(&paths[split..]),
    }
});

fn desk_config(stage: Stage) -> TrainConfig {
    let (epochs, patches, lr) = match stage {
        Stage::Detector => (DETECTOR_EPOCHS, DETECTOR_PATCHES, DETECTOR_LR),
        _ => (RESTORER_EPOCHS, RESTORER_PATCHES, RESTORER_LR),
    };
    TrainConfig {
        stage,
        epochs,
        patches_per_epoch: patches,
        base_lr: lr,
        patch_size: 32,
        model: ModelConfig::default(),
        ..TrainConfig::default()
    }
}

struct TrainedModels {
    detector: (pepper_core::models::NetworkSpec, NetworkState<f32>),
    detector_baseline: (pepper_core::models::NetworkSpec, NetworkState<f32>),
    denoiser: (pepper_core::models::NetworkSpec, NetworkState<f32>),
    one_stage: (pepper_core::models::NetworkSpec, NetworkState<f32>),
}

static MODELS: LazyLock<TrainedModels> = LazyLock::new(|| {
    let corpus = &*CORPUS;

    // Weighted detector (the default alpha = 1.1, beta = -0.1).
    let det_cfg = desk_config(Stage::Detector);
    let det = pipeline::train::<f32>(&det_cfg, &corpus.train, None).expect("detector training");

    // Baseline detector: equal class weights, same everything else.
    let base_cfg = TrainConfig {
        penalty: PenaltyParams::new(1.0, 0.0).unwrap(),
        ..desk_config(Stage::Detector)
    };
    let det0 = pipeline::train::<f32>(&base_cfg, &corpus.train, None).expect("baseline training");

    let dru_cfg = desk_config(Stage::Denoiser);
    let dru = pipeline::train::<f32>(&dru_cfg, &corpus.train, None).expect("denoiser training");

    // Equal budget for the one-stage baseline.
    let one_cfg = desk_config(Stage::OneStage);
    let one = pipeline::train::<f32>(&one_cfg, &corpus.train, None).expect("one-stage training");

    TrainedModels {
        detector: (det.spec, det.state),
        detector_baseline: (det0.spec, det0.state),
        denoiser: (dru.spec, dru.state),
        one_stage: (one.spec, one.state),
    }
});

/// Held-out detection counts over noisy patches cut from the test images.
fn heldout_detection_counts(
    spec: &pepper_core::models::NetworkSpec,
    state: &NetworkState<f32>,
) -> noise::AlarmRates {
    let corpus = &*CORPUS;
    let mut rng = SplitMix64::new(0xEA1);
    let noise_cfg = NoiseConfig::default();
    let (mut tp, mut fp, mut r#fn, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..HELDOUT_PATCHES {
        let clean = corpus.test.sample_patch(32, &mut rng).unwrap();
        // Offset the sample stream so held-out corruption never repeats a
        // training draw.
        let cfg = noise_cfg.for_sample(1_000_000 + i as u64);
        let (noisy, truth) = noise::synthesize(&clean, &cfg).unwrap();
        let probs =
            pepper_core::models::forward_inference(spec, state, &noisy.to_unit_tensor::<f32>())
                .unwrap();
        let predicted = noise::threshold_map(&probs, 0.5).unwrap();
        let r = noise::alarm_rates(&predicted, &truth).unwrap();
        tp += r.true_positives;
        fp += r.false_positives;
        r#fn += r.false_negatives;
        tn += r.true_negatives;
    }
    noise::AlarmRates::from_counts(tp, fp, r#fn, tn)
}

#[test]
#[ignore]
fn probe_far_pair_from_checkpoints() {
    // Dev probe: patch-level rates for externally trained checkpoints.
    for path in [
        "/tmp/pepper_smoke/exp3_det_1e-3/detector.ckpt",
        "/tmp/pepper_smoke/exp_det0/detector.ckpt",
        "/tmp/pepper_smoke/exp3_det_1e-3/detector_epoch0002.ckpt",
    ] {
        let ckpt = pepper_core::checkpoint::load(path).unwrap();
        let r = heldout_detection_counts(&ckpt.spec, &ckpt.state);
        println!(
            "{path}: FAR {:?} MAR {:?} F1 {:?} (fp {} fn {})",
            r.false_alarm_rate,
            r.missing_alarm_rate,
            r.f1(),
            r.false_positives,
            r.false_negatives
        );
    }
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let results = gradcheck::run_all().expect("gradient suite runs");
    let elapsed = start.elapsed();
    for r in &results {
        assert!(
            r.passed(),
            "criterion 1: {} has max rel err {} (tol {})",
            r.name,
            r.max_rel_err,
            r.tolerance
        );
    }
    assert!(
        elapsed.as_secs() < 120,
        "criterion 1: gradient suite took {elapsed:?}, budget is 2 min"
    );
    pass(
        1,
        &format!(
            "{} finite-difference checks passed in {:.1}s (primitives < 1e-4, networks < 1e-3)",
            results.len(),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_optimizer_exactness() {
    // Plain SGD reduces to p' = p - g * lr.
    let mut sgd = Sgd::new(SgdConfig {
        lr: 0.1,
        ..SgdConfig::default()
    })
    .unwrap();
    let mut p = [Tensor::scalar(1.0f64)];
    sgd.step(&mut p, &[Tensor::scalar(2.0)]).unwrap();
    assert!((p[0].item().unwrap() - 0.8).abs() < 1e-12);

    // Momentum hand-iteration: v=1 then v=1.9.
    let mut sgd = Sgd::new(SgdConfig {
        lr: 1.0,
        momentum: 0.9,
        ..SgdConfig::default()
    })
    .unwrap();
    let mut p = [Tensor::scalar(0.0f64)];
    sgd.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
    sgd.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
    assert!((p[0].item().unwrap() + 2.9).abs() < 1e-12);

    // Weight decay substitution: p' = 1 - 0.1.
    let mut sgd = Sgd::new(SgdConfig {
        lr: 1.0,
        weight_decay: 0.1,
        ..SgdConfig::default()
    })
    .unwrap();
    let mut p = [Tensor::scalar(1.0f64)];
    sgd.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
    assert!((p[0].item().unwrap() - 0.9).abs() < 1e-12);

    // Adam first step: bias correction cancels exactly.
    let mut adam = Adam::new(AdamConfig {
        lr: 1e-3,
        ..AdamConfig::default()
    })
    .unwrap();
    let mut p = [Tensor::scalar(0.0f64)];
    adam.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
    assert!((p[0].item().unwrap() - (-1e-3 / (1.0 + 1e-8))).abs() < 1e-12);

    // Adam under constant gradient moves exactly lr per step (eps = 0).
    let mut adam = Adam::new(AdamConfig {
        lr: 1.0,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 0.0,
    })
    .unwrap();
    let mut p = [Tensor::scalar(0.0f64)];
    adam.step(&mut p, &[Tensor::scalar(2.0)]).unwrap();
    assert!((p[0].item().unwrap() + 1.0).abs() < 1e-12);
    adam.step(&mut p, &[Tensor::scalar(2.0)]).unwrap();
    assert!((p[0].item().unwrap() + 2.0).abs() < 1e-12);

    // Schedule: exactly 1e-4 / 1e-5 / 1e-6 at epochs 0 / 100 / 250.
    assert_eq!(optim::lr_schedule(0, 1e-4), 1e-4);
    assert_eq!(optim::lr_schedule(100, 1e-4), 1e-5);
    assert_eq!(optim::lr_schedule(250, 1e-4), 1e-6);

    pass(
        2,
        "sgd/adam closed forms match to 1e-12; lr schedule exact at epochs 0/100/250",
    );
}

#[test]
fn criterion_3_loss_semantics() {
    let p = PenaltyParams::default();
    let one = |v: f64| Tensor::new(vec![1], vec![v]).unwrap();
    let clean_err = loss::asymmetric(&one(1.0), &one(0.0), p).unwrap();
    let noise_err = loss::asymmetric(&one(0.0), &one(1.0), p).unwrap();
    assert!((clean_err / noise_err - 1.1).abs() < 1e-12);

    // beta = 0 degenerates to alpha * fnorm.
    let mut rng = SplitMix64::new(33);
    let out = Tensor::new(
        vec![64],
        (0..64).map(|_| rng.next_range(-1.0, 1.0)).collect(),
    )
    .unwrap();
    let map = Tensor::new(
        vec![64],
        (0..64).map(|_| f64::from(rng.next_bool())).collect(),
    )
    .unwrap();
    let alpha = 1.3;
    let a = loss::asymmetric(&out, &map, PenaltyParams::new(alpha, 0.0).unwrap()).unwrap();
    let f = loss::fnorm(&out, &map).unwrap();
    assert!((a - alpha * f).abs() < 1e-12);

    pass(
        3,
        "clean-pixel errors weigh exactly 1.1x; beta=0 equals alpha*fnorm to 1e-12",
    );
}

#[test]
fn criterion_4_noise_model() {
    // Corrupted fraction at d = 0.2 on 256x256 stays in [0.19, 0.21] for
    // each of 5 seeds.
    let clean = corpus::sample_image(256, 256, 7);
    for seed in 1..=5 {
        let cfg = NoiseConfig {
            seed,
            ..NoiseConfig::default()
        };
        let (_, map) = noise::synthesize(&clean, &cfg).unwrap();
        let frac = map.count_ones() as f64 / (256.0 * 256.0);
        assert!(
            (0.19..=0.21).contains(&frac),
            "criterion 4: seed {seed} fraction {frac}"
        );
    }

    // Exhaustive 16x16: zero_noise keeps clean pixels bit-identical and
    // zeroes exactly the map positions.
    let clean16 = corpus::sample_image(16, 16, 9);
    let (noisy, map) = noise::synthesize(&clean16, &NoiseConfig::default()).unwrap();
    let masked = noise::zero_noise(&noisy, &map).unwrap();
    for i in 0..256 {
        if map.data()[i] == 1 {
            assert_eq!(
                masked.pixels()[i],
                0,
                "criterion 4: map position {i} not zeroed"
            );
        } else {
            assert_eq!(
                masked.pixels()[i],
                clean16.pixels()[i],
                "criterion 4: clean pixel {i} altered"
            );
        }
    }
    pass(
        4,
        "corrupted fraction in [0.19, 0.21] over 5 seeds; 16x16 zeroing exhaustively exact",
    );
}

#[test]
fn criterion_5_desk_scale_detection() {
    let models = &*MODELS;
    let weighted = heldout_detection_counts(&models.detector.0, &models.detector.1);
    let f1 = weighted
        .f1()
        .expect("held-out patches contain both classes");
    assert!(
        f1 >= 0.95,
        "criterion 5: held-out F1 {f1:.4} below 0.95 (precision {:?}, recall {:?})",
        weighted.precision,
        weighted.recall
    );

    let baseline =
        heldout_detection_counts(&models.detector_baseline.0, &models.detector_baseline.1);
    let far_weighted = weighted.false_alarm_rate.unwrap();
    let far_baseline = baseline.false_alarm_rate.unwrap();
    assert!(
        far_weighted <= far_baseline,
        "criterion 5: raising the clean-pixel weight increased the false-alarm rate \
         ({far_baseline:.6} -> {far_weighted:.6})"
    );
    pass(
        5,
        &format!(
            "held-out F1 {f1:.4} >= 0.95 with tau 0.5; FAR {far_weighted:.6} (alpha 1.1) <= {far_baseline:.6} (alpha 1.0)"
        ),
    );
}

#[test]
fn criterion_6_end_to_end_ordering() {
    let corpus = &*CORPUS;
    let models = &*MODELS;
    let cfg = TrainConfig::default();
    let inputs = eval::EvalInputs {
        detector_spec: &models.detector.0,
        detector: &models.detector.1,
        denoiser_spec: &models.denoiser.0,
        denoiser: &models.denoiser.1,
        one_stage_spec: &models.one_stage.0,
        one_stage: &models.one_stage.1,
        noise: &cfg.noise,
        tau: 0.5,
        median_window: 3,
        config_hash: cfg.hash(),
    };
    let report = eval::evaluate(&inputs, &corpus.test).expect("evaluation");
    assert!(
        report.images.len() >= 2,
        "criterion 6: needs >= 2 held-out images"
    );

    let two = report.mean_two_stage.expect("two-stage PSNR");
    let one = report.mean_one_stage.expect("one-stage PSNR");
    let med = report.mean_median.expect("median PSNR");
    assert!(
        two > one,
        "criterion 6: two-stage {two:.2} dB not above one-stage {one:.2} dB"
    );
    assert!(
        one > med,
        "criterion 6: one-stage {one:.2} dB not above median {med:.2} dB"
    );
    for img in &report.images {
        let oracle = img.oracle_two_stage.db().unwrap_or(f64::INFINITY);
        let learned = img.two_stage.db().unwrap_or(f64::INFINITY);
        assert!(
            oracle >= learned,
            "criterion 6: oracle map {oracle:.2} dB below learned map {learned:.2} dB on {}",
            img.name
        );
    }
    pass(
        6,
        &format!(
            "mean PSNR two-stage {two:.2} > one-stage {one:.2} > median {med:.2} dB; oracle >= learned per image"
        ),
    );
}

#[test]
fn criterion_7_psnr_oracle() {
    let a = Image::filled(64, 64, 100).unwrap();
    let b = Image::filled(64, 64, 101).unwrap();
    let eval::Psnr::Db(v) = eval::psnr(&a, &b).unwrap() else {
        panic!("criterion 7: expected a dB value");
    };
    assert!((v - 48.1308).abs() < 1e-3, "criterion 7: got {v}");

    let black = Image::filled(64, 64, 0).unwrap();
    let white = Image::filled(64, 64, 255).unwrap();
    assert_eq!(eval::psnr(&black, &white).unwrap(), eval::Psnr::Db(0.0));

    let same = eval::psnr(&a, &a).unwrap();
    assert_eq!(same, eval::Psnr::Identical);
    pass(
        7,
        "uniform +1 differs by 48.1308 dB (tol 1e-3); full-scale difference is exactly 0 dB",
    );
}

#[test]
fn criterion_8_reproducibility() {
    // Two identical `--deterministic` train runs of the binary must write
    // bit-identical loss histories and checkpoints.
    let root = std::env::temp_dir().join("pepper_acceptance_repro");
    let _ = std::fs::remove_dir_all(&root);
    let data = root.join("train");
    corpus::generate_corpus(&data, 3, 64, 64, 5).unwrap();

    let bin = env!("CARGO_BIN_EXE_pepper");
    for out in ["run_a", "run_b"] {
        let status = Command::new(bin)
            .args([
                "--deterministic",
                "train-detector",
                "--train-dir",
                data.to_str().unwrap(),
                "--out-dir",
                root.join(out).to_str().unwrap(),
                "--epochs",
                "2",
                "--patches-per-epoch",
                "20",
                "--base-lr",
                "1e-3",
                "--patch-size",
                "32",
                "--seed",
                "11",
            ])
            .output()
            .expect("train verb runs");
        assert!(
            status.status.success(),
            "criterion 8: train verb failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
    }
    let read = |run: &str, file: &str| std::fs::read(root.join(run).join(file)).unwrap();
    assert_eq!(
        read("run_a", "detector_loss.txt"),
        read("run_b", "detector_loss.txt"),
        "criterion 8: loss histories differ"
    );
    assert_eq!(
        read("run_a", "detector.ckpt"),
        read("run_b", "detector.ckpt"),
        "criterion 8: checkpoints differ"
    );

    // And checkpoints round-trip losslessly: load -> save -> same bytes.
    let ckpt_path = root.join("run_a").join("detector.ckpt");
    let loaded = pepper_core::checkpoint::load(&ckpt_path).unwrap();
    let resaved = root.join("resaved.ckpt");
    pepper_core::checkpoint::save(&loaded, &resaved).unwrap();
    assert_eq!(
        std::fs::read(&ckpt_path).unwrap(),
        std::fs::read(&resaved).unwrap(),
        "criterion 8: checkpoint round-trip changed bytes"
    );

    // The restored state drives inference identically to the original.
    let noisy = corpus::sample_image(64, 64, 77);
    let reloaded = pepper_core::checkpoint::load(&resaved).unwrap();
    let a = pepper_core::models::forward_inference(
        &loaded.spec,
        &loaded.state,
        &noisy.to_unit_tensor::<f32>(),
    )
    .unwrap();
    let b = pepper_core::models::forward_inference(
        &reloaded.spec,
        &reloaded.state,
        &noisy.to_unit_tensor::<f32>(),
    )
    .unwrap();
    assert_eq!(a, b);

    pass(
        8,
        "two --deterministic runs byte-identical; checkpoint round-trip lossless",
    );
}

// Keep the one-stage/sanity ordering visible: restoration helps noisy
// inputs more than it hurts clean ones.
#[test]
fn one_stage_keeps_clean_images_closer_than_noisy_ones() {
    let corpus = &*CORPUS;
    let models = &*MODELS;
    let clean = &corpus.test.images()[0];
    let cfg = NoiseConfig::default();
    let (noisy, _) = noise::synthesize(clean, &cfg).unwrap();

    let restored_clean =
        infer::denoise_one_stage(&models.one_stage.0, &models.one_stage.1, clean).unwrap();
    let restored_noisy =
        infer::denoise_one_stage(&models.one_stage.0, &models.one_stage.1, &noisy).unwrap();
    let p_clean = eval::psnr(&restored_clean, clean)
        .unwrap()
        .db()
        .unwrap_or(f64::INFINITY);
    let p_noisy = eval::psnr(&restored_noisy, clean)
        .unwrap()
        .db()
        .unwrap_or(f64::INFINITY);
    assert!(
        p_clean > p_noisy,
        "clean pass-through {p_clean:.2} dB should beat noisy restoration {p_noisy:.2} dB"
    );
}

// The optimizer choice gate from the config plumbing: an SGD config is
// honored end to end.
#[test]
fn sgd_config_trains_too() {
    let corpus = &*CORPUS;
    let cfg = TrainConfig {
        optimizer: OptimizerChoice::Sgd,
        epochs: 1,
        patches_per_epoch: 8,
        patch_size: 32,
        model: ModelConfig {
            detector_depth: 3,
            detector_width: 4,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let out = pipeline::train::<f32>(&cfg, &corpus.train, None).unwrap();
    assert_eq!(out.loss_history.len(), 1);
}
