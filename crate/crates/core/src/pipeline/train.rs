//! The training loop for all three stages.
//!
//! Per stage the recipe differs only in how a clean patch becomes an
//! (input, target) pair:
//!
//! * `detector`  — input: corrupted patch / 255; target: the ground-truth
//!   noise map; loss: asymmetric penalty.
//! * `denoiser`  — input: corrupted patch with every noise pixel forced to
//!   0, / 255; target: the clean patch / 255; loss: squared F-norm.
//! * `one_stage` — input: corrupted patch / 255; target: the clean patch
//!   / 255; loss: squared F-norm.
//!
//! Each patch draws a child noise seed, so corruption varies across
//! samples while the whole run stays reproducible. Per-epoch mean losses
//! are recorded as `log10(loss)`.

use crate::error::{Error, Result};
use crate::loss;
use crate::models::{self, NetworkState};
use crate::noise;
use crate::optim::{lr_schedule, Optimizer};
use crate::rng::{hash2, SplitMix64};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

use super::config::{Stage, TrainConfig};
use super::data::Dataset;
use crate::models::NetworkSpec;

/// Called after each epoch with (epoch index, state, optimizer); the CLI
/// uses it to write cadenced checkpoints.
pub type EpochHook<'a, T> = dyn FnMut(usize, &NetworkState<T>, &Optimizer<T>) -> Result<()> + 'a;

#[derive(Debug)]
pub struct TrainOutcome<T> {
    pub spec: NetworkSpec,
    pub state: NetworkState<T>,
    pub optimizer: Optimizer<T>,
    /// `(epoch, log10(mean batch loss))`, one entry per epoch.
    pub loss_history: Vec<(usize, f64)>,
}

impl<T> TrainOutcome<T> {
    /// Two-column loss history text: `epoch log10_loss` per line.
    pub fn history_text(&self) -> String {
        let mut out = String::new();
        for (epoch, log_loss) in &self.loss_history {
            out.push_str(&format!("{epoch} {log_loss:.10}\n"));
        }
        out
    }
}

/// One training sample in tensor-ready flat form.
struct Sample<T> {
    input: Vec<T>,
    target: Vec<T>,
}

fn make_sample<T: Scalar>(
    clean: &crate::imageio::Image,
    cfg: &TrainConfig,
    sample_index: u64,
) -> Sample<T> {
    let noise_cfg = cfg.noise.for_sample(sample_index);
    let mut noisy = clean.pixels().to_vec();
    let map = noise::corrupt_buffer(&mut noisy, &noise_cfg);
    let scale = T::from_f64(1.0 / 255.0);
    match cfg.stage {
        Stage::Detector => Sample {
            input: noisy
                .iter()
                .map(|&p| T::from_usize(p as usize) * scale)
                .collect(),
            target: map.iter().map(|&m| T::from_usize(m as usize)).collect(),
        },
        Stage::Denoiser => {
            let zeroed = noisy
                .iter()
                .zip(&map)
                .map(|(&p, &m)| {
                    if m == 1 {
                        T::zero()
                    } else {
                        T::from_usize(p as usize) * scale
                    }
                })
                .collect();
            Sample {
                input: zeroed,
                target: clean
                    .pixels()
                    .iter()
                    .map(|&p| T::from_usize(p as usize) * scale)
                    .collect(),
            }
        }
        Stage::OneStage => Sample {
            input: noisy
                .iter()
                .map(|&p| T::from_usize(p as usize) * scale)
                .collect(),
            target: clean
                .pixels()
                .iter()
                .map(|&p| T::from_usize(p as usize) * scale)
                .collect(),
        },
    }
}

/// Train the stage selected by `cfg` on a directory-backed dataset.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    dataset: &Dataset,
    mut epoch_hook: Option<&mut EpochHook<'_, T>>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let spec = cfg.network_spec();
    let mut state: NetworkState<T> = models::init_params(&spec);
    let mut optimizer: Optimizer<T> = cfg.build_optimizer()?;
    let patch = cfg.patch_size;
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut sample_counter: u64 = 0;

    for epoch in 0..cfg.epochs {
        optimizer.set_lr(lr_schedule(epoch, cfg.base_lr));
        let mut patch_rng = SplitMix64::new(hash2(cfg.seed, epoch as u64));

        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;
        let mut batch: Vec<Sample<T>> = Vec::with_capacity(cfg.batch_size);
        for drawn in 0..cfg.patches_per_epoch {
            let clean = dataset.sample_patch(patch, &mut patch_rng)?;
            batch.push(make_sample(&clean, cfg, sample_counter));
            sample_counter += 1;
            let last = drawn + 1 == cfg.patches_per_epoch;
            if batch.len() == cfg.batch_size || last {
                let loss = step_batch(cfg, &spec, &mut state, &mut optimizer, &batch, patch)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss at epoch {epoch}, sample {drawn} (stage {})",
                        cfg.stage.name()
                    )));
                }
                epoch_loss += loss * batch.len() as f64;
                seen += batch.len();
                batch.clear();
            }
        }

        let mean = epoch_loss / seen as f64;
        loss_history.push((epoch, mean.max(f64::MIN_POSITIVE).log10()));
        if let Some(hook) = epoch_hook.as_deref_mut() {
            hook(epoch, &state, &optimizer)?;
        }
    }

    Ok(TrainOutcome {
        spec,
        state,
        optimizer,
        loss_history,
    })
}

/// Forward/backward/update on one batch; returns the batch loss.
fn step_batch<T: Scalar>(
    cfg: &TrainConfig,
    spec: &NetworkSpec,
    state: &mut NetworkState<T>,
    optimizer: &mut Optimizer<T>,
    batch: &[Sample<T>],
    patch: usize,
) -> Result<f64> {
    let b = batch.len();
    let mut input = Vec::with_capacity(b * patch * patch);
    let mut target = Vec::with_capacity(b * patch * patch);
    for s in batch {
        input.extend_from_slice(&s.input);
        target.extend_from_slice(&s.target);
    }
    let shape = vec![b, 1, patch, patch];
    let input = Tensor::new(shape.clone(), input)?;
    let target = Tensor::new(shape, target)?;

    let mut g = Graph::new();
    let x = g.leaf(input);
    let param_ids = models::load_params(&mut g, state);
    let y = models::forward(&mut g, spec, &param_ids, x)?;
    let loss_node = match cfg.stage {
        Stage::Detector => loss::asymmetric_node(&mut g, y, &target, cfg.penalty)?,
        Stage::Denoiser | Stage::OneStage => loss::fnorm_node(&mut g, y, &target)?,
    };
    let loss_value = g.value(loss_node).item()?.as_f64();

    let mut store = g.backward(loss_node)?;
    let grads: Vec<Tensor<T>> = param_ids
        .iter()
        .zip(state.tensors())
        .map(|(&id, p)| store.take_or_zeros(id, p.shape()))
        .collect();
    optimizer.step(state.tensors_mut(), &grads)?;
    Ok(loss_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::pipeline::config::OptimizerChoice;

    fn tiny_dataset(tag: &str) -> Dataset {
        let dir = std::env::temp_dir().join(format!("pepper_train_{tag}"));
        corpus::generate_corpus(&dir, 2, 48, 48, 77).unwrap();
        Dataset::load_dir(&dir).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            patches_per_epoch: 1,
            patch_size: 16,
            model: crate::pipeline::config::ModelConfig {
                detector_depth: 3,
                detector_width: 4,
                base_channels: 4,
                scales: 2,
                res_blocks: 1,
                init_seed: 5,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_epoch_is_a_no_op_with_unit_history() {
        let ds = tiny_dataset("zerolr");
        let cfg = TrainConfig {
            base_lr: 0.0,
            ..tiny_cfg()
        };
        let spec = cfg.network_spec();
        let init: NetworkState<f64> = models::init_params(&spec);
        let out: TrainOutcome<f64> = train(&cfg, &ds, None).unwrap();
        assert_eq!(out.loss_history.len(), 1);
        assert_eq!(out.state, init);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = tiny_dataset("determinism");
        let cfg = TrainConfig {
            epochs: 2,
            patches_per_epoch: 6,
            base_lr: 1e-3,
            ..tiny_cfg()
        };
        let a: TrainOutcome<f32> = train(&cfg, &ds, None).unwrap();
        let b: TrainOutcome<f32> = train(&cfg, &ds, None).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn fixed_batch_loss_halves_over_fifty_steps() {
        // 50 optimizer steps on one repeated desk-scale batch (4 patches of
        // 32x32, lr = 1e-3, tiny 3x16 detector) must cut the loss by half
        // or better.
        let ds = tiny_dataset("decrease");
        let cfg = TrainConfig {
            base_lr: 1e-3,
            patches_per_epoch: 4,
            batch_size: 4,
            patch_size: 32,
            model: crate::pipeline::config::ModelConfig {
                detector_depth: 3,
                detector_width: 16,
                ..Default::default()
            },
            ..TrainConfig::default()
        };
        let spec = cfg.network_spec();
        let mut state: NetworkState<f64> = models::init_params(&spec);
        let mut optimizer: Optimizer<f64> = cfg.build_optimizer().unwrap();
        let mut rng = SplitMix64::new(3);
        let batch: Vec<_> = (0..4)
            .map(|i| {
                let clean = ds.sample_patch(32, &mut rng).unwrap();
                make_sample::<f64>(&clean, &cfg, i as u64)
            })
            .collect();

        let first = step_batch(&cfg, &spec, &mut state, &mut optimizer, &batch, 32).unwrap();
        let mut last = first;
        for _ in 0..49 {
            last = step_batch(&cfg, &spec, &mut state, &mut optimizer, &batch, 32).unwrap();
        }
        assert!(
            last < first / 2.0,
            "loss {first} only reached {last} after 50 steps"
        );
    }

    #[test]
    fn zero_beta_detector_run_equals_alpha_scaled_fnorm_run() {
        // With beta = 0 the asymmetric loss is alpha * fnorm, so SGD with
        // base_lr matches an fnorm run with base_lr * alpha. We emulate
        // the fnorm run as a one_stage-style config on the same wiring by
        // using a penalty of alpha = 1, beta = 0 and the scaled rate.
        let ds = tiny_dataset("beta_zero");
        let alpha = 1.6;
        let base = TrainConfig {
            optimizer: OptimizerChoice::Sgd,
            epochs: 2,
            patches_per_epoch: 4,
            base_lr: 1e-2,
            ..tiny_cfg()
        };
        let weighted = TrainConfig {
            penalty: crate::loss::PenaltyParams::new(alpha, 0.0).unwrap(),
            ..base.clone()
        };
        let plain = TrainConfig {
            penalty: crate::loss::PenaltyParams::new(1.0, 0.0).unwrap(),
            base_lr: base.base_lr * alpha,
            ..base
        };
        let a: TrainOutcome<f64> = train(&weighted, &ds, None).unwrap();
        let b: TrainOutcome<f64> = train(&plain, &ds, None).unwrap();
        for (ta, tb) in a.state.tensors().iter().zip(b.state.tensors()) {
            for (&va, &vb) in ta.data().iter().zip(tb.data()) {
                assert!((va - vb).abs() < 1e-10, "{va} vs {vb}");
            }
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        // A runaway step size blows the (unbounded) restoration loss up to
        // inf/NaN; the loop must abort, not keep training. The detector
        // stage cannot serve here: its sigmoid keeps the loss bounded.
        let ds = tiny_dataset("nonfinite");
        let cfg = TrainConfig {
            stage: Stage::OneStage,
            base_lr: 1e30,
            epochs: 3,
            patches_per_epoch: 4,
            optimizer: OptimizerChoice::Sgd,
            ..tiny_cfg()
        };
        let run: Result<TrainOutcome<f32>> = train(&cfg, &ds, None);
        let err = run.unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }

    #[test]
    fn epoch_hook_sees_every_epoch() {
        let ds = tiny_dataset("hook");
        let cfg = TrainConfig {
            epochs: 3,
            ..tiny_cfg()
        };
        let mut seen = Vec::new();
        let mut hook = |epoch: usize, _: &NetworkState<f32>, _: &Optimizer<f32>| {
            seen.push(epoch);
            Ok(())
        };
        let _ = train::<f32>(&cfg, &ds, Some(&mut hook)).unwrap();
        assert_eq!(seen, vec![0, 1, 2]);
    }
}
