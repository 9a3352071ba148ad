//! Training, inference and evaluation.
//!
//! * [`config`] — the run configuration record (serialized as TOML).
//! * [`data`] — image directories, patch sampling, flips.
//! * [`train`] — the training loop for all three stages.
//! * [`infer`] — two-stage and one-stage denoising, the median-filter
//!   baseline, reflect padding.
//! * [`eval`] — PSNR and the evaluation report.

pub mod config;
pub mod data;
pub mod eval;
pub mod infer;
pub mod train;

pub use config::{DataConfig, ModelConfig, OptimizerChoice, Stage, TrainConfig};
pub use data::Dataset;
pub use eval::{evaluate, psnr, EvalInputs, EvalReport, ImageEval, Psnr};
pub use infer::{denoise_one_stage, denoise_two_stage, median_filter, restore_zeroed};
pub use train::{train, TrainOutcome};
