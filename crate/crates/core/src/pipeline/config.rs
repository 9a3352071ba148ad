//! Run configuration.
//!
//! One TOML file drives a training run; every CLI flag mirrors one of
//! these keys and wins over the file. The same record (hashed) is embedded
//! in evaluation reports so results stay attributable.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::PenaltyParams;
use crate::models::NetworkSpec;
use crate::noise::NoiseConfig;
use crate::optim::{Adam, AdamConfig, Optimizer, Sgd, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Detector,
    Denoiser,
    OneStage,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Detector => "detector",
            Stage::Denoiser => "denoiser",
            Stage::OneStage => "one_stage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    Adam,
    Sgd,
}

/// Architecture hyperparameters for both networks. Which half applies
/// depends on the stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub detector_depth: usize,
    pub detector_width: usize,
    pub base_channels: usize,
    pub scales: usize,
    pub res_blocks: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    /// Desk-scale defaults: a 7x32 detector stack and a 4-scale DRUnet
    /// with trimmed width/depth.
    fn default() -> Self {
        ModelConfig {
            detector_depth: 7,
            detector_width: 32,
            base_channels: 8,
            scales: 4,
            res_blocks: 1,
            init_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Directory of clean grayscale training images (PGM or PNG).
    pub train_dir: PathBuf,
    /// Where checkpoints, loss histories and reports land.
    pub out_dir: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_dir: PathBuf::from("data/train"),
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Everything one reproducible training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub optimizer: OptimizerChoice,
    /// Adam moment/epsilon settings; the step size itself comes from
    /// `base_lr` through the epoch schedule.
    pub adam: AdamConfig,
    /// SGD settings when `optimizer = "sgd"`; same note about `lr`.
    pub sgd: SgdConfig,
    pub penalty: PenaltyParams,
    pub noise: NoiseConfig,
    pub patch_size: usize,
    pub patches_per_epoch: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (and always at the end).
    pub checkpoint_every: usize,
    pub model: ModelConfig,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Detector,
            batch_size: 4,
            epochs: 30,
            base_lr: 1e-4,
            optimizer: OptimizerChoice::Adam,
            adam: AdamConfig::default(),
            sgd: SgdConfig::default(),
            penalty: PenaltyParams::default(),
            noise: NoiseConfig::default(),
            patch_size: 32,
            patches_per_epoch: 2000,
            seed: 7,
            checkpoint_every: 10,
            model: ModelConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Parse from TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        Ok(cfg)
    }

    /// Render as TOML (the resolved form printed by every run).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the resolved TOML, hex-encoded; identifies a run.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The network spec this config trains.
    pub fn network_spec(&self) -> NetworkSpec {
        match self.stage {
            Stage::Detector => NetworkSpec::detector(
                self.model.detector_depth,
                self.model.detector_width,
                self.model.init_seed,
            ),
            Stage::Denoiser | Stage::OneStage => NetworkSpec::drunet(
                self.model.base_channels,
                self.model.scales,
                self.model.res_blocks,
                self.model.init_seed,
            ),
        }
    }

    pub fn build_optimizer<T: crate::scalar::Scalar>(&self) -> Result<Optimizer<T>> {
        Ok(match self.optimizer {
            OptimizerChoice::Adam => Optimizer::Adam(Adam::new(AdamConfig {
                lr: self.base_lr,
                ..self.adam
            })?),
            OptimizerChoice::Sgd => Optimizer::Sgd(Sgd::new(SgdConfig {
                lr: self.base_lr,
                ..self.sgd
            })?),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.patches_per_epoch == 0 {
            return Err(Error::Config("patches_per_epoch must be >= 1".into()));
        }
        if !self.base_lr.is_finite() || self.base_lr < 0.0 {
            return Err(Error::Config(format!(
                "base_lr must be >= 0, got {}",
                self.base_lr
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        let spec = self.network_spec();
        spec.validate()?;
        let div = spec.divisor();
        if self.patch_size % div != 0 {
            return Err(Error::Config(format!(
                "patch_size {} must be divisible by {div} for a {}-scale drunet",
                self.patch_size,
                match spec {
                    NetworkSpec::Drunet { scales, .. } => scales,
                    _ => 0,
                }
            )));
        }
        match self.stage {
            Stage::Detector => {
                let receptive = 2 * self.model.detector_depth + 1;
                if self.patch_size < receptive {
                    return Err(Error::Config(format!(
                        "patch_size {} is below the detector receptive field {receptive}",
                        self.patch_size
                    )));
                }
            }
            _ => {
                if self.patch_size < div {
                    return Err(Error::Config(format!(
                        "patch_size {} is below the drunet divisor {div}",
                        self.patch_size
                    )));
                }
            }
        }
        self.penalty.validate()?;
        self.noise.validate()?;
        self.adam.validate()?;
        self.sgd.validate()?;
        Ok(())
    }
}
