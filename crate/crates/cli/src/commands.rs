//! Verb implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use pepper_core::checkpoint::{self, Checkpoint, OptimizerState};
use pepper_core::imageio::{self, ImageFormat};
use pepper_core::models::NetworkState;
use pepper_core::noise::{self, NoiseMap};
use pepper_core::optim::Optimizer;
use pepper_core::pipeline::{
    self, config::OptimizerChoice, data::Dataset, eval, infer, train::TrainOutcome, Stage,
    TrainConfig,
};

use crate::TrainFlags;

/// Error plus the process exit code it maps to (2 = usage/config, 1 =
/// runtime failure).
pub struct CliError {
    pub error: anyhow::Error,
    pub code: u8,
}

impl CliError {
    fn config(error: anyhow::Error) -> Self {
        CliError { error, code: 2 }
    }

    fn runtime(error: anyhow::Error) -> Self {
        CliError { error, code: 1 }
    }
}

type CmdResult = Result<(), CliError>;

fn load_config(path: Option<&Path>) -> Result<TrainConfig, CliError> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))
                .map_err(CliError::config)?;
            TrainConfig::from_toml(&text).map_err(|e| CliError::config(anyhow!("{e}")))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseOverrides {
    pub density: Option<f64>,
    pub salt: Option<u8>,
    pub pepper: Option<u8>,
    pub salt_fraction: Option<f64>,
    pub seed: Option<u64>,
}

impl NoiseOverrides {
    fn apply(&self, cfg: &mut pepper_core::noise::NoiseConfig) {
        if let Some(d) = self.density {
            cfg.density = d;
        }
        if let Some(s) = self.salt {
            cfg.salt_value = s;
        }
        if let Some(p) = self.pepper {
            cfg.pepper_value = p;
        }
        if let Some(f) = self.salt_fraction {
            cfg.salt_fraction = f;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
    }
}

pub fn synthesize(
    config: Option<&Path>,
    input_dir: &Path,
    out_noisy: &Path,
    out_maps: &Path,
    overrides: NoiseOverrides,
    format: &str,
) -> CmdResult {
    let mut cfg = load_config(config)?;
    overrides.apply(&mut cfg.noise);
    cfg.noise
        .validate()
        .map_err(|e| CliError::config(anyhow!("{e}")))?;
    let format = match format {
        "pgm" => ImageFormat::Pgm,
        "png" => ImageFormat::Png,
        other => {
            return Err(CliError::config(anyhow!(
                "unknown image format {other:?} (use pgm or png)"
            )))
        }
    };
    println!("resolved noise config:\n{}", toml_section(&cfg, "noise"));

    let dataset = Dataset::load_dir(input_dir).map_err(|e| CliError::config(anyhow!("{e}")))?;
    fs::create_dir_all(out_noisy)
        .with_context(|| format!("creating {}", out_noisy.display()))
        .map_err(CliError::runtime)?;
    fs::create_dir_all(out_maps)
        .with_context(|| format!("creating {}", out_maps.display()))
        .map_err(CliError::runtime)?;

    let ext = match format {
        ImageFormat::Pgm => "pgm",
        ImageFormat::Png => "png",
    };
    for (idx, (name, clean)) in dataset.names().iter().zip(dataset.images()).enumerate() {
        let per_image = cfg.noise.for_sample(idx as u64);
        let (noisy, map) =
            noise::synthesize(clean, &per_image).map_err(|e| CliError::runtime(anyhow!("{e}")))?;
        let stem = Path::new(name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("image_{idx}"));
        imageio::write_image(&noisy, out_noisy.join(format!("{stem}.{ext}")), format)
            .map_err(|e| CliError::runtime(anyhow!("{e}")))?;
        imageio::write_image(
            &map.to_image(),
            out_maps.join(format!("{stem}_map.{ext}")),
            format,
        )
        .map_err(|e| CliError::runtime(anyhow!("{e}")))?;
    }
    println!(
        "synthesized {} images into {} (maps in {})",
        dataset.len(),
        out_noisy.display(),
        out_maps.display()
    );
    Ok(())
}

/// Extract one `[section]` of the resolved config TOML for display.
fn toml_section(cfg: &TrainConfig, section: &str) -> String {
    let text = cfg.to_toml();
    let header = format!("[{section}]");
    let mut out = String::new();
    let mut active = false;
    for line in text.lines() {
        if line.starts_with('[') {
            active = line.trim() == header;
        }
        if active {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

pub fn train(stage: Stage, flags: &TrainFlags) -> CmdResult {
    let mut cfg = load_config(flags.config.as_deref())?;
    cfg.stage = stage;
    apply_train_flags(&mut cfg, flags)?;
    cfg.validate()
        .map_err(|e| CliError::config(anyhow!("{e}")))?;

    println!("resolved config:\n{}", cfg.to_toml());

    let dataset =
        Dataset::load_dir(&cfg.data.train_dir).map_err(|e| CliError::config(anyhow!("{e}")))?;
    fs::create_dir_all(&cfg.data.out_dir)
        .with_context(|| format!("creating {}", cfg.data.out_dir.display()))
        .map_err(CliError::runtime)?;
    fs::write(cfg.data.out_dir.join("config.toml"), cfg.to_toml())
        .context("writing resolved config")
        .map_err(CliError::runtime)?;

    let stage_name = cfg.stage.name();
    let out_dir = cfg.data.out_dir.clone();
    let spec = cfg.network_spec();
    let cadence = cfg.checkpoint_every;
    let total_epochs = cfg.epochs;
    let mut hook = |epoch: usize, state: &NetworkState<f32>, opt: &Optimizer<f32>| {
        let done = epoch + 1;
        if done % cadence != 0 && done != total_epochs {
            return Ok(());
        }
        let mut ckpt = Checkpoint::new(spec, state.clone());
        ckpt.optimizer = Some(OptimizerState::capture(opt));
        ckpt.epoch = done;
        let path = if done == total_epochs {
            out_dir.join(format!("{stage_name}.ckpt"))
        } else {
            out_dir.join(format!("{stage_name}_epoch{done:04}.ckpt"))
        };
        checkpoint::save(&ckpt, &path)?;
        Ok(())
    };

    let outcome: TrainOutcome<f32> = pipeline::train(&cfg, &dataset, Some(&mut hook))
        .map_err(|e| CliError::runtime(anyhow!("{e}")))?;

    let history_path = cfg.data.out_dir.join(format!("{stage_name}_loss.txt"));
    fs::write(&history_path, outcome.history_text())
        .context("writing loss history")
        .map_err(CliError::runtime)?;

    if let Some((epoch, log_loss)) = outcome.loss_history.last() {
        println!(
            "trained {stage_name} for {} epochs; final log10(loss) = {log_loss:.6} (epoch {epoch})",
            cfg.epochs
        );
    }
    println!(
        "checkpoint: {}\nloss history: {}",
        cfg.data
            .out_dir
            .join(format!("{stage_name}.ckpt"))
            .display(),
        history_path.display()
    );
    Ok(())
}

fn apply_train_flags(cfg: &mut TrainConfig, flags: &TrainFlags) -> Result<(), CliError> {
    if let Some(v) = &flags.train_dir {
        cfg.data.train_dir = v.clone();
    }
    if let Some(v) = &flags.out_dir {
        cfg.data.out_dir = v.clone();
    }
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.base_lr {
        cfg.base_lr = v;
    }
    if let Some(v) = flags.patch_size {
        cfg.patch_size = v;
    }
    if let Some(v) = flags.patches_per_epoch {
        cfg.patches_per_epoch = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = flags.density {
        cfg.noise.density = v;
    }
    if let Some(v) = flags.salt {
        cfg.noise.salt_value = v;
    }
    if let Some(v) = flags.pepper {
        cfg.noise.pepper_value = v;
    }
    if let Some(v) = flags.salt_fraction {
        cfg.noise.salt_fraction = v;
    }
    if let Some(v) = flags.noise_seed {
        cfg.noise.seed = v;
    }
    if let Some(v) = flags.alpha {
        cfg.penalty.alpha = v;
    }
    if let Some(v) = flags.beta {
        cfg.penalty.beta = v;
    }
    if let Some(v) = &flags.optimizer {
        cfg.optimizer = match v.as_str() {
            "adam" => OptimizerChoice::Adam,
            "sgd" => OptimizerChoice::Sgd,
            other => {
                return Err(CliError::config(anyhow!(
                    "unknown optimizer {other:?} (use adam or sgd)"
                )))
            }
        };
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    checkpoint::load(path).map_err(|e| CliError::config(anyhow!("{e}")))
}

pub struct DenoiseArgs {
    pub config: Option<PathBuf>,
    pub detector: Option<PathBuf>,
    pub denoiser: Option<PathBuf>,
    pub one_stage: Option<PathBuf>,
    pub input: PathBuf,
    pub output: PathBuf,
    pub reference: Option<PathBuf>,
    pub tau: f64,
    pub map_out: Option<PathBuf>,
}

pub fn denoise(args: DenoiseArgs) -> CmdResult {
    let _cfg = load_config(args.config.as_deref())?;
    let noisy = imageio::read_image(&args.input).map_err(|e| CliError::config(anyhow!("{e}")))?;
    let out_format =
        ImageFormat::from_extension(&args.output).map_err(|e| CliError::config(anyhow!("{e}")))?;

    let (restored, map): (_, Option<NoiseMap>) = if let Some(one_stage) = &args.one_stage {
        let ckpt = load_checkpoint(one_stage)?;
        println!(
            "one-stage restoration with {} ({:?})",
            one_stage.display(),
            ckpt.spec
        );
        let img = infer::denoise_one_stage(&ckpt.spec, &ckpt.state, &noisy)
            .map_err(|e| CliError::runtime(anyhow!("{e}")))?;
        (img, None)
    } else {
        let det = load_checkpoint(args.detector.as_deref().expect("clap enforces"))?;
        let dru = load_checkpoint(args.denoiser.as_deref().expect("clap enforces"))?;
        println!(
            "two-stage restoration: detector {:?}, restorer {:?}, tau = {}",
            det.spec, dru.spec, args.tau
        );
        let (img, map) = infer::denoise_two_stage(
            &det.spec, &det.state, &dru.spec, &dru.state, &noisy, args.tau,
        )
        .map_err(|e| CliError::runtime(anyhow!("{e}")))?;
        (img, Some(map))
    };

    imageio::write_image(&restored, &args.output, out_format)
        .map_err(|e| CliError::runtime(anyhow!("{e}")))?;
    println!("wrote {}", args.output.display());

    if let (Some(map_path), Some(map)) = (&args.map_out, &map) {
        let fmt =
            ImageFormat::from_extension(map_path).map_err(|e| CliError::config(anyhow!("{e}")))?;
        imageio::write_image(&map.to_image(), map_path, fmt)
            .map_err(|e| CliError::runtime(anyhow!("{e}")))?;
        println!("wrote noise map {}", map_path.display());
    }

    if let Some(reference) = &args.reference {
        let clean = imageio::read_image(reference).map_err(|e| CliError::config(anyhow!("{e}")))?;
        let score = eval::psnr(&restored, &clean).map_err(|e| CliError::runtime(anyhow!("{e}")))?;
        println!("PSNR vs {}: {score} dB", reference.display());
    }
    Ok(())
}

pub struct EvaluateArgs {
    pub config: Option<PathBuf>,
    pub detector: PathBuf,
    pub denoiser: PathBuf,
    pub one_stage: PathBuf,
    pub test_dir: PathBuf,
    pub out: PathBuf,
    pub tau: f64,
    pub median_window: usize,
}

pub fn evaluate(args: EvaluateArgs) -> CmdResult {
    let cfg = load_config(args.config.as_deref())?;
    println!("resolved noise config:\n{}", toml_section(&cfg, "noise"));

    let det = load_checkpoint(&args.detector)?;
    let dru = load_checkpoint(&args.denoiser)?;
    let one = load_checkpoint(&args.one_stage)?;
    let test_set =
        Dataset::load_dir(&args.test_dir).map_err(|e| CliError::config(anyhow!("{e}")))?;

    let inputs = eval::EvalInputs {
        detector_spec: &det.spec,
        detector: &det.state,
        denoiser_spec: &dru.spec,
        denoiser: &dru.state,
        one_stage_spec: &one.spec,
        one_stage: &one.state,
        noise: &cfg.noise,
        tau: args.tau,
        median_window: args.median_window,
        config_hash: cfg.hash(),
    };
    let report =
        eval::evaluate(&inputs, &test_set).map_err(|e| CliError::runtime(anyhow!("{e}")))?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(CliError::runtime)?;
    fs::write(args.out.join("report.toml"), report.to_toml())
        .context("writing report.toml")
        .map_err(CliError::runtime)?;
    fs::write(args.out.join("report.txt"), report.table())
        .context("writing report.txt")
        .map_err(CliError::runtime)?;
    println!("{}", report.table());
    println!("report written to {}", args.out.display());
    Ok(())
}

pub fn gradcheck() -> CmdResult {
    let results =
        pepper_core::gradcheck::run_all().map_err(|e| CliError::runtime(anyhow!("{e}")))?;
    let mut failed = 0usize;
    for r in &results {
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!(
            "[{status}] {:<40} max rel err {:.3e} (tol {:.0e})",
            r.name, r.max_rel_err, r.tolerance
        );
        if !r.passed() {
            failed += 1;
        }
    }
    println!("{} checks, {} failed", results.len(), failed);
    if failed > 0 {
        return Err(CliError::runtime(anyhow!(
            "{failed} gradient checks failed"
        )));
    }
    Ok(())
}
