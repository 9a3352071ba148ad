//! `pepper` — train, run and evaluate the two-stage salt-and-pepper
//! denoiser from the command line.
//!
//! Exit codes: 0 success, 2 bad usage or configuration, 1 runtime failure.
//! Every run prints its resolved configuration so outputs stay
//! attributable; all state flows through flags and the config file
//! (environment variables are never consulted).

mod commands;

use clap::{ArgAction, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pepper",
    about = "Two-stage non-extreme salt-and-pepper denoiser",
    version
)]
struct Cli {
    /// Worker threads for tensor ops (results are identical either way).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Force single-threaded mode (same as --threads 1).
    #[arg(long, global = true, action = ArgAction::SetTrue)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct TrainFlags {
    /// TOML config file; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of clean training images.
    #[arg(long)]
    train_dir: Option<PathBuf>,
    /// Output directory for checkpoints and the loss history.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    patches_per_epoch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Noise density in [0, 1].
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    salt: Option<u8>,
    #[arg(long)]
    pepper: Option<u8>,
    #[arg(long)]
    salt_fraction: Option<f64>,
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Detector penalty weights (detector stage only).
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    /// Optimizer: adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt a directory of clean images; write noisy images and maps.
    Synthesize {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of clean images.
        #[arg(long, value_name = "DIR")]
        r#in: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_noisy: PathBuf,
        /// Ground-truth noise maps, rendered {0, 255}.
        #[arg(long, value_name = "DIR")]
        out_maps: PathBuf,
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        salt: Option<u8>,
        #[arg(long)]
        pepper: Option<u8>,
        #[arg(long)]
        salt_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output format: pgm or png.
        #[arg(long, default_value = "pgm")]
        format: String,
    },
    /// Train the stage-one noise-position detector.
    TrainDetector(TrainFlags),
    /// Train the stage-two restorer on zero-dot corruption.
    TrainDenoiser(TrainFlags),
    /// Train the one-stage baseline restorer on raw noisy images.
    TrainOneStage(TrainFlags),
    /// Restore images with the two-stage pipeline (or --one-stage).
    Denoise {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Detector checkpoint (two-stage path).
        #[arg(long, required_unless_present = "one_stage")]
        detector: Option<PathBuf>,
        /// Restorer checkpoint (two-stage path).
        #[arg(long, required_unless_present = "one_stage")]
        denoiser: Option<PathBuf>,
        /// One-stage restorer checkpoint; replaces the two-stage path.
        #[arg(long, conflicts_with_all = ["detector", "denoiser"])]
        one_stage: Option<PathBuf>,
        /// Noisy input image.
        #[arg(long, value_name = "FILE")]
        r#in: PathBuf,
        /// Restored output image.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Clean reference; when given, the restored PSNR is printed.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Detection threshold.
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Also write the predicted noise map here ({0, 255} rendering).
        #[arg(long)]
        map_out: Option<PathBuf>,
    },
    /// Evaluate all methods over a directory of clean test images.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        one_stage: PathBuf,
        /// Directory of clean held-out images.
        #[arg(long)]
        test_dir: PathBuf,
        /// Report directory (report.toml + report.txt).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long, default_value_t = 3)]
        median_window: usize,
    },
    /// Run the finite-difference gradient suite and print pass/fail.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = if cli.deterministic {
        1
    } else {
        cli.threads.max(1)
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("error: failed to set up {threads} worker threads: {e}");
        return ExitCode::from(1);
    }

    let result = match cli.command {
        Command::Synthesize {
            config,
            r#in,
            out_noisy,
            out_maps,
            density,
            salt,
            pepper,
            salt_fraction,
            seed,
            format,
        } => commands::synthesize(
            config.as_deref(),
            &r#in,
            &out_noisy,
            &out_maps,
            commands::NoiseOverrides {
                density,
                salt,
                pepper,
                salt_fraction,
                seed,
            },
            &format,
        ),
        Command::TrainDetector(flags) => {
            commands::train(pepper_core::pipeline::Stage::Detector, &flags)
        }
        Command::TrainDenoiser(flags) => {
            commands::train(pepper_core::pipeline::Stage::Denoiser, &flags)
        }
        Command::TrainOneStage(flags) => {
            commands::train(pepper_core::pipeline::Stage::OneStage, &flags)
        }
        Command::Denoise {
            config,
            detector,
            denoiser,
            one_stage,
            r#in,
            out,
            reference,
            tau,
            map_out,
        } => commands::denoise(commands::DenoiseArgs {
            config: config.as_deref().map(PathBuf::from),
            detector,
            denoiser,
            one_stage,
            input: r#in,
            output: out,
            reference,
            tau,
            map_out,
        }),
        Command::Evaluate {
            config,
            detector,
            denoiser,
            one_stage,
            test_dir,
            out,
            tau,
            median_window,
        } => commands::evaluate(commands::EvaluateArgs {
            config: config.as_deref().map(PathBuf::from),
            detector,
            denoiser,
            one_stage,
            test_dir,
            out,
            tau,
            median_window,
        }),
        Command::Gradcheck => commands::gradcheck(),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
