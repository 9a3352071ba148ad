//! PSNR and the evaluation report.
//!
//! [`evaluate`] corrupts each held-out clean image under a per-image child
//! seed, runs the two-stage path, the one-stage baseline, the median
//! filter, and the two-stage path with the ground-truth (oracle) map, and
//! collects per-image PSNR plus detector alarm rates into an
//! [`EvalReport`]. The report serializes as TOML and pretty-prints as a
//! table; identical inputs always produce the identical report.

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::models::{NetworkSpec, NetworkState};
use crate::noise::{self, AlarmRates, NoiseConfig};

use super::data::Dataset;
use super::infer;

/// PSNR in dB, or the defined marker for identical images (where the MSE
/// is zero and the ratio is unbounded).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    Identical,
}

impl Psnr {
    pub fn db(&self) -> Option<f64> {
        match *self {
            Psnr::Db(v) => Some(v),
            Psnr::Identical => None,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.4}"),
            Psnr::Identical => write!(f, "identical"),
        }
    }
}

/// Peak signal-to-noise ratio: `10 * log10(255^2 / MSE)`.
pub fn psnr(a: &Image, b: &Image) -> Result<Psnr> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(
            "psnr",
            format!("{}x{}", a.width(), a.height()),
            format!("{}x{}", b.width(), b.height()),
        ));
    }
    let n = a.pixels().len() as f64;
    let sse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(Psnr::Identical);
    }
    let mse = sse / n;
    Ok(Psnr::Db(10.0 * (255.0 * 255.0 / mse).log10()))
}

/// Per-image evaluation row.
#[derive(Debug, Clone)]
pub struct ImageEval {
    pub name: String,
    pub noisy: Psnr,
    pub two_stage: Psnr,
    pub one_stage: Psnr,
    pub median: Psnr,
    pub oracle_two_stage: Psnr,
    pub rates: AlarmRates,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub images: Vec<ImageEval>,
    pub mean_two_stage: Option<f64>,
    pub mean_one_stage: Option<f64>,
    pub mean_median: Option<f64>,
    pub mean_oracle_two_stage: Option<f64>,
    pub tau: f64,
    pub median_window: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl EvalReport {
    /// Machine-parseable TOML. PSNR values are strings: a decimal dB
    /// figure or `"identical"`.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        out.push_str("[run]\n");
        out.push_str(&format!("config_hash = \"{}\"\n", self.config_hash));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("tau = {}\n", self.tau));
        out.push_str(&format!("median_window = {}\n", self.median_window));
        out.push_str("\n[mean_psnr]\n");
        let mean = |v: Option<f64>| v.map_or("\"identical\"".to_string(), |m| format!("{m:.4}"));
        out.push_str(&format!("two_stage = {}\n", mean(self.mean_two_stage)));
        out.push_str(&format!("one_stage = {}\n", mean(self.mean_one_stage)));
        out.push_str(&format!("median = {}\n", mean(self.mean_median)));
        out.push_str(&format!(
            "oracle_two_stage = {}\n",
            mean(self.mean_oracle_two_stage)
        ));
        for img in &self.images {
            out.push_str(&format!("\n[[image]]\nname = \"{}\"\n", img.name));
            out.push_str(&format!("psnr_noisy = \"{}\"\n", img.noisy));
            out.push_str(&format!("psnr_two_stage = \"{}\"\n", img.two_stage));
            out.push_str(&format!("psnr_one_stage = \"{}\"\n", img.one_stage));
            out.push_str(&format!("psnr_median = \"{}\"\n", img.median));
            out.push_str(&format!(
                "psnr_oracle_two_stage = \"{}\"\n",
                img.oracle_two_stage
            ));
            let rate =
                |r: Option<f64>| r.map_or("\"undefined\"".to_string(), |v| format!("{v:.6}"));
            out.push_str(&format!(
                "false_alarm_rate = {}\n",
                rate(img.rates.false_alarm_rate)
            ));
            out.push_str(&format!(
                "missing_alarm_rate = {}\n",
                rate(img.rates.missing_alarm_rate)
            ));
            out.push_str(&format!("precision = {}\n", rate(img.rates.precision)));
            out.push_str(&format!("recall = {}\n", rate(img.rates.recall)));
            out.push_str(&format!("f1 = {}\n", rate(img.rates.f1())));
        }
        out
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>9} {:>10} {:>10} {:>9} {:>10} {:>8} {:>8}\n",
            "image", "noisy", "two-stage", "one-stage", "median", "oracle2st", "FAR", "MAR"
        ));
        let rate = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        for img in &self.images {
            out.push_str(&format!(
                "{:<16} {:>9} {:>10} {:>10} {:>9} {:>10} {:>8} {:>8}\n",
                img.name,
                img.noisy.to_string(),
                img.two_stage.to_string(),
                img.one_stage.to_string(),
                img.median.to_string(),
                img.oracle_two_stage.to_string(),
                rate(img.rates.false_alarm_rate),
                rate(img.rates.missing_alarm_rate),
            ));
        }
        let mean = |v: Option<f64>| v.map_or("n/a".to_string(), |m| format!("{m:.4}"));
        out.push_str(&format!(
            "{:<16} {:>9} {:>10} {:>10} {:>9} {:>10}\n",
            "mean",
            "",
            mean(self.mean_two_stage),
            mean(self.mean_one_stage),
            mean(self.mean_median),
            mean(self.mean_oracle_two_stage),
        ));
        out
    }
}

/// Everything `evaluate` needs besides the test set.
pub struct EvalInputs<'a> {
    pub detector_spec: &'a NetworkSpec,
    pub detector: &'a NetworkState<f32>,
    pub denoiser_spec: &'a NetworkSpec,
    pub denoiser: &'a NetworkState<f32>,
    pub one_stage_spec: &'a NetworkSpec,
    pub one_stage: &'a NetworkState<f32>,
    pub noise: &'a NoiseConfig,
    pub tau: f64,
    pub median_window: usize,
    pub config_hash: String,
}

/// Evaluate all methods over a test set of clean images.
pub fn evaluate(inputs: &EvalInputs<'_>, test_set: &Dataset) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::Config("evaluation test set is empty".into()));
    }
    inputs.noise.validate()?;

    let mut images = Vec::with_capacity(test_set.len());
    for (idx, (name, clean)) in test_set.names().iter().zip(test_set.images()).enumerate() {
        let cfg = inputs.noise.for_sample(idx as u64);
        let (noisy, truth_map) = noise::synthesize(clean, &cfg)?;

        let (restored, predicted_map) = infer::denoise_two_stage(
            inputs.detector_spec,
            inputs.detector,
            inputs.denoiser_spec,
            inputs.denoiser,
            &noisy,
            inputs.tau,
        )?;
        let oracle_restored =
            infer::denoise_with_map(inputs.denoiser_spec, inputs.denoiser, &noisy, &truth_map)?;
        let one_staged = infer::denoise_one_stage(inputs.one_stage_spec, inputs.one_stage, &noisy)?;
        let filtered = infer::median_filter(&noisy, inputs.median_window)?;
        let rates = noise::alarm_rates(&predicted_map, &truth_map)?;

        images.push(ImageEval {
            name: name.clone(),
            noisy: psnr(&noisy, clean)?,
            two_stage: psnr(&restored, clean)?,
            one_stage: psnr(&one_staged, clean)?,
            median: psnr(&filtered, clean)?,
            oracle_two_stage: psnr(&oracle_restored, clean)?,
            rates,
        });
    }

    let mean_of = |get: &dyn Fn(&ImageEval) -> Psnr| {
        let vals: Vec<f64> = images.iter().filter_map(|i| get(i).db()).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };

    Ok(EvalReport {
        mean_two_stage: mean_of(&|i| i.two_stage),
        mean_one_stage: mean_of(&|i| i.one_stage),
        mean_median: mean_of(&|i| i.median),
        mean_oracle_two_stage: mean_of(&|i| i.oracle_two_stage),
        images,
        tau: inputs.tau,
        median_window: inputs.median_window,
        seed: inputs.noise.seed,
        config_hash: inputs.config_hash.clone(),
    })
}
