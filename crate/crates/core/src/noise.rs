//! Non-extreme salt-and-pepper corruption model.
//!
//! [`synthesize`] corrupts each pixel independently with probability
//! `density`, writing `salt_value` or `pepper_value` (by default the
//! non-extreme pair 239/16) and recording the hit in a ground-truth
//! [`NoiseMap`]. [`zero_noise`] applies the first-stage transform: every
//! map-marked pixel is forced to 0, clean pixels pass through untouched.
//!
//! Corruption draws come from a counter-based generator keyed by
//! `(seed, pixel index)`, so a given `(image, config)` pair always yields
//! the same corruption, independent of traversal order and platform.
//!
//! A clean pixel whose natural value happens to equal the salt or pepper
//! value is *not* marked as noise: noise is defined by the corruption
//! event, not by the value. That ambiguity is what makes detection a
//! learning problem.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Reserved counter indexes for per-image value draws (outside any
/// realistic pixel index).
const SALT_DRAW_INDEX: u64 = u64::MAX;
const PEPPER_DRAW_INDEX: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Fraction of pixels corrupted, in `[0, 1]`.
    pub density: f64,
    pub salt_value: u8,
    pub pepper_value: u8,
    /// Share of corrupted pixels that become salt, in `[0, 1]`.
    pub salt_fraction: f64,
    pub seed: u64,
    /// When set, each synthesized image draws its salt value uniformly
    /// from this inclusive range instead of `salt_value`.
    pub salt_range: Option<(u8, u8)>,
    /// Per-image pepper draw range, as above.
    pub pepper_range: Option<(u8, u8)>,
}

impl Default for NoiseConfig {
    /// 20% corruption with the non-extreme value pair (16, 239).
    fn default() -> Self {
        NoiseConfig {
            density: 0.2,
            salt_value: 239,
            pepper_value: 16,
            salt_fraction: 0.5,
            seed: 1,
            salt_range: None,
            pepper_range: None,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::Config(format!(
                "noise density must be in [0, 1], got {}",
                self.density
            )));
        }
        if !(0.0..=1.0).contains(&self.salt_fraction) {
            return Err(Error::Config(format!(
                "salt_fraction must be in [0, 1], got {}",
                self.salt_fraction
            )));
        }
        let min_salt = self.salt_range.map_or(self.salt_value, |(lo, _)| lo);
        let max_pepper = self.pepper_range.map_or(self.pepper_value, |(_, hi)| hi);
        if max_pepper >= min_salt {
            return Err(Error::Config(format!(
                "pepper value must stay below salt value, got pepper <= {max_pepper} vs salt >= {min_salt}"
            )));
        }
        for (name, range) in [
            ("salt_range", self.salt_range),
            ("pepper_range", self.pepper_range),
        ] {
            if let Some((lo, hi)) = range {
                if lo > hi {
                    return Err(Error::Config(format!("{name} is empty: ({lo}, {hi})")));
                }
            }
        }
        Ok(())
    }

    /// Derive a per-sample config: same corruption model, child seed.
    pub fn for_sample(&self, sample_index: u64) -> NoiseConfig {
        NoiseConfig {
            seed: rng::hash2(self.seed, sample_index),
            ..*self
        }
    }

    /// The (salt, pepper) values a synthesis under this config will use.
    fn resolve_values(&self) -> (u8, u8) {
        let salt = match self.salt_range {
            Some((lo, hi)) => draw_in_range(self.seed, SALT_DRAW_INDEX, lo, hi),
            None => self.salt_value,
        };
        let pepper = match self.pepper_range {
            Some((lo, hi)) => draw_in_range(self.seed, PEPPER_DRAW_INDEX, lo, hi),
            None => self.pepper_value,
        };
        (salt, pepper)
    }
}

fn draw_in_range(seed: u64, index: u64, lo: u8, hi: u8) -> u8 {
    let span = u64::from(hi) - u64::from(lo) + 1;
    lo + (rng::hash2(seed, index) % span) as u8
}

/// Binary grid marking corrupted pixels: 1 = noise, 0 = clean.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl NoiseMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "NoiseMap::new",
                format!("{} entries for {width}x{height}", width * height),
                format!("{}", data.len()),
            ));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Config("noise map entries must be 0 or 1".into()));
        }
        Ok(NoiseMap {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        NoiseMap {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| usize::from(v)).sum()
    }

    /// `[1, 1, h, w]` tensor of 0.0 / 1.0 (the detector's training target).
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .data
            .iter()
            .map(|&v| T::from_f64(f64::from(v)))
            .collect();
        Tensor::new(vec![1, 1, self.height, self.width], data).expect("entry count matches dims")
    }

    /// Render as an image with the conventional {0, 255} encoding.
    pub fn to_image(&self) -> Image {
        let pixels = self.data.iter().map(|&v| v * 255).collect();
        Image::new(self.width, self.height, pixels).expect("entry count matches dims")
    }

    /// Re-binarize a {0, 255}-rendered map image (anything >= 128 is 1).
    pub fn from_image(img: &Image) -> Self {
        NoiseMap {
            width: img.width(),
            height: img.height(),
            data: img.pixels().iter().map(|&p| u8::from(p >= 128)).collect(),
        }
    }
}

/// Corrupt `clean` under `cfg`. Returns the noisy image and the
/// ground-truth map of exactly the corrupted positions. Deterministic
/// under `(clean, cfg)`.
pub fn synthesize(clean: &Image, cfg: &NoiseConfig) -> Result<(Image, NoiseMap)> {
    cfg.validate()?;
    let (salt, pepper) = cfg.resolve_values();
    let mut noisy = clean.clone();
    let mut map = NoiseMap::zeros(clean.width(), clean.height());
    for (idx, px) in noisy.pixels_mut().iter_mut().enumerate() {
        let u = rng::counter_unit(cfg.seed, idx as u64);
        if u < cfg.density {
            // Second independent draw decides salt vs pepper.
            let v = rng::to_unit(rng::hash2(cfg.seed ^ 0xa5a5_a5a5_a5a5_a5a5, idx as u64));
            *px = if v < cfg.salt_fraction { salt } else { pepper };
            map.data[idx] = 1;
        }
    }
    Ok((noisy, map))
}

/// First-stage masking: noise pixels (map = 1) become 0, clean pixels pass
/// through unchanged.
pub fn zero_noise(noisy: &Image, map: &NoiseMap) -> Result<Image> {
    if noisy.width() != map.width() || noisy.height() != map.height() {
        return Err(Error::shape(
            "zero_noise",
            format!("map sized {}x{}", noisy.width(), noisy.height()),
            format!("{}x{}", map.width(), map.height()),
        ));
    }
    let mut out = noisy.clone();
    for (px, &m) in out.pixels_mut().iter_mut().zip(&map.data) {
        if m == 1 {
            *px = 0;
        }
    }
    Ok(out)
}

/// Binarize detector probabilities: 1 where `p > tau`.
pub fn threshold_map<T: Scalar>(probabilities: &Tensor<T>, tau: f64) -> Result<NoiseMap> {
    let (n, c, h, w) = probabilities.dims4("threshold_map")?;
    if n != 1 || c != 1 {
        return Err(Error::shape(
            "threshold_map",
            "a [1, 1, h, w] probability tensor",
            format!("{:?}", probabilities.shape()),
        ));
    }
    let tau = T::from_f64(tau);
    let data = probabilities
        .data()
        .iter()
        .map(|&p| u8::from(p > tau))
        .collect();
    NoiseMap::new(w, h, data)
}

/// Detection quality counts. Rates with an empty denominator are `None`
/// rather than NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlarmRates {
    /// FP / (clean-pixel count).
    pub false_alarm_rate: Option<f64>,
    /// FN / (noise-pixel count).
    pub missing_alarm_rate: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

impl AlarmRates {
    /// Build the rates from raw confusion counts.
    pub fn from_counts(tp: usize, fp: usize, r#fn: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                None
            } else {
                Some(num as f64 / den as f64)
            }
        };
        AlarmRates {
            false_alarm_rate: ratio(fp, fp + tn),
            missing_alarm_rate: ratio(r#fn, tp + r#fn),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + r#fn),
            true_positives: tp,
            false_positives: fp,
            false_negatives: r#fn,
            true_negatives: tn,
        }
    }

    /// Harmonic mean of precision and recall.
    pub fn f1(&self) -> Option<f64> {
        match (self.precision, self.recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        }
    }
}

/// Compare a predicted map against the ground truth.
pub fn alarm_rates(predicted: &NoiseMap, truth: &NoiseMap) -> Result<AlarmRates> {
    if predicted.width() != truth.width() || predicted.height() != truth.height() {
        return Err(Error::shape(
            "alarm_rates",
            format!("maps sized {}x{}", truth.width(), truth.height()),
            format!("{}x{}", predicted.width(), predicted.height()),
        ));
    }
    let (mut tp, mut fp, mut r#fn, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predicted.data.iter().zip(&truth.data) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => r#fn += 1,
            _ => tn += 1,
        }
    }
    Ok(AlarmRates::from_counts(tp, fp, r#fn, tn))
}

/// A patch-level view of synthesis, used by the training pipeline: corrupt
/// a `[0, 255]`-valued u8 buffer in place and return its map bits.
pub(crate) fn corrupt_buffer(pixels: &mut [u8], cfg: &NoiseConfig) -> Vec<u8> {
    let (salt, pepper) = cfg.resolve_values();
    let mut map = vec![0u8; pixels.len()];
    for (idx, px) in pixels.iter_mut().enumerate() {
        let u = rng::counter_unit(cfg.seed, idx as u64);
        if u < cfg.density {
            let v = rng::to_unit(rng::hash2(cfg.seed ^ 0xa5a5_a5a5_a5a5_a5a5, idx as u64));
            *px = if v < cfg.salt_fraction { salt } else { pepper };
            map[idx] = 1;
        }
    }
    map
}
