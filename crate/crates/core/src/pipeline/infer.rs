//! Inference paths and the classical baseline.
//!
//! The two-stage path: detector probabilities -> thresholded noise map ->
//! zero the flagged pixels -> DRUnet restoration. Images whose sides are
//! not divisible by the DRUnet's downsampling factor are reflect-padded to
//! the next multiple and cropped back afterwards.

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::models::{self, NetworkSpec, NetworkState};
use crate::noise::{self, NoiseMap};
use crate::scalar::Scalar;

/// Mirror-reflect an index into `[0, len)` without repeating the edge
/// sample (`-1 -> 1`, `len -> len - 2`).
fn reflect(idx: isize, len: usize) -> usize {
    let len = len as isize;
    let mut i = idx;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= len {
            i = 2 * (len - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Reflect-pad on the right/bottom to reach `multiple`-divisible sides.
fn pad_to_multiple(img: &Image, multiple: usize) -> Image {
    let w = img.width();
    let h = img.height();
    let pw = w.div_ceil(multiple) * multiple;
    let ph = h.div_ceil(multiple) * multiple;
    if (pw, ph) == (w, h) {
        return img.clone();
    }
    let mut pixels = Vec::with_capacity(pw * ph);
    for y in 0..ph {
        let sy = reflect(y as isize, h);
        for x in 0..pw {
            let sx = reflect(x as isize, w);
            pixels.push(img.pixel(sx, sy));
        }
    }
    Image::new(pw, ph, pixels).expect("padded dims are consistent")
}

fn crop(img: &Image, w: usize, h: usize) -> Image {
    if (img.width(), img.height()) == (w, h) {
        return img.clone();
    }
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            pixels.push(img.pixel(x, y));
        }
    }
    Image::new(w, h, pixels).expect("crop dims are consistent")
}

/// Run the restorer over an image of any size: reflect-pad to the
/// network's divisor, forward, crop, de-normalize.
pub fn restore_zeroed<T: Scalar>(
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    input: &Image,
) -> Result<Image> {
    let padded = pad_to_multiple(input, spec.divisor());
    let unit = padded.to_unit_tensor::<T>();
    let out = models::forward_inference(spec, state, &unit)?;
    let restored_padded = Image::from_unit_tensor(&out)?;
    Ok(crop(&restored_padded, input.width(), input.height()))
}

/// Two-stage denoising: detect, zero, restore. Returns the restored image
/// and the thresholded noise map.
pub fn denoise_two_stage<T: Scalar>(
    detector_spec: &NetworkSpec,
    detector: &NetworkState<T>,
    denoiser_spec: &NetworkSpec,
    denoiser: &NetworkState<T>,
    noisy: &Image,
    tau: f64,
) -> Result<(Image, NoiseMap)> {
    let unit = noisy.to_unit_tensor::<T>();
    let probs = models::forward_inference(detector_spec, detector, &unit)?;
    let map = noise::threshold_map(&probs, tau)?;
    let restored = denoise_with_map(denoiser_spec, denoiser, noisy, &map)?;
    Ok((restored, map))
}

/// Second stage alone, with a caller-supplied (e.g. ground-truth) map.
pub fn denoise_with_map<T: Scalar>(
    denoiser_spec: &NetworkSpec,
    denoiser: &NetworkState<T>,
    noisy: &Image,
    map: &NoiseMap,
) -> Result<Image> {
    let zeroed = noise::zero_noise(noisy, map)?;
    restore_zeroed(denoiser_spec, denoiser, &zeroed)
}

/// One-stage baseline: the restorer applied directly to the noisy image.
pub fn denoise_one_stage<T: Scalar>(
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    noisy: &Image,
) -> Result<Image> {
    restore_zeroed(spec, state, noisy)
}

/// Median filter with an odd square window and reflected edges.
pub fn median_filter(noisy: &Image, window: usize) -> Result<Image> {
    if window % 2 == 0 || window < 3 {
        return Err(Error::Config(format!(
            "median window must be odd and >= 3, got {window}"
        )));
    }
    let r = (window / 2) as isize;
    let (w, h) = (noisy.width(), noisy.height());
    let mut out = Vec::with_capacity(w * h);
    let mut neighborhood = Vec::with_capacity(window * window);
    for y in 0..h as isize {
        for x in 0..w as isize {
            neighborhood.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    neighborhood.push(noisy.pixel(reflect(x + dx, w), reflect(y + dy, h)));
                }
            }
            neighborhood.sort_unstable();
            out.push(neighborhood[neighborhood.len() / 2]);
        }
    }
    Image::new(w, h, out)
}
