//! Synthetic grayscale sample images.
//!
//! Training and evaluation read plain directories of grayscale images; this
//! module generates a small deterministic corpus to fill such directories
//! for tests, demos and the desk-scale benchmark. Images mix smooth
//! gradients, hard-edged shapes, stripes and two octaves of value noise, so
//! they carry the edges and fine texture that separate a learned restorer
//! from a median filter.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::imageio::{self, Image, ImageFormat};
use crate::rng::SplitMix64;

/// Deterministic pseudo-natural image for `(width, height, seed)`.
pub fn sample_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = SplitMix64::new(seed);
    let mut canvas = vec![0.0f64; width * height];

    // Smooth background: oriented gradient.
    let angle = rng.next_range(0.0, std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let base = rng.next_range(60.0, 180.0);
    let span = rng.next_range(30.0, 90.0);
    for y in 0..height {
        for x in 0..width {
            let t = (x as f64 * dx + y as f64 * dy) / (width.max(height) as f64);
            canvas[y * width + x] = base + span * t;
        }
    }

    // Low-frequency value noise gives broad lighting variation.
    add_value_noise(
        &mut canvas,
        width,
        height,
        48,
        rng.next_range(15.0, 35.0),
        &mut rng,
    );

    // Hard-edged shapes: ellipses and rectangles at distinct intensities.
    let shapes = 6 + rng.next_below(6);
    for _ in 0..shapes {
        let level = rng.next_range(30.0, 225.0);
        if rng.next_bool() {
            let cx = rng.next_range(0.0, width as f64);
            let cy = rng.next_range(0.0, height as f64);
            let rx = rng.next_range(8.0, width as f64 / 4.0);
            let ry = rng.next_range(8.0, height as f64 / 4.0);
            for y in 0..height {
                for x in 0..width {
                    let ex = (x as f64 - cx) / rx;
                    let ey = (y as f64 - cy) / ry;
                    if ex * ex + ey * ey <= 1.0 {
                        canvas[y * width + x] = level;
                    }
                }
            }
        } else {
            let x0 = rng.next_below(width);
            let y0 = rng.next_below(height);
            let w = 8 + rng.next_below(width / 3);
            let h = 8 + rng.next_below(height / 3);
            for y in y0..(y0 + h).min(height) {
                for x in x0..(x0 + w).min(width) {
                    canvas[y * width + x] = level;
                }
            }
        }
    }

    // One striped band: thin alternating lines, the texture a median
    // filter smears first.
    let band_top = rng.next_below(height / 2);
    let band_height = height / 6 + rng.next_below(height / 6);
    let stripe = 2 + rng.next_below(3);
    let (lo, hi) = {
        let a = rng.next_range(40.0, 120.0);
        (a, a + rng.next_range(50.0, 100.0))
    };
    for y in band_top..(band_top + band_height).min(height) {
        for x in 0..width {
            canvas[y * width + x] = if (x / stripe) % 2 == 0 { lo } else { hi };
        }
    }

    // Fine texture everywhere.
    add_value_noise(
        &mut canvas,
        width,
        height,
        6,
        rng.next_range(6.0, 12.0),
        &mut rng,
    );

    let pixels = canvas
        .into_iter()
        .map(|v| v.clamp(0.0, 255.0).round() as u8)
        .collect();
    Image::new(width, height, pixels).expect("canvas matches dims")
}

/// Bilinear value noise: a coarse random grid interpolated over the canvas.
fn add_value_noise(
    canvas: &mut [f64],
    width: usize,
    height: usize,
    cell: usize,
    amplitude: f64,
    rng: &mut SplitMix64,
) {
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.next_range(-1.0, 1.0)).collect();
    for y in 0..height {
        let gy = y as f64 / cell as f64;
        let y0 = gy.floor() as usize;
        let fy = gy - y0 as f64;
        for x in 0..width {
            let gx = x as f64 / cell as f64;
            let x0 = gx.floor() as usize;
            let fx = gx - x0 as f64;
            let v00 = grid[y0 * gw + x0];
            let v01 = grid[y0 * gw + x0 + 1];
            let v10 = grid[(y0 + 1) * gw + x0];
            let v11 = grid[(y0 + 1) * gw + x0 + 1];
            let top = v00 + (v01 - v00) * fx;
            let bot = v10 + (v11 - v10) * fx;
            canvas[y * width + x] += amplitude * (top + (bot - top) * fy);
        }
    }
}

/// Write `count` sample images into `dir` as `sample_<i>.pgm`; returns the
/// paths in index order.
pub fn generate_corpus(
    dir: impl AsRef<Path>,
    count: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)
        .map_err(|e| crate::error::Error::io(dir.display().to_string(), e))?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = sample_image(width, height, crate::rng::hash2(seed, i as u64));
        let path = dir.join(format!("sample_{i:02}.pgm"));
        imageio::write_image(&img, &path, ImageFormat::Pgm)?;
        paths.push(path);
    }
    Ok(paths)
}
