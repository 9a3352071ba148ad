//! Datasets and patch sampling.
//!
//! A dataset is just a directory of grayscale images, loaded in filename
//! order so runs are reproducible. Training draws random square crops with
//! random horizontal/vertical flips from a seeded stream.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::{self, Image};
use crate::rng::SplitMix64;

#[derive(Debug, Clone)]
pub struct Dataset {
    names: Vec<String>,
    images: Vec<Image>,
}

impl Dataset {
    /// Load every `.pgm`/`.png` file in `dir`, sorted by filename.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let entries =
            std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let mut files: Vec<_> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension()
                        .and_then(|e| e.to_str())
                        .map(str::to_ascii_lowercase)
                        .as_deref(),
                    Some("pgm") | Some("png")
                )
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Config(format!(
                "no .pgm/.png images found in {}",
                dir.display()
            )));
        }
        let mut names = Vec::with_capacity(files.len());
        let mut images = Vec::with_capacity(files.len());
        for path in files {
            names.push(
                path.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
            images.push(imageio::read_image(&path)?);
        }
        Ok(Dataset { names, images })
    }

    pub fn from_images(names: Vec<String>, images: Vec<Image>) -> Result<Self> {
        if names.len() != images.len() {
            return Err(Error::Config("dataset names/images length mismatch".into()));
        }
        if images.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        Ok(Dataset { names, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    /// One random clean patch: seeded crop plus flips.
    pub fn sample_patch(&self, patch: usize, rng: &mut SplitMix64) -> Result<Image> {
        let idx = rng.next_below(self.images.len());
        let img = &self.images[idx];
        if img.width() < patch || img.height() < patch {
            return Err(Error::Config(format!(
                "image {} ({}x{}) is smaller than the patch size {patch}",
                self.names[idx],
                img.width(),
                img.height()
            )));
        }
        let x0 = rng.next_below(img.width() - patch + 1);
        let y0 = rng.next_below(img.height() - patch + 1);
        let flip_h = rng.next_bool();
        let flip_v = rng.next_bool();

        let mut pixels = Vec::with_capacity(patch * patch);
        for row in 0..patch {
            let src_row = if flip_v { patch - 1 - row } else { row };
            for col in 0..patch {
                let src_col = if flip_h { patch - 1 - col } else { col };
                pixels.push(img.pixel(x0 + src_col, y0 + src_row));
            }
        }
        Image::new(patch, patch, pixels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    #[test]
    fn load_dir_sorts_and_reads() {
        let dir = std::env::temp_dir().join("pepper_dataset_test");
        corpus::generate_corpus(&dir, 4, 48, 40, 3).unwrap();
        let ds = Dataset::load_dir(&dir).unwrap();
        assert_eq!(ds.len(), 4);
        assert!(ds.names().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(ds.images()[0].width(), 48);
    }

    #[test]
    fn missing_images_error() {
        let dir = std::env::temp_dir().join("pepper_dataset_empty");
        std::fs::create_dir_all(&dir).unwrap();
        assert!(Dataset::load_dir(&dir).is_err());
    }

    #[test]
    fn patches_are_reproducible_and_in_bounds() {
        let dir = std::env::temp_dir().join("pepper_dataset_patches");
        corpus::generate_corpus(&dir, 2, 64, 64, 5).unwrap();
        let ds = Dataset::load_dir(&dir).unwrap();
        let mut a = SplitMix64::new(11);
        let mut b = SplitMix64::new(11);
        for _ in 0..20 {
            let pa = ds.sample_patch(16, &mut a).unwrap();
            let pb = ds.sample_patch(16, &mut b).unwrap();
            assert_eq!(pa, pb);
            assert_eq!((pa.width(), pa.height()), (16, 16));
        }
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let dir = std::env::temp_dir().join("pepper_dataset_oversize");
        corpus::generate_corpus(&dir, 1, 32, 32, 5).unwrap();
        let ds = Dataset::load_dir(&dir).unwrap();
        let mut rng = SplitMix64::new(1);
        assert!(ds.sample_patch(64, &mut rng).is_err());
    }
}
