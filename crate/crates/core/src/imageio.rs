//! Grayscale image import/export.
//!
//! Two formats, both 8-bit single-channel: binary PGM (P5, maxval 255) and
//! grayscale PNG. Color inputs are rejected, never silently converted, and
//! no intensity rescaling ever happens in I/O. P5 output is bit-exact:
//! `P5 <w> <h> 255\n` followed by the raw rows.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::shape(
                "Image::new",
                format!("{} pixels for {width}x{height}", width * height),
                format!("{}", pixels.len()),
            ));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Image::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    /// `[1, 1, h, w]` tensor of raw intensities (0..=255).
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .pixels
            .iter()
            .map(|&p| T::from_f64(f64::from(p)))
            .collect();
        Tensor::new(vec![1, 1, self.height, self.width], data).expect("pixel count matches dims")
    }

    /// `[1, 1, h, w]` tensor normalized to `[0, 1]` (divided by 255).
    pub fn to_unit_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .pixels
            .iter()
            .map(|&p| T::from_f64(f64::from(p) / 255.0))
            .collect();
        Tensor::new(vec![1, 1, self.height, self.width], data).expect("pixel count matches dims")
    }

    /// De-normalize a `[1, 1, h, w]` tensor in `[0, 1]` back to intensities:
    /// clamp to `[0, 1]`, scale by 255, round half-up.
    pub fn from_unit_tensor<T: Scalar>(tensor: &Tensor<T>) -> Result<Self> {
        let (n, c, h, w) = tensor.dims4("Image::from_unit_tensor")?;
        if n != 1 || c != 1 {
            return Err(Error::shape(
                "Image::from_unit_tensor",
                "a [1, 1, h, w] tensor",
                format!("{:?}", tensor.shape()),
            ));
        }
        let pixels = tensor
            .data()
            .iter()
            .map(|&v| {
                let unit = v.as_f64().clamp(0.0, 1.0);
                (unit * 255.0 + 0.5).floor() as u8
            })
            .collect();
        Image::new(w, h, pixels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    pub fn from_extension(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("pgm") => Ok(ImageFormat::Pgm),
            Some("png") => Ok(ImageFormat::Png),
            other => Err(Error::Config(format!(
                "cannot infer image format from extension {:?} of {}; use .pgm or .png",
                other.unwrap_or(""),
                path.display()
            ))),
        }
    }
}

/// Read a binary PGM (P5, maxval 255) or 8-bit grayscale PNG, losslessly.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.starts_with(b"P5") {
        parse_pgm(&bytes).map_err(|reason| Error::format(path.display().to_string(), reason))
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        parse_png(&bytes).map_err(|reason| Error::format(path.display().to_string(), reason))
    } else {
        Err(Error::format(
            path.display().to_string(),
            "unsupported format (expected binary PGM `P5` or PNG)",
        ))
    }
}

/// Write as PGM (bit-exact P5 layout) or 8-bit grayscale PNG.
pub fn write_image(img: &Image, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        ImageFormat::Pgm => {
            let mut out = format!("P5 {} {} 255\n", img.width, img.height).into_bytes();
            out.extend_from_slice(&img.pixels);
            fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
        }
        ImageFormat::Png => image::save_buffer_with_format(
            path,
            &img.pixels,
            img.width as u32,
            img.height as u32,
            image::ExtendedColorType::L8,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::format(path.display().to_string(), e.to_string())),
    }
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 2; // past "P5"
    let mut fields = [0usize; 3];
    for field in &mut fields {
        *field = next_pgm_token(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format!("PGM maxval must be 255, got {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("PGM header must end with a whitespace byte".into()),
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| "PGM dimensions overflow".to_string())?;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(format!(
            "truncated PGM: expected {expected} raster bytes, found {}",
            raster.len()
        ));
    }
    if raster.len() > expected {
        return Err(format!(
            "PGM has {} trailing bytes after the raster",
            raster.len() - expected
        ));
    }
    Image::new(width, height, raster.to_vec()).map_err(|e| e.to_string())
}

/// Next whitespace-delimited decimal token, skipping `#` comments.
fn next_pgm_token(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err("malformed PGM header (expected a decimal field)".into());
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| "malformed PGM header".to_string())?
        .parse::<usize>()
        .map_err(|e| format!("malformed PGM header field: {e}"))
}

fn parse_png(bytes: &[u8]) -> std::result::Result<Image, String> {
    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| format!("PNG decode failed: {e}"))?;
    match decoded {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Image::new(w, h, buf.into_raw()).map_err(|e| e.to_string())
        }
        other => Err(format!(
            "PNG must be 8-bit grayscale without alpha, got {:?}",
            other.color()
        )),
    }
}
