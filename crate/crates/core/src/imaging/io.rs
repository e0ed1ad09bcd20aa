use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader, RgbImage};

use super::{GrayMap, Image, MapKind};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Png,
    Jpeg,
}

impl OutputFormat {
    pub fn mime(self) -> &'static str {
        match self {
            OutputFormat::Png => "image/png",
            OutputFormat::Jpeg => "image/jpeg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "png" => Some(OutputFormat::Png),
            "jpeg" | "jpg" => Some(OutputFormat::Jpeg),
            _ => None,
        }
    }
}

fn decode_dynamic(bytes: &[u8], label: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::Decode {
            path: label.to_path_buf(),
            reason: e.to_string(),
        })?;
    reader.decode().map_err(|e| Error::Decode {
        path: label.to_path_buf(),
        reason: e.to_string(),
    })
}

fn is_16bit(img: &DynamicImage) -> bool {
    matches!(
        img,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    )
}

fn to_image(img: DynamicImage) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = w * h;
    let mut data = vec![0.0f32; 3 * n];
    if is_16bit(&img) {
        let rgb = img.to_rgb16();
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * n + i] = px.0[c] as f32 / 65535.0;
            }
        }
    } else {
        let rgb = img.to_rgb8();
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * n + i] = px.0[c] as f32 / 255.0;
            }
        }
    }
    Image::from_planar(w, h, data)
}

/// Decodes PNG/JPEG bytes. `label` names the source in error messages.
pub fn decode_image(bytes: &[u8], label: &Path) -> Result<Image> {
    to_image(decode_dynamic(bytes, label)?)
}

/// Loads an 8- or 16-bit raster as RGB in `[0, 1]`. Grayscale is
/// replicated across channels and alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path)
}

/// Loads a single-channel map (e.g. a region mask, 255 = 1.0). Colour
/// inputs are reduced to luma.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gray(&bytes, path)
}

pub fn decode_gray(bytes: &[u8], label: &Path) -> Result<GrayMap> {
    let img = decode_dynamic(bytes, label)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = if is_16bit(&img) {
        img.to_luma16().pixels().map(|p| p.0[0] as f32 / 65535.0).collect()
    } else {
        img.to_luma8().pixels().map(|p| p.0[0] as f32 / 255.0).collect()
    };
    GrayMap::new(w, h, values, MapKind::Luminance)
}

/// Grayscale mask where 255 means full coverage.
pub fn decode_mask(bytes: &[u8], label: &Path) -> Result<GrayMap> {
    let mut m = decode_gray(bytes, label)?;
    m.kind = MapKind::Mask;
    Ok(m)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<GrayMap> {
    let mut m = load_gray(path)?;
    m.kind = MapKind::Mask;
    Ok(m)
}

/// Quantises to 8 bits with round-half-up.
fn to_rgb8(img: &Image) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let data = img.planar();
    let mut buf = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in 0..3 {
            let v = (data[c * n + i] as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0);
            buf.push(v as u8);
        }
    }
    RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized for image")
}

pub fn encode_image(img: &Image, format: OutputFormat) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    let fmt = match format {
        OutputFormat::Png => ImageFormat::Png,
        OutputFormat::Jpeg => ImageFormat::Jpeg,
    };
    to_rgb8(img)
        .write_to(&mut out, fmt)
        .map_err(|e| Error::arg(format!("image encoding failed: {e}")))?;
    Ok(out.into_inner())
}

/// Writes an 8-bit RGB file; the format follows the extension (PNG unless
/// it is `.jpg`/`.jpeg`).
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = path
        .extension()
        .and_then(|e| e.to_str())
        .and_then(OutputFormat::parse)
        .unwrap_or(OutputFormat::Png);
    write_atomic(path, &encode_image(img, format)?)
}
