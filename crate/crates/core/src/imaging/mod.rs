//! RGB rasters, grayscale maps and the pure-image structure primitives.

mod edge;
mod io;
mod laplacian;
mod resize;
mod ssim;

pub use edge::{edge_map, sobel_edges, EdgeBackend, HedNet, HED_FILE};
pub use io::{
    decode_gray, decode_image, decode_mask, encode_image, load_gray, load_image, load_mask, save_image,
    OutputFormat,
};
pub use laplacian::{laplacian, laplacian_matrix, LAPLACIAN_KERNEL};
pub use resize::{random_crop, random_crop_with, resize_smaller_dim, smaller_dim_size};
pub use ssim::{ssim, ssim_gray, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Luma weights applied to (R, G, B).
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// An RGB raster with values in `[0, 1]`, stored as three planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image from planar RGB data, rejecting values that are not
    /// finite or fall outside `[0, 1]`.
    pub fn from_planar(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim("image dimensions must be positive"));
        }
        if data.len() != 3 * width * height {
            return Err(Error::dim(format!(
                "expected {} samples for {width}x{height} RGB, got {}",
                3 * width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::arg(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let n = width * height;
        let mut data = Vec::with_capacity(3 * n);
        for v in rgb {
            data.extend(std::iter::repeat_n(v.clamp(0.0, 1.0), n));
        }
        Image {
            width,
            height,
            data,
        }
    }

    /// Builds an image from a per-pixel function returning RGB.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Self {
        let n = width * height;
        let mut data = vec![0.0; 3 * n];
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                for c in 0..3 {
                    data[c * n + y * width + x] = px[c].clamp(0.0, 1.0);
                }
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    /// Converts a 3-channel tensor, clamping into `[0, 1]` (NaN maps to 0).
    pub fn from_tensor_clamped<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        if t.c != 3 {
            return Err(Error::dim(format!("expected 3 channels, got {}", t.c)));
        }
        let data = t
            .data
            .iter()
            .map(|v| {
                let v = v.to_f32().unwrap_or(0.0);
                if v.is_nan() {
                    0.0
                } else {
                    v.clamp(0.0, 1.0)
                }
            })
            .collect();
        Image::from_planar(t.w, t.h, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// (height, width)
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn planar(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let n = self.width * self.height;
        let i = y * self.width + x;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            c: 3,
            h: self.height,
            w: self.width,
            data: self.data.iter().map(|&v| T::lit(v as f64)).collect(),
        }
    }

    pub fn channel_map(&self, c: usize) -> GrayMap {
        GrayMap {
            width: self.width,
            height: self.height,
            values: self.channel(c).to_vec(),
            kind: MapKind::Luminance,
            backend: None,
        }
    }

    pub fn luminance(&self) -> GrayMap {
        let n = self.width * self.height;
        let values = (0..n)
            .map(|i| {
                (LUMA[0] * self.data[i] as f64
                    + LUMA[1] * self.data[n + i] as f64
                    + LUMA[2] * self.data[2 * n + i] as f64) as f32
            })
            .collect();
        GrayMap {
            width: self.width,
            height: self.height,
            values,
            kind: MapKind::Luminance,
            backend: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Laplacian,
    Depth,
    Edge,
    Luminance,
    /// Region weights, 1 = full style.
    Mask,
}

/// A single-channel map derived from an image.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub kind: MapKind,
    /// Name of the estimator that produced the map, for depth and edge maps.
    pub backend: Option<String>,
}

impl GrayMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>, kind: MapKind) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::dim(format!(
                "{} values for a {width}x{height} map",
                values.len()
            )));
        }
        Ok(GrayMap {
            width,
            height,
            values,
            kind,
            backend: None,
        })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            c: 1,
            h: self.height,
            w: self.width,
            data: self.values.iter().map(|&v| T::lit(v as f64)).collect(),
        }
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, kind: MapKind) -> Result<Self> {
        if t.c != 1 {
            return Err(Error::dim(format!("expected 1 channel, got {}", t.c)));
        }
        GrayMap::new(
            t.w,
            t.h,
            t.data.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
            kind,
        )
    }

    /// Replicates the map into an RGB image (clamped), for saving previews.
    pub fn to_image(&self) -> Image {
        let mut data = Vec::with_capacity(3 * self.values.len());
        for _ in 0..3 {
            data.extend(self.values.iter().map(|v| v.clamp(0.0, 1.0)));
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_planar_validates_range_and_shape() {
        assert!(Image::from_planar(1, 1, vec![0.0, 0.5, 1.0]).is_ok());
        assert!(Image::from_planar(1, 1, vec![0.0, 1.5, 1.0]).is_err());
        assert!(Image::from_planar(1, 1, vec![0.0, f32::NAN, 1.0]).is_err());
        assert!(Image::from_planar(2, 1, vec![0.0; 3]).is_err());
        assert!(Image::from_planar(0, 1, vec![]).is_err());
    }

    #[test]
    fn clamped_conversion_handles_out_of_range() {
        let t = Tensor::from_vec(3, 1, 1, vec![-0.5f32, 2.0, f32::NAN]).unwrap();
        let img = Image::from_tensor_clamped(&t).unwrap();
        assert_eq!(img.pixel(0, 0), [0.0, 1.0, 0.0]);
    }
}
