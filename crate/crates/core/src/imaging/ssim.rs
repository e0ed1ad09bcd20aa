//! Mean structural similarity with the usual Gaussian-window setup:
//! 11×11 window, σ = 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1. Only
//! windows that lie fully inside the image contribute to the mean.

use super::{GrayMap, Image};
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Window size actually used for an `h × w` input: the standard 11, or
/// the largest odd size that fits for tiny inputs.
pub(crate) fn window_for(h: usize, w: usize) -> usize {
    let m = SSIM_WINDOW.min(h).min(w);
    if m.is_multiple_of(2) {
        m - 1
    } else {
        m
    }
}

pub(crate) fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            let src = &x[y * w + ox..y * w + ox + n];
            rows[y * ow + ox] = src.iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..n).map(|j| rows[(oy + j) * ow + ox] * k[j]).sum();
        }
    }
    out
}

pub(crate) fn ssim_planes(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = gaussian_kernel(window_for(h, w), SSIM_SIGMA);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let e_aa = filter_valid(&aa, h, w, &k);
    let e_bb = filter_valid(&bb, h, w, &k);
    let e_ab = filter_valid(&ab, h, w, &k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
        total += num / den;
    }
    total / n as f64
}

/// Mean SSIM of two single-channel maps.
pub fn ssim_gray(a: &GrayMap, b: &GrayMap) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!(
            "ssim inputs differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let av: Vec<f64> = a.values.iter().map(|&v| v as f64).collect();
    let bv: Vec<f64> = b.values.iter().map(|&v| v as f64).collect();
    Ok(ssim_planes(&av, &bv, a.height, a.width))
}

/// Mean SSIM of two images, computed on luminance.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!(
            "ssim inputs differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let lum = |img: &Image| -> Vec<f64> {
        let n = img.width() * img.height();
        let d = img.planar();
        (0..n)
            .map(|i| {
                super::LUMA[0] * d[i] as f64
                    + super::LUMA[1] * d[n + i] as f64
                    + super::LUMA[2] * d[2 * n + i] as f64
            })
            .collect()
    };
    Ok(ssim_planes(&lum(a), &lum(b), a.height(), a.width()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize, phase: f32) -> Image {
        Image::from_fn(w, h, |x, y| {
            let v = 0.5 + 0.4 * ((x as f32 * 0.7 + phase).sin() * (y as f32 * 0.3).cos());
            [v, 1.0 - v, 0.5 * v]
        })
    }

    #[test]
    fn identical_inputs_give_exactly_one() {
        for (w, h) in [(32, 24), (11, 11), (6, 6), (1, 1)] {
            let img = pattern(w, h, 0.0);
            assert_eq!(ssim(&img, &img).unwrap(), 1.0);
        }
    }

    #[test]
    fn inverted_image_scores_lower_and_is_symmetric() {
        let a = pattern(40, 30, 0.0);
        let b = Image::from_fn(40, 30, |x, y| {
            let p = a.pixel(x, y);
            [1.0 - p[0], 1.0 - p[1], 1.0 - p[2]]
        });
        let s = ssim(&a, &b).unwrap();
        assert!(s < 1.0);
        assert_eq!(s, ssim(&b, &a).unwrap());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(matches!(
            ssim(&pattern(8, 8, 0.0), &pattern(8, 9, 0.0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn kernel_is_normalised_and_symmetric() {
        let k = gaussian_kernel(11, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(k[i], k[10 - i]);
        }
    }
}
