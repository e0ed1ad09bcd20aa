use super::{GrayMap, Image, MapKind};
use crate::tensor::{Scalar, Tensor};

/// The 4-neighbour discrete Laplacian filter.
pub const LAPLACIAN_KERNEL: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]];

/// Per-channel Laplacian, same-size output, edge samples replicated
/// outward. Replication makes every constant image map to exactly zero
/// (including the border), and the resulting operator is the symmetric
/// grid-graph Laplacian, so it is its own adjoint: the backward pass of
/// `laplacian` is `laplacian` applied to the gradient.
pub fn laplacian<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.shape();
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = x.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..h {
            for xx in 0..w {
                let i = y * w + xx;
                let c = src[i];
                let up = if y > 0 { src[i - w] } else { c };
                let down = if y + 1 < h { src[i + w] } else { c };
                let left = if xx > 0 { src[i - 1] } else { c };
                let right = if xx + 1 < w { src[i + 1] } else { c };
                // Differences first so a flat neighbourhood is exactly 0.
                dst[i] = (c - up) + (c - down) + (c - left) + (c - right);
            }
        }
    }
    out
}

/// Laplacian of each RGB channel as three maps.
pub fn laplacian_matrix(img: &Image) -> [GrayMap; 3] {
    let lap = laplacian(&img.to_tensor::<f32>());
    let map = |c: usize| GrayMap {
        width: img.width(),
        height: img.height(),
        values: lap.plane(c).to_vec(),
        kind: MapKind::Laplacian,
        backend: None,
    };
    [map(0), map(1), map(2)]
}

impl GrayMap {
    /// Laplacian of a single-channel map.
    pub fn laplacian(&self) -> GrayMap {
        let lap = laplacian(&self.to_tensor::<f32>());
        GrayMap {
            width: self.width,
            height: self.height,
            values: lap.data,
            kind: MapKind::Laplacian,
            backend: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_zero_sum() {
        let s: f64 = LAPLACIAN_KERNEL.iter().flatten().sum();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn impulse_response() {
        let mut t = Tensor::<f64>::zeros(1, 3, 3);
        *t.at_mut(0, 1, 1) = 1.0;
        let l = laplacian(&t);
        assert_eq!(l.data, vec![0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn affine_ramp_vanishes_in_interior() {
        let (h, w) = (7, 9);
        let t = Tensor::from_vec(
            1,
            h,
            w,
            (0..h * w).map(|i| 0.3 * (i % w) as f64 - 0.7 * (i / w) as f64).collect(),
        )
        .unwrap();
        let l = laplacian(&t);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                assert!(l.at(0, y, x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_maps_to_zero_everywhere() {
        for v in [0.0, 0.2, 0.7, 1.0] {
            let img = Image::filled(5, 4, [v, 1.0 - v, 0.5]);
            for m in laplacian_matrix(&img) {
                assert!(m.values.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn operator_is_self_adjoint() {
        let a = Tensor::from_vec(1, 4, 5, (0..20).map(|i| (i as f64 * 1.3).sin()).collect()).unwrap();
        let b = Tensor::from_vec(1, 4, 5, (0..20).map(|i| (i as f64 * 0.4).cos()).collect()).unwrap();
        let dot = |x: &Tensor<f64>, y: &Tensor<f64>| -> f64 {
            x.data.iter().zip(&y.data).map(|(p, q)| p * q).sum()
        };
        assert!((dot(&laplacian(&a), &b) - dot(&a, &laplacian(&b))).abs() < 1e-12);
    }
}
