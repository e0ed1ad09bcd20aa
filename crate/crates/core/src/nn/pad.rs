use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample (`[2,1 | 0,1,2 | 1,0]`).
    /// Offsets past one full period keep folding, so any pad width works.
    Reflect,
    Replicate,
}

/// Maps a possibly out-of-range coordinate onto `0..n`. `None` means the
/// sample is a zero pad.
#[inline]
pub fn source_index(i: isize, n: usize, mode: PadMode) -> Option<usize> {
    let n_i = n as isize;
    if (0..n_i).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Replicate => Some(i.clamp(0, n_i - 1) as usize),
        PadMode::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let period = 2 * (n_i - 1);
            let m = i.rem_euclid(period);
            Some(if m >= n_i { period - m } else { m } as usize)
        }
    }
}

pub fn pad2d<T: Scalar>(
    x: &Tensor<T>,
    top: usize,
    bottom: usize,
    left: usize,
    right: usize,
    mode: PadMode,
) -> Tensor<T> {
    if top + bottom + left + right == 0 {
        return x.clone();
    }
    let (c, h, w) = x.shape();
    let (ph, pw) = (h + top + bottom, w + left + right);
    let mut out = Tensor::zeros(c, ph, pw);
    let cols: Vec<Option<usize>> = (0..pw)
        .map(|px| source_index(px as isize - left as isize, w, mode))
        .collect();
    for ch in 0..c {
        let src = x.plane(ch);
        let dst = out.plane_mut(ch);
        for py in 0..ph {
            let Some(sy) = source_index(py as isize - top as isize, h, mode) else {
                continue;
            };
            let srow = &src[sy * w..(sy + 1) * w];
            let drow = &mut dst[py * pw..(py + 1) * pw];
            drow[left..left + w].copy_from_slice(srow);
            for (px, sx) in cols.iter().enumerate() {
                if px >= left && px < left + w {
                    continue;
                }
                if let Some(sx) = sx {
                    drow[px] = srow[*sx];
                }
            }
        }
    }
    out
}

/// Folds the gradient of a padded tensor back onto the `h × w` source.
pub fn pad2d_backward<T: Scalar>(
    g: &Tensor<T>,
    h: usize,
    w: usize,
    top: usize,
    left: usize,
    mode: PadMode,
) -> Tensor<T> {
    if g.h == h && g.w == w {
        return g.clone();
    }
    let (c, ph, pw) = g.shape();
    let mut out = Tensor::zeros(c, h, w);
    let cols: Vec<Option<usize>> = (0..pw)
        .map(|px| source_index(px as isize - left as isize, w, mode))
        .collect();
    for ch in 0..c {
        let src = g.plane(ch);
        let dst = out.plane_mut(ch);
        for py in 0..ph {
            let Some(sy) = source_index(py as isize - top as isize, h, mode) else {
                continue;
            };
            let srow = &src[py * pw..(py + 1) * pw];
            for (px, sx) in cols.iter().enumerate() {
                if let Some(sx) = sx {
                    dst[sy * w + sx] += srow[px];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices_match_mirror_convention() {
        let got: Vec<usize> = (-3..6)
            .map(|i| source_index(i, 3, PadMode::Reflect).unwrap())
            .collect();
        assert_eq!(got, vec![1, 2, 1, 0, 1, 2, 1, 0, 1]);
        assert_eq!(source_index(-1, 1, PadMode::Reflect), Some(0));
        assert_eq!(source_index(-1, 4, PadMode::Zero), None);
        assert_eq!(source_index(9, 4, PadMode::Replicate), Some(3));
    }

    #[test]
    fn pad_backward_is_adjoint_of_pad() {
        // <pad(x), g> == <x, pad_backward(g)> for every mode.
        for mode in [PadMode::Zero, PadMode::Reflect, PadMode::Replicate] {
            let x = Tensor::from_vec(2, 3, 2, (0..12).map(|v| v as f64 * 0.3 - 1.0).collect())
                .unwrap();
            let p = pad2d(&x, 1, 4, 3, 2, mode);
            let g = p.map(|v| v * 0.0 + 1.0).zip_map(&p, |a, b| a + 0.1 * b);
            let lhs: f64 = p.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
            let gx = pad2d_backward(&g, 3, 2, 1, 3, mode);
            let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12, "{mode:?}");
        }
    }
}
