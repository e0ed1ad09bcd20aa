use crate::imaging::LUMA;
use crate::nn::{pad2d, pad2d_backward, PadMode};
use crate::tensor::{Scalar, Tensor};

/// Side of the box filter.
pub const BOX: usize = 15;

pub(super) fn luminance<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = Tensor::zeros(1, x.h, x.w);
    let w = LUMA.map(T::lit);
    for (i, o) in y.data.iter_mut().enumerate() {
        let n = x.plane_len();
        *o = w[0] * x.data[i] + w[1] * x.data[n + i] + w[2] * x.data[2 * n + i];
    }
    y
}

pub(super) fn luminance_backward<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(3, g.h, g.w);
    for (c, wt) in LUMA.iter().enumerate() {
        let wt = T::lit(*wt);
        for (o, &v) in gx.plane_mut(c).iter_mut().zip(&g.data) {
            *o = wt * v;
        }
    }
    gx
}

/// Mean over a `BOX × BOX` window with edge-replicated borders.
pub(super) fn box_blur<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let r = BOX / 2;
    let p = pad2d(x, r, r, r, r, PadMode::Replicate);
    let (h, w, pw) = (x.h, x.w, p.w);
    let mut rows = vec![T::zero(); p.h * w];
    for y in 0..p.h {
        for xo in 0..w {
            let mut s = T::zero();
            for d in 0..BOX {
                s += p.data[y * pw + xo + d];
            }
            rows[y * w + xo] = s;
        }
    }
    let norm = T::lit((BOX * BOX) as f64);
    let mut out = Tensor::zeros(1, h, w);
    for yo in 0..h {
        for xo in 0..w {
            let mut s = T::zero();
            for d in 0..BOX {
                s += rows[(yo + d) * w + xo];
            }
            out.data[yo * w + xo] = s / norm;
        }
    }
    out
}

pub(super) fn box_blur_backward<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let r = BOX / 2;
    let (h, w) = (g.h, g.w);
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let norm = T::lit((BOX * BOX) as f64);
    let mut g_rows = vec![T::zero(); ph * w];
    for yo in 0..h {
        for xo in 0..w {
            let v = g.data[yo * w + xo] / norm;
            for d in 0..BOX {
                g_rows[(yo + d) * w + xo] += v;
            }
        }
    }
    let mut gp = Tensor::zeros(1, ph, pw);
    for y in 0..ph {
        for xo in 0..w {
            let v = g_rows[y * w + xo];
            for d in 0..BOX {
                gp.data[y * pw + xo + d] += v;
            }
        }
    }
    pad2d_backward(&gp, h, w, r, r, PadMode::Replicate)
}

/// `1 − box_blur(luminance(x))`, before normalisation.
pub(super) fn proxy<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    box_blur(&luminance(x)).map(|v| T::one() - v)
}

pub(super) fn proxy_backward<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    luminance_backward(&box_blur_backward(&g.map(|v| -v)))
}
