use crate::tensor::{Scalar, Tensor};

/// NaN passes through so divergence stays visible downstream.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v < T::zero() { T::zero() } else { v })
}

/// Backward of ReLU given the layer input.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    x.zip_map(gy, |x, g| if x > T::zero() { g } else { T::zero() })
}

/// ELU with unit alpha.
pub fn elu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { v.exp() - T::one() })
}

pub fn elu_backward<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    x.zip_map(gy, |x, g| if x > T::zero() { g } else { g * x.exp() })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Backward of the logistic sigmoid given its output.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    y.zip_map(gy, |y, g| g * y * (T::one() - y))
}

/// Max pooling. Returns the output and, per output element, the flat
/// index of the input element that won. Padding never wins.
pub fn max_pool<T: Scalar>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> (Tensor<T>, Vec<u32>) {
    let (c, h, w) = x.shape();
    let oh = (h + 2 * pad - kernel) / stride + 1;
    let ow = (w + 2 * pad - kernel) / stride + 1;
    let mut y = Tensor::zeros(c, oh, ow);
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let plane = x.plane(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = 0usize;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i = iy as usize * w + ix as usize;
                        if plane[i] > best {
                            best = plane[i];
                            best_i = i;
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                y.data[o] = best;
                arg[o] = (ch * h * w + best_i) as u32;
            }
        }
    }
    (y, arg)
}

pub fn max_pool_backward<T: Scalar>(
    gy: &Tensor<T>,
    arg: &[u32],
    in_shape: (usize, usize, usize),
) -> Tensor<T> {
    let mut gx = Tensor::zeros(in_shape.0, in_shape.1, in_shape.2);
    for (&g, &i) in gy.data.iter().zip(arg) {
        gx.data[i as usize] += g;
    }
    gx
}

fn nearest_index(o: usize, n_in: usize, n_out: usize) -> usize {
    ((o * n_in) / n_out).min(n_in - 1)
}

/// Nearest-neighbour resampling to `oh × ow` (integer factors give plain
/// pixel replication).
pub fn upsample_nearest<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let (c, h, w) = x.shape();
    let xs: Vec<usize> = (0..ow).map(|o| nearest_index(o, w, ow)).collect();
    let mut y = Tensor::zeros(c, oh, ow);
    for ch in 0..c {
        let src = x.plane(ch);
        let dst = y.plane_mut(ch);
        for oy in 0..oh {
            let sy = nearest_index(oy, h, oh);
            for (ox, &sx) in xs.iter().enumerate() {
                dst[oy * ow + ox] = src[sy * w + sx];
            }
        }
    }
    y
}

pub fn upsample_nearest_backward<T: Scalar>(gy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (c, oh, ow) = gy.shape();
    let xs: Vec<usize> = (0..ow).map(|o| nearest_index(o, w, ow)).collect();
    let mut gx = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = gy.plane(ch);
        let dst = gx.plane_mut(ch);
        for oy in 0..oh {
            let sy = nearest_index(oy, h, oh);
            for (ox, &sx) in xs.iter().enumerate() {
                dst[sy * w + sx] += src[oy * ow + ox];
            }
        }
    }
    gx
}

/// Two source taps and their weights for one output coordinate, using
/// half-pixel centres.
fn bilinear_taps(o: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let scale = n_in as f64 / n_out as f64;
    let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    let frac = if i0 == i1 { 0.0 } else { src - i0 as f64 };
    (i0, i1, frac)
}

/// Bilinear resampling with half-pixel centres (no antialiasing).
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let (c, h, w) = x.shape();
    if (h, w) == (oh, ow) {
        return x.clone();
    }
    let ys: Vec<_> = (0..oh).map(|o| bilinear_taps(o, h, oh)).collect();
    let xs: Vec<_> = (0..ow).map(|o| bilinear_taps(o, w, ow)).collect();
    let mut y = Tensor::zeros(c, oh, ow);
    for ch in 0..c {
        let src = x.plane(ch);
        let dst = y.plane_mut(ch);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::lit(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    y
}

pub fn resize_bilinear_backward<T: Scalar>(gy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (c, oh, ow) = gy.shape();
    if (h, w) == (oh, ow) {
        return gy.clone();
    }
    let ys: Vec<_> = (0..oh).map(|o| bilinear_taps(o, h, oh)).collect();
    let xs: Vec<_> = (0..ow).map(|o| bilinear_taps(o, w, ow)).collect();
    let mut gx = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = gy.plane(ch);
        let dst = gx.plane_mut(ch);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::lit(fx);
                let g = src[oy * ow + ox];
                dst[y0 * w + x0] += g * (T::one() - fy) * (T::one() - fx);
                dst[y0 * w + x1] += g * (T::one() - fy) * fx;
                dst[y1 * w + x0] += g * fy * (T::one() - fx);
                dst[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    gx
}

/// Per-channel spatial statistics: population mean and
/// `sqrt(var + eps)`.
#[derive(Clone, Debug)]
pub struct ChannelStats<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

pub fn channel_stats<T: Scalar>(x: &Tensor<T>, eps: T) -> ChannelStats<T> {
    let n = T::from_usize(x.plane_len()).unwrap();
    let mut mean = Vec::with_capacity(x.c);
    let mut std = Vec::with_capacity(x.c);
    for ch in 0..x.c {
        let p = x.plane(ch);
        let m = p.iter().copied().sum::<T>() / n;
        let var = p.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
        mean.push(m);
        std.push((var + eps).sqrt());
    }
    ChannelStats { mean, std }
}

/// Gradient of `Σ_c gm[c]·mean_c + gs[c]·std_c` with respect to `x`.
pub fn channel_stats_backward<T: Scalar>(
    x: &Tensor<T>,
    stats: &ChannelStats<T>,
    g_mean: &[T],
    g_std: &[T],
) -> Tensor<T> {
    let n = T::from_usize(x.plane_len()).unwrap();
    let mut gx = Tensor::zeros(x.c, x.h, x.w);
    for ch in 0..x.c {
        let m = stats.mean[ch];
        let s = stats.std[ch];
        let gm = g_mean[ch] / n;
        let gs = g_std[ch] / (n * s);
        for (g, &v) in gx.plane_mut(ch).iter_mut().zip(x.plane(ch)) {
            *g = gm + gs * (v - m);
        }
    }
    gx
}

/// Per-channel mean-variance normalisation `(x - mean) / sqrt(var + eps)`.
pub fn mean_var_norm<T: Scalar>(x: &Tensor<T>, eps: T) -> (Tensor<T>, ChannelStats<T>) {
    let stats = channel_stats(x, eps);
    let mut y = x.clone();
    for ch in 0..x.c {
        let (m, s) = (stats.mean[ch], stats.std[ch]);
        y.plane_mut(ch).iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    (y, stats)
}

/// Backward of [`mean_var_norm`] given its output `y`.
pub fn mean_var_norm_backward<T: Scalar>(
    y: &Tensor<T>,
    stats: &ChannelStats<T>,
    gy: &Tensor<T>,
) -> Tensor<T> {
    let n = T::from_usize(y.plane_len()).unwrap();
    let mut gx = Tensor::zeros(y.c, y.h, y.w);
    for ch in 0..y.c {
        let yp = y.plane(ch);
        let gp = gy.plane(ch);
        let g_mean = gp.iter().copied().sum::<T>() / n;
        let gy_mean = yp.iter().zip(gp).map(|(&a, &b)| a * b).sum::<T>() / n;
        let inv = T::one() / stats.std[ch];
        for ((o, &yv), &gv) in gx.plane_mut(ch).iter_mut().zip(yp).zip(gp) {
            *o = inv * (gv - g_mean - yv * gy_mean);
        }
    }
    gx
}

/// Numerically stable softmax over each row of a `rows × cols` matrix.
/// Terms whose exponent would be subnormal are flushed to zero: they lie
/// below float resolution relative to the row maximum, and subnormal
/// operands slow the following matrix products by an order of magnitude.
pub fn softmax_rows<T: Scalar>(m: &mut [T], cols: usize) {
    let cutoff = T::min_positive_value().ln();
    for row in m.chunks_mut(cols) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            let d = *v - mx;
            *v = if d < cutoff { T::zero() } else { d.exp() };
            sum += *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            let p = *v * inv;
            *v = if p < T::min_positive_value() { T::zero() } else { p };
        }
    }
}

/// Backward of [`softmax_rows`]: overwrites `g` (gradient w.r.t. the
/// probabilities) with the gradient w.r.t. the logits. Subnormal results
/// are flushed to zero as in the forward pass.
pub fn softmax_rows_backward<T: Scalar>(probs: &[T], g: &mut [T], cols: usize) {
    let tiny = T::min_positive_value();
    for (p, g) in probs.chunks(cols).zip(g.chunks_mut(cols)) {
        let dot = p.iter().zip(g.iter()).map(|(&a, &b)| a * b).sum::<T>();
        for (gv, &pv) in g.iter_mut().zip(p) {
            let v = pv * (*gv - dot);
            *gv = if v.abs() < tiny { T::zero() } else { v };
        }
    }
}

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!((a.h, a.w), (b.h, b.w), "concat spatial mismatch");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

/// Splits a channel-concatenated tensor after its first `first` channels.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let cut = first * x.plane_len();
    (
        Tensor {
            c: first,
            h: x.h,
            w: x.w,
            data: x.data[..cut].to_vec(),
        },
        Tensor {
            c: x.c - first,
            h: x.h,
            w: x.w,
            data: x.data[cut..].to_vec(),
        },
    )
}
