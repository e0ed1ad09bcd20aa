use rand::Rng;

use super::pad::{pad2d, pad2d_backward, PadMode};
use super::Param;
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Upper bound on the im2col scratch buffer, in elements. Large images are
/// processed in bands of output rows so memory stays flat.
const COLS_BUDGET: usize = 1 << 22;

/// 2-D convolution, weights laid out `[out, in, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub mode: PadMode,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        Conv2d {
            weight: Param::zeros(out_c * in_c * kernel * kernel),
            bias: Param::zeros(out_c),
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            mode,
        }
    }

    /// Same-size 3×3 convolution.
    pub fn same3x3(in_c: usize, out_c: usize, mode: PadMode) -> Self {
        Self::new(in_c, out_c, 3, 1, 1, mode)
    }

    pub fn pointwise(in_c: usize, out_c: usize) -> Self {
        Self::new(in_c, out_c, 1, 1, 0, PadMode::Zero)
    }

    pub fn fan_in(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_c, self.in_c, self.kernel, self.kernel]
    }

    /// He-uniform weights, zero bias.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R) {
        let bound = (6.0 / self.fan_in() as f64).sqrt();
        self.weight.fill_uniform(bound, rng);
        self.bias.value.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let ph = h + 2 * self.pad;
        let pw = w + 2 * self.pad;
        assert!(
            ph >= self.kernel && pw >= self.kernel,
            "input {h}x{w} too small for kernel {}",
            self.kernel
        );
        (
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn padded(&self, x: &Tensor<T>) -> Tensor<T> {
        pad2d(x, self.pad, self.pad, self.pad, self.pad, self.mode)
    }

    fn rows_per_band(&self, ow: usize) -> usize {
        (COLS_BUDGET / (self.fan_in() * ow).max(1)).max(1)
    }

    fn im2col(&self, xp: &Tensor<T>, r0: usize, r1: usize, ow: usize, cols: &mut [T]) {
        let k = self.kernel;
        let s = self.stride;
        let n = (r1 - r0) * ow;
        for ci in 0..self.in_c {
            let plane = xp.plane(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in r0..r1 {
                        let iy = oy * s + ky;
                        let src = &plane[iy * xp.w..(iy + 1) * xp.w];
                        let d = &mut dst[(oy - r0) * ow..(oy - r0 + 1) * ow];
                        if s == 1 {
                            d.copy_from_slice(&src[kx..kx + ow]);
                        } else {
                            for (ox, v) in d.iter_mut().enumerate() {
                                *v = src[ox * s + kx];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], r0: usize, r1: usize, ow: usize, gxp: &mut Tensor<T>) {
        let k = self.kernel;
        let s = self.stride;
        let n = (r1 - r0) * ow;
        let pw = gxp.w;
        for ci in 0..self.in_c {
            let plane = gxp.plane_mut(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in r0..r1 {
                        let iy = oy * s + ky;
                        let dst = &mut plane[iy * pw..(iy + 1) * pw];
                        let srow = &src[(oy - r0) * ow..(oy - r0 + 1) * ow];
                        for (ox, &v) in srow.iter().enumerate() {
                            dst[ox * s + kx] += v;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.in_c, "conv expects {} input channels", self.in_c);
        let (oh, ow) = self.out_size(x.h, x.w);
        let p = oh * ow;
        let mut y = Tensor::zeros(self.out_c, oh, ow);
        for (o, &b) in self.bias.value.iter().enumerate() {
            y.plane_mut(o).iter_mut().for_each(|v| *v = b);
        }
        let wmat = MatRef::new(&self.weight.value, self.out_c, self.fan_in());
        if self.is_pointwise() {
            gemm(T::one(), wmat, MatRef::new(&x.data, self.in_c, p), T::one(), &mut y.data, p);
            return y;
        }
        let xp = self.padded(x);
        let band = self.rows_per_band(ow);
        T::with_scratch(self.fan_in() * band.min(oh) * ow, |cols| {
            let mut r0 = 0;
            while r0 < oh {
                let r1 = (r0 + band).min(oh);
                let n = (r1 - r0) * ow;
                let cols = &mut cols[..self.fan_in() * n];
                self.im2col(&xp, r0, r1, ow, cols);
                gemm(
                    T::one(),
                    wmat,
                    MatRef::new(cols, self.fan_in(), n),
                    T::one(),
                    &mut y.data[r0 * ow..],
                    p,
                );
                r0 = r1;
            }
        });
        y
    }

    /// Gradient with respect to the input, given the input's spatial size.
    pub fn input_grad(&self, in_h: usize, in_w: usize, gy: &Tensor<T>) -> Tensor<T> {
        let (oh, ow) = self.out_size(in_h, in_w);
        assert_eq!((gy.c, gy.h, gy.w), (self.out_c, oh, ow), "conv grad shape");
        let p = oh * ow;
        let wmat = MatRef::new(&self.weight.value, self.out_c, self.fan_in());
        if self.is_pointwise() {
            let mut gx = Tensor::zeros(self.in_c, in_h, in_w);
            gemm(T::one(), wmat.t(), MatRef::new(&gy.data, self.out_c, p), T::zero(), &mut gx.data, p);
            return gx;
        }
        let mut gxp = Tensor::zeros(self.in_c, in_h + 2 * self.pad, in_w + 2 * self.pad);
        let band = self.rows_per_band(ow);
        T::with_scratch(self.fan_in() * band.min(oh) * ow, |cols| {
            let mut r0 = 0;
            while r0 < oh {
                let r1 = (r0 + band).min(oh);
                let n = (r1 - r0) * ow;
                let cols = &mut cols[..self.fan_in() * n];
                // beta = 0: stale scratch is overwritten, never read.
                gemm(
                    T::one(),
                    wmat.t(),
                    MatRef::with_ld(&gy.data[r0 * ow..], self.out_c, n, p),
                    T::zero(),
                    cols,
                    n,
                );
                self.col2im(cols, r0, r1, ow, &mut gxp);
                r0 = r1;
            }
        });
        pad2d_backward(&gxp, in_h, in_w, self.pad, self.pad, self.mode)
    }

    /// Adds this layer's weight and bias gradients into the `Param`
    /// accumulators (allocating them if needed).
    pub fn accumulate_grads(&mut self, x: &Tensor<T>, gy: &Tensor<T>) {
        let (oh, ow) = self.out_size(x.h, x.w);
        assert_eq!((gy.c, gy.h, gy.w), (self.out_c, oh, ow), "conv grad shape");
        self.weight.ensure_grad();
        self.bias.ensure_grad();
        let p = oh * ow;
        for (o, gb) in self.bias.grad.iter_mut().enumerate() {
            *gb += gy.plane(o).iter().copied().sum::<T>();
        }
        let k = self.fan_in();
        if self.is_pointwise() {
            gemm(
                T::one(),
                MatRef::new(&gy.data, self.out_c, p),
                MatRef::new(&x.data, self.in_c, p).t(),
                T::one(),
                &mut self.weight.grad,
                k,
            );
            return;
        }
        let xp = self.padded(x);
        let band = self.rows_per_band(ow);
        let mut grad = std::mem::take(&mut self.weight.grad);
        let this = &*self;
        T::with_scratch(k * band.min(oh) * ow, |cols| {
            let mut r0 = 0;
            while r0 < oh {
                let r1 = (r0 + band).min(oh);
                let n = (r1 - r0) * ow;
                let cols = &mut cols[..k * n];
                this.im2col(&xp, r0, r1, ow, cols);
                gemm(
                    T::one(),
                    MatRef::with_ld(&gy.data[r0 * ow..], this.out_c, n, p),
                    MatRef::new(cols, k, n).t(),
                    T::one(),
                    &mut grad,
                    k,
                );
                r0 = r1;
            }
        });
        self.weight.grad = grad;
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::pad::source_index;

    fn rand_tensor(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Nested-loop reference convolution.
    fn direct(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.out_size(x.h, x.w);
        let k = conv.kernel;
        let mut y = Tensor::zeros(conv.out_c, oh, ow);
        for o in 0..conv.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias.value[o];
                    for ci in 0..conv.in_c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                let (Some(sy), Some(sx)) = (
                                    source_index(iy, x.h, conv.mode),
                                    source_index(ix, x.w, conv.mode),
                                ) else {
                                    continue;
                                };
                                acc += conv.weight.value[((o * conv.in_c + ci) * k + ky) * k + kx]
                                    * x.at(ci, sy, sx);
                            }
                        }
                    }
                    *y.at_mut(o, oy, ox) = acc;
                }
            }
        }
        y
    }

    fn configs() -> Vec<Conv2d<f64>> {
        vec![
            Conv2d::same3x3(3, 4, PadMode::Zero),
            Conv2d::same3x3(2, 3, PadMode::Reflect),
            Conv2d::pointwise(5, 2),
            Conv2d::new(2, 3, 7, 2, 3, PadMode::Zero),
            Conv2d::new(3, 2, 1, 2, 0, PadMode::Zero),
        ]
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mut conv in configs() {
            conv.init_uniform(&mut rng);
            conv.bias.fill_uniform(0.5, &mut rng);
            let x = rand_tensor(conv.in_c, 9, 7, &mut rng);
            let diff = conv.forward(&x).max_abs_diff(&direct(&conv, &x));
            assert!(diff < 1e-12, "{diff}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mut conv in configs() {
            conv.init_uniform(&mut rng);
            let x = rand_tensor(conv.in_c, 6, 5, &mut rng);
            let y = conv.forward(&x);
            let gy = rand_tensor(y.c, y.h, y.w, &mut rng);
            let objective = |c: &Conv2d<f64>, x: &Tensor<f64>| -> f64 {
                c.forward(x).data.iter().zip(&gy.data).map(|(a, b)| a * b).sum()
            };
            let gx = conv.input_grad(x.h, x.w, &gy);
            conv.accumulate_grads(&x, &gy);
            let h = 1e-6;
            for i in 0..x.data.len() {
                let mut xp = x.clone();
                xp.data[i] += h;
                let mut xm = x.clone();
                xm.data[i] -= h;
                let fd = (objective(&conv, &xp) - objective(&conv, &xm)) / (2.0 * h);
                assert!((fd - gx.data[i]).abs() < 1e-6, "input grad {i}");
            }
            for i in 0..conv.weight.len() {
                let mut cp = conv.clone();
                cp.weight.value[i] += h;
                let mut cm = conv.clone();
                cm.weight.value[i] -= h;
                let fd = (objective(&cp, &x) - objective(&cm, &x)) / (2.0 * h);
                assert!((fd - conv.weight.grad[i]).abs() < 1e-6, "weight grad {i}");
            }
            for o in 0..conv.out_c {
                let want: f64 = gy.plane(o).iter().sum();
                assert!((want - conv.bias.grad[o]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn banded_im2col_matches_single_band() {
        // Force many bands by using a wide input relative to the budget.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::<f32>::same3x3(64, 8, PadMode::Reflect);
        conv.init_uniform(&mut rng);
        let x = Tensor::from_vec(
            64,
            96,
            96,
            (0..64 * 96 * 96).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        assert!(conv.rows_per_band(96) < 96);
        let y = conv.forward(&x);
        let conv64: Conv2d<f64> = Conv2d {
            weight: Param::new(conv.weight.value.iter().map(|&v| v as f64).collect()),
            bias: Param::new(conv.bias.value.iter().map(|&v| v as f64).collect()),
            ..Conv2d::same3x3(64, 8, PadMode::Reflect)
        };
        let want = direct(&conv64, &x.cast());
        assert!(y.cast::<f64>().max_abs_diff(&want) < 1e-3);
    }
}
