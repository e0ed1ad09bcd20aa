use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{mean_var_norm, softmax_rows, softmax_rows_backward, Conv2d};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Epsilon inside the square root of the feature normalisation.
pub const NORM_EPS: f64 = 1e-5;

/// Largest attention block (query rows × key columns) held at once during
/// untraced inference.
const ATTENTION_BUDGET: usize = 1 << 22;

/// Style-attention block: queries from normalised content features, keys
/// from normalised style features, values from raw style features.
#[derive(Clone, Debug, PartialEq)]
pub struct SanetBlock<T> {
    pub f: Conv2d<T>,
    pub g: Conv2d<T>,
    pub h: Conv2d<T>,
    pub out: Conv2d<T>,
}

/// Forward values kept for [`SanetBlock::backward`].
pub struct SanetTrace<T> {
    fc_norm: Tensor<T>,
    fs_norm: Tensor<T>,
    fs: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    /// Row-softmaxed attention, `Nc × Ns`.
    probs: Vec<T>,
    attended: Tensor<T>,
}

impl<T: Scalar> SanetBlock<T> {
    /// Block with all-zero kernels.
    pub fn zeros(channels: usize) -> Self {
        SanetBlock {
            f: Conv2d::pointwise(channels, channels),
            g: Conv2d::pointwise(channels, channels),
            h: Conv2d::pointwise(channels, channels),
            out: Conv2d::pointwise(channels, channels),
        }
    }

    pub fn random<R: Rng>(channels: usize, rng: &mut R) -> Self {
        let mut b = Self::zeros(channels);
        for c in b.convs_mut() {
            c.init_uniform(rng);
        }
        b
    }

    pub fn channels(&self) -> usize {
        self.f.in_c
    }

    pub fn convs(&self) -> [(&'static str, &Conv2d<T>); 4] {
        [("f", &self.f), ("g", &self.g), ("h", &self.h), ("out", &self.out)]
    }

    pub fn convs_mut(&mut self) -> [&mut Conv2d<T>; 4] {
        [&mut self.f, &mut self.g, &mut self.h, &mut self.out]
    }

    fn check(&self, fc: &Tensor<T>, fs: &Tensor<T>) -> Result<()> {
        let c = self.channels();
        if fc.c != c || fs.c != c {
            return Err(Error::dim(format!(
                "attention block has {c} channels, got content {} and style {}",
                fc.c, fs.c
            )));
        }
        if fc.plane_len() == 0 || fs.plane_len() == 0 {
            return Err(Error::dim("empty feature map"));
        }
        Ok(())
    }

    fn project(&self, fc: &Tensor<T>, fs: &Tensor<T>) -> [Tensor<T>; 5] {
        let eps = T::lit(NORM_EPS);
        let fc_norm = mean_var_norm(fc, eps).0;
        let fs_norm = mean_var_norm(fs, eps).0;
        let q = self.f.forward(&fc_norm);
        let k = self.g.forward(&fs_norm);
        let v = self.h.forward(fs);
        [fc_norm, fs_norm, q, k, v]
    }

    /// Logits for query rows `r0..r1`, written into `s` as `(r1-r0) × Ns`.
    fn logits(q: &Tensor<T>, k: &Tensor<T>, r0: usize, r1: usize, s: &mut [T]) {
        let (c, nc, ns) = (q.c, q.plane_len(), k.plane_len());
        gemm(
            T::one(),
            MatRef::with_ld(&q.data[r0..], c, r1 - r0, nc).t(),
            MatRef::new(&k.data, c, ns),
            T::zero(),
            s,
            ns,
        );
    }

    /// Full `Nc × Ns` attention matrix; each row is a distribution over
    /// style positions.
    pub fn attention(&self, fc: &Tensor<T>, fs: &Tensor<T>) -> Result<Vec<T>> {
        self.check(fc, fs)?;
        let [_, _, q, k, _] = self.project(fc, fs);
        let (nc, ns) = (q.plane_len(), k.plane_len());
        let mut s = vec![T::zero(); nc * ns];
        Self::logits(&q, &k, 0, nc, &mut s);
        softmax_rows(&mut s, ns);
        Ok(s)
    }

    /// Attention-weighted style values at every content position, shaped
    /// like `fc`.
    pub fn sanet_forward(&self, fc: &Tensor<T>, fs: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(fc, fs)?;
        let [_, _, q, k, v] = self.project(fc, fs);
        let (c, nc, ns) = (q.c, q.plane_len(), k.plane_len());
        let block = (ATTENTION_BUDGET / ns).clamp(1, nc);
        let mut s = vec![T::zero(); block * ns];
        let mut o = Tensor::zeros(c, fc.h, fc.w);
        let mut r0 = 0;
        while r0 < nc {
            let r1 = (r0 + block).min(nc);
            let s = &mut s[..(r1 - r0) * ns];
            Self::logits(&q, &k, r0, r1, s);
            softmax_rows(s, ns);
            gemm(
                T::one(),
                MatRef::new(&v.data, c, ns),
                MatRef::new(s, r1 - r0, ns).t(),
                T::zero(),
                &mut o.data[r0..],
                nc,
            );
            r0 = r1;
        }
        Ok(o)
    }

    /// `fc + out(fcs)`.
    pub fn fuse_residual(&self, fc: &Tensor<T>, fcs: &Tensor<T>) -> Result<Tensor<T>> {
        if !fc.same_shape(fcs) || fc.c != self.channels() {
            return Err(Error::dim(format!(
                "residual shapes differ: {:?} vs {:?}",
                fc.shape(),
                fcs.shape()
            )));
        }
        let mut y = self.out.forward(fcs);
        y.add_assign(fc);
        Ok(y)
    }

    pub fn forward(&self, fc: &Tensor<T>, fs: &Tensor<T>) -> Result<Tensor<T>> {
        let o = self.sanet_forward(fc, fs)?;
        self.fuse_residual(fc, &o)
    }

    pub fn forward_traced(
        &self,
        fc: &Tensor<T>,
        fs: &Tensor<T>,
    ) -> Result<(Tensor<T>, SanetTrace<T>)> {
        self.check(fc, fs)?;
        let [fc_norm, fs_norm, q, k, v] = self.project(fc, fs);
        let (c, nc, ns) = (q.c, q.plane_len(), k.plane_len());
        let mut probs = vec![T::zero(); nc * ns];
        Self::logits(&q, &k, 0, nc, &mut probs);
        softmax_rows(&mut probs, ns);
        let mut attended = Tensor::zeros(c, fc.h, fc.w);
        gemm(
            T::one(),
            MatRef::new(&v.data, c, ns),
            MatRef::new(&probs, nc, ns).t(),
            T::zero(),
            &mut attended.data,
            nc,
        );
        let y = self.fuse_residual(fc, &attended)?;
        let trace = SanetTrace {
            fc_norm,
            fs_norm,
            fs: fs.clone(),
            q,
            k,
            v,
            probs,
            attended,
        };
        Ok((y, trace))
    }

    /// Accumulates kernel gradients for upstream gradient `gy` on the block
    /// output. The inputs come from the frozen encoder, so no input
    /// gradient is produced.
    pub fn backward(&mut self, trace: &SanetTrace<T>, gy: &Tensor<T>) {
        let SanetTrace {
            fc_norm,
            fs_norm,
            fs,
            q,
            k,
            v,
            probs,
            attended,
        } = trace;
        let (c, nc, ns) = (q.c, q.plane_len(), k.plane_len());
        self.out.accumulate_grads(attended, gy);
        let g_o = self.out.input_grad(attended.h, attended.w, gy);

        let mut g_v = Tensor::zeros(c, fs.h, fs.w);
        gemm(
            T::one(),
            MatRef::new(&g_o.data, c, nc),
            MatRef::new(probs, nc, ns),
            T::zero(),
            &mut g_v.data,
            ns,
        );
        let mut g_s = vec![T::zero(); nc * ns];
        gemm(
            T::one(),
            MatRef::new(&g_o.data, c, nc).t(),
            MatRef::new(&v.data, c, ns),
            T::zero(),
            &mut g_s,
            ns,
        );
        softmax_rows_backward(probs, &mut g_s, ns);
        let mut g_q = Tensor::zeros(c, q.h, q.w);
        gemm(
            T::one(),
            MatRef::new(&k.data, c, ns),
            MatRef::new(&g_s, nc, ns).t(),
            T::zero(),
            &mut g_q.data,
            nc,
        );
        let mut g_k = Tensor::zeros(c, k.h, k.w);
        gemm(
            T::one(),
            MatRef::new(&q.data, c, nc),
            MatRef::new(&g_s, nc, ns),
            T::zero(),
            &mut g_k.data,
            ns,
        );
        self.f.accumulate_grads(fc_norm, &g_q);
        self.g.accumulate_grads(fs_norm, &g_k);
        self.h.accumulate_grads(fs, &g_v);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rand_t(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..c * h * w).map(|_| rng.gen_range(0.0..2.0)).collect();
        Tensor::from_vec(c, h, w, data).unwrap()
    }

    fn block(c: usize, seed: u64) -> SanetBlock<f64> {
        SanetBlock::random(c, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn output_takes_content_shape() {
        let b = block(6, 0);
        let o = b.sanet_forward(&rand_t(6, 8, 8, 1), &rand_t(6, 10, 5, 2)).unwrap();
        assert_eq!(o.shape(), (6, 8, 8));
        assert!(matches!(
            b.sanet_forward(&rand_t(6, 8, 8, 1), &rand_t(5, 4, 4, 2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn attention_rows_are_distributions() {
        let b = block(4, 3);
        let a = b.attention(&rand_t(4, 5, 7, 4), &rand_t(4, 3, 6, 5)).unwrap();
        for row in a.chunks(18) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn constant_style_gives_constant_output() {
        let b = block(3, 6);
        let fs = Tensor::from_vec(3, 2, 2, [0.3, 0.3, 0.3, 0.3, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0].to_vec()).unwrap();
        let o = b.sanet_forward(&rand_t(3, 3, 4, 7), &fs).unwrap();
        for c in 0..3 {
            let p = o.plane(c);
            assert!(p.iter().all(|&v| (v - p[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn chunked_inference_matches_traced_pass() {
        let b = block(4, 8);
        let (fc, fs) = (rand_t(4, 9, 11, 9), rand_t(4, 7, 6, 10));
        let (y, _) = b.forward_traced(&fc, &fs).unwrap();
        let y2 = b.forward(&fc, &fs).unwrap();
        assert!(y.max_abs_diff(&y2) < 1e-12);
    }

    #[test]
    fn zero_out_conv_is_identity() {
        let mut b = block(4, 11);
        b.out = Conv2d::pointwise(4, 4);
        let fc = rand_t(4, 3, 3, 12);
        assert_eq!(b.forward(&fc, &rand_t(4, 2, 5, 13)).unwrap(), fc);
    }

    #[test]
    fn kernel_gradients_match_finite_differences() {
        let b0 = block(3, 14);
        let (fc, fs) = (rand_t(3, 3, 2, 15), rand_t(3, 2, 3, 16));
        let proj = rand_t(3, 3, 2, 17);
        let f = |b: &SanetBlock<f64>| -> f64 {
            let y = b.forward(&fc, &fs).unwrap();
            y.data.iter().zip(&proj.data).map(|(a, p)| a * p).sum()
        };
        let mut b = b0.clone();
        let (_, trace) = b.forward_traced(&fc, &fs).unwrap();
        b.backward(&trace, &proj);
        for ci in 0..4 {
            for which in 0..2 {
                let n = {
                    let c = &b.convs()[ci].1;
                    if which == 0 { c.weight.len() } else { c.bias.len() }
                };
                for i in 0..n {
                    let bump = |d: f64| {
                        let mut t = b0.clone();
                        let c = &mut t.convs_mut()[ci];
                        let p = if which == 0 { &mut c.weight } else { &mut c.bias };
                        p.value[i] += d;
                        f(&t)
                    };
                    let fd = (bump(1e-6) - bump(-1e-6)) / 2e-6;
                    let c = b.convs()[ci].1;
                    let an = if which == 0 { c.weight.grad[i] } else { c.bias.grad[i] };
                    assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "conv {ci} {which} {i}: {fd} vs {an}");
                }
            }
        }
    }
}
