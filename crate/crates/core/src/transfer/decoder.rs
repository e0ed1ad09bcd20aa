use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, upsample_nearest, upsample_nearest_backward, Conv2d, PadMode};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Conv(usize),
    Relu,
    Up,
}

/// Mirror of the VGG encoder from relu4_1 back to RGB: reflect-padded 3×3
/// convolutions with nearest-neighbour ×2 upsampling where the encoder
/// pooled.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    pub convs: Vec<Conv2d<T>>,
    ops: Vec<Op>,
}

pub struct DecoderTrace<T> {
    saved: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Decoder<T> {
    /// `widths` are the encoder's relu1_1..relu4_1 channel counts.
    pub fn zeros(widths: [usize; 4]) -> Self {
        let [w1, w2, w3, w4] = widths;
        let table: &[(usize, usize)] = &[
            (w4, w3),
            (w3, w3),
            (w3, w3),
            (w3, w3),
            (w3, w2),
            (w2, w2),
            (w2, w1),
            (w1, w1),
            (w1, 3),
        ];
        let convs = table
            .iter()
            .map(|&(i, o)| Conv2d::same3x3(i, o, PadMode::Reflect))
            .collect();
        use Op::*;
        #[rustfmt::skip]
        let ops = vec![
            Conv(0), Relu, Up,
            Conv(1), Relu, Conv(2), Relu, Conv(3), Relu, Conv(4), Relu, Up,
            Conv(5), Relu, Conv(6), Relu, Up,
            Conv(7), Relu, Conv(8),
        ];
        Decoder { convs, ops }
    }

    pub fn random<R: Rng>(widths: [usize; 4], rng: &mut R) -> Self {
        let mut d = Self::zeros(widths);
        for c in &mut d.convs {
            c.init_uniform(rng);
        }
        d
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_c
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.c != self.in_channels() {
            return Err(Error::dim(format!(
                "decoder expects {} channels, got {}",
                self.in_channels(),
                x.c
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, mut saved: Option<&mut Vec<Option<Tensor<T>>>>) -> Tensor<T> {
        let mut x = x.clone();
        for &op in &self.ops {
            let y = match op {
                Op::Conv(i) => self.convs[i].forward(&x),
                Op::Relu => relu(&x),
                Op::Up => upsample_nearest(&x, 2 * x.h, 2 * x.w),
            };
            let prev = std::mem::replace(&mut x, y);
            if let Some(s) = saved.as_deref_mut() {
                s.push(match op {
                    Op::Up => None,
                    _ => Some(prev),
                });
            }
        }
        x
    }

    /// Unclamped RGB output at 8× the input resolution.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        Ok(self.run(x, None))
    }

    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DecoderTrace<T>)> {
        self.check(x)?;
        let mut saved = Vec::with_capacity(self.ops.len());
        let y = self.run(x, Some(&mut saved));
        Ok((y, DecoderTrace { saved }))
    }

    /// Accumulates kernel gradients and returns the input gradient.
    pub fn backward(&mut self, trace: &DecoderTrace<T>, gy: &Tensor<T>) -> Tensor<T> {
        let mut g = gy.clone();
        for (op, saved) in self.ops.iter().zip(&trace.saved).rev() {
            g = match (op, saved) {
                (Op::Conv(i), Some(x)) => {
                    self.convs[*i].accumulate_grads(x, &g);
                    self.convs[*i].input_grad(x.h, x.w, &g)
                }
                (Op::Relu, Some(x)) => relu_backward(x, &g),
                (Op::Up, None) => upsample_nearest_backward(&g, g.h / 2, g.w / 2),
                _ => unreachable!("trace does not match decoder"),
            };
        }
        g
    }
}
