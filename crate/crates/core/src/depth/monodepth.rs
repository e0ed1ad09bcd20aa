//! Self-supervised monocular depth network: ResNet-18 encoder (batch norm
//! folded into the convolutions) and the multi-scale skip decoder, using
//! only the full-resolution disparity head.

use rand::Rng;

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::nn::{
    concat_channels, elu, elu_backward, max_pool, max_pool_backward, relu, relu_backward,
    resize_bilinear, resize_bilinear_backward, sigmoid, sigmoid_backward, split_channels,
    upsample_nearest, upsample_nearest_backward, Conv2d, PadMode,
};
use crate::tensor::{Scalar, Tensor};

pub const NATIVE_HEIGHT: usize = 192;
pub const NATIVE_WIDTH: usize = 640;
pub const MIN_DEPTH: f64 = 0.1;
pub const MAX_DEPTH: f64 = 100.0;
const INPUT_MEAN: f64 = 0.45;
const INPUT_STD: f64 = 0.225;

const ENC_CH: [usize; 5] = [64, 64, 128, 256, 512];
const DEC_CH: [usize; 5] = [16, 32, 64, 128, 256];

#[derive(Clone, Debug)]
struct BasicBlock<T> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
    downsample: Option<Conv2d<T>>,
}

struct BlockTrace<T> {
    in_hw: (usize, usize),
    a1: Tensor<T>,
    mid_hw: (usize, usize),
    sum: Tensor<T>,
}

impl<T: Scalar> BasicBlock<T> {
    fn new(in_c: usize, out_c: usize, stride: usize) -> Self {
        let downsample = (stride != 1 || in_c != out_c)
            .then(|| Conv2d::new(in_c, out_c, 1, stride, 0, PadMode::Zero));
        BasicBlock {
            conv1: Conv2d::new(in_c, out_c, 3, stride, 1, PadMode::Zero),
            conv2: Conv2d::new(out_c, out_c, 3, 1, 1, PadMode::Zero),
            downsample,
        }
    }

    fn forward(&self, x: &Tensor<T>, trace: Option<&mut Vec<BlockTrace<T>>>) -> Tensor<T> {
        let a1 = self.conv1.forward(x);
        let r1 = relu(&a1);
        let mut sum = self.conv2.forward(&r1);
        match &self.downsample {
            Some(d) => sum.add_assign(&d.forward(x)),
            None => sum.add_assign(x),
        }
        let y = relu(&sum);
        if let Some(t) = trace {
            t.push(BlockTrace {
                in_hw: (x.h, x.w),
                mid_hw: (r1.h, r1.w),
                a1,
                sum,
            });
        }
        y
    }

    fn backward(&self, t: &BlockTrace<T>, gy: &Tensor<T>) -> Tensor<T> {
        let g_sum = relu_backward(&t.sum, gy);
        let g_r1 = self.conv2.input_grad(t.mid_hw.0, t.mid_hw.1, &g_sum);
        let g_a1 = relu_backward(&t.a1, &g_r1);
        let mut gx = self.conv1.input_grad(t.in_hw.0, t.in_hw.1, &g_a1);
        match &self.downsample {
            Some(d) => gx.add_assign(&d.input_grad(t.in_hw.0, t.in_hw.1, &g_sum)),
            None => gx.add_assign(&g_sum),
        }
        gx
    }
}

/// Frozen depth network. Only input gradients are computed.
#[derive(Clone, Debug)]
pub struct MonodepthNet<T> {
    conv1: Conv2d<T>,
    layers: Vec<Vec<BasicBlock<T>>>,
    /// `upconv[i] = (conv_i_0, conv_i_1)`.
    upconv: Vec<(Conv2d<T>, Conv2d<T>)>,
    dispconv: Conv2d<T>,
    native: (usize, usize),
}

/// Forward values kept for [`MonodepthNet::disparity_backward`].
pub struct MonodepthTrace<T> {
    in_hw: (usize, usize),
    conv1_out: Tensor<T>,
    pool_arg: Vec<u32>,
    pool_shape: (usize, usize, usize),
    blocks: Vec<Vec<BlockTrace<T>>>,
    /// Per decoder level, top first: pre-activation of the first
    /// convolution, upsampled size, pre-activation of the second.
    dec: Vec<(Tensor<T>, (usize, usize), Tensor<T>)>,
    disp: Tensor<T>,
}

impl<T: Scalar> MonodepthNet<T> {
    fn skeleton(native: (usize, usize)) -> Self {
        let mut layers = Vec::new();
        let mut in_c = ENC_CH[0];
        for (l, &out_c) in ENC_CH[1..].iter().enumerate() {
            let stride = if l == 0 { 1 } else { 2 };
            layers.push(vec![BasicBlock::new(in_c, out_c, stride), BasicBlock::new(out_c, out_c, 1)]);
            in_c = out_c;
        }
        let mut upconv = Vec::new();
        for i in 0..5 {
            let in0 = if i == 4 { ENC_CH[4] } else { DEC_CH[i + 1] };
            let in1 = DEC_CH[i] + if i > 0 { ENC_CH[i - 1] } else { 0 };
            upconv.push((
                Conv2d::same3x3(in0, DEC_CH[i], PadMode::Reflect),
                Conv2d::same3x3(in1, DEC_CH[i], PadMode::Reflect),
            ));
        }
        MonodepthNet {
            conv1: Conv2d::new(3, ENC_CH[0], 7, 2, 3, PadMode::Zero),
            layers,
            upconv,
            dispconv: Conv2d::same3x3(DEC_CH[0], 1, PadMode::Reflect),
            native,
        }
    }

    fn conv_names(&self) -> Vec<String> {
        let mut v = vec!["encoder.conv1".to_string()];
        for (l, layer) in self.layers.iter().enumerate() {
            for (b, block) in layer.iter().enumerate() {
                v.push(format!("encoder.layer{}.{b}.conv1", l + 1));
                v.push(format!("encoder.layer{}.{b}.conv2", l + 1));
                if block.downsample.is_some() {
                    v.push(format!("encoder.layer{}.{b}.downsample", l + 1));
                }
            }
        }
        for i in 0..self.upconv.len() {
            v.push(format!("decoder.upconv_{i}_0"));
            v.push(format!("decoder.upconv_{i}_1"));
        }
        v.push("decoder.dispconv_0".into());
        v
    }

    /// Same order as [`MonodepthNet::conv_names`].
    fn convs(&self) -> Vec<&Conv2d<T>> {
        let mut v = vec![&self.conv1];
        for block in self.layers.iter().flatten() {
            v.push(&block.conv1);
            v.push(&block.conv2);
            v.extend(block.downsample.as_ref());
        }
        for (a, b) in &self.upconv {
            v.push(a);
            v.push(b);
        }
        v.push(&self.dispconv);
        v
    }

    fn convs_mut(&mut self) -> Vec<&mut Conv2d<T>> {
        let mut v = vec![&mut self.conv1];
        for block in self.layers.iter_mut().flatten() {
            v.push(&mut block.conv1);
            v.push(&mut block.conv2);
            v.extend(block.downsample.as_mut());
        }
        for (a, b) in &mut self.upconv {
            v.push(a);
            v.push(b);
        }
        v.push(&mut self.dispconv);
        v
    }

    fn check_native(native: (usize, usize)) -> Result<()> {
        if native.0 == 0 || native.1 == 0 || !native.0.is_multiple_of(32) || !native.1.is_multiple_of(32) {
            return Err(Error::CheckpointFormat(format!(
                "depth network input size {native:?} must be a positive multiple of 32"
            )));
        }
        Ok(())
    }

    /// Loads weights named `encoder.conv1`, `encoder.layer{1-4}.{0,1}.conv{1,2}`,
    /// `encoder.layer{2-4}.0.downsample`, `decoder.upconv_{i}_{j}` and
    /// `decoder.dispconv_0` (each with `.weight` and `.bias`). The optional
    /// `meta.native_hw` overrides the 192×640 working resolution.
    pub fn from_archive(a: &Archive) -> Result<Self> {
        let native = if a.contains("meta.native_hw") {
            let v = a.get_u64("meta.native_hw")?;
            if v.len() != 2 {
                return Err(Error::CheckpointFormat("meta.native_hw must hold 2 values".into()));
            }
            (v[0] as usize, v[1] as usize)
        } else {
            (NATIVE_HEIGHT, NATIVE_WIDTH)
        };
        Self::check_native(native)?;
        let mut net = Self::skeleton(native);
        let names = net.conv_names();
        for (name, c) in names.iter().zip(net.convs_mut()) {
            c.weight.value = a.get_as(&format!("{name}.weight"), &c.weight_shape())?;
            c.bias.value = a.get_as(&format!("{name}.bias"), &[c.out_c])?;
        }
        Ok(net)
    }

    /// Random weights at a reduced working resolution, for tests.
    pub fn random<R: Rng>(native: (usize, usize), rng: &mut R) -> Result<Self> {
        Self::check_native(native)?;
        let mut net = Self::skeleton(native);
        for c in net.convs_mut() {
            c.init_uniform(rng);
            // Keep deep stacks from exploding without batch norm.
            for w in &mut c.weight.value {
                *w *= T::lit(0.5);
            }
            c.bias.fill_uniform(0.05, rng);
        }
        Ok(net)
    }

    pub fn export(&self, a: &mut Archive) {
        let native = [self.native.0 as u64, self.native.1 as u64];
        for (name, c) in self.conv_names().iter().zip(self.convs()) {
            a.insert_scalars(format!("{name}.weight"), &c.weight_shape(), &c.weight.value);
            a.insert_scalars(format!("{name}.bias"), &[c.out_c], &c.bias.value);
        }
        a.insert_u64("meta.native_hw", &native);
    }

    pub fn native(&self) -> (usize, usize) {
        self.native
    }

    /// Sigmoid disparity at the native resolution, resized bilinearly back
    /// to the input size.
    pub fn disparity(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x, None)
    }

    pub fn disparity_traced(&self, x: &Tensor<T>) -> (Tensor<T>, MonodepthTrace<T>) {
        let mut trace = MonodepthTrace {
            in_hw: (x.h, x.w),
            conv1_out: Tensor::zeros(0, 0, 0),
            pool_arg: Vec::new(),
            pool_shape: (0, 0, 0),
            blocks: Vec::new(),
            dec: Vec::new(),
            disp: Tensor::zeros(0, 0, 0),
        };
        let y = self.run(x, Some(&mut trace));
        (y, trace)
    }

    fn run(&self, x: &Tensor<T>, mut trace: Option<&mut MonodepthTrace<T>>) -> Tensor<T> {
        let (nh, nw) = self.native;
        let in_hw = (x.h, x.w);
        let mut inp = resize_bilinear(x, nh, nw);
        let (m, s) = (T::lit(INPUT_MEAN), T::lit(INPUT_STD));
        inp.data.iter_mut().for_each(|v| *v = (*v - m) / s);

        let a = self.conv1.forward(&inp);
        let f0 = relu(&a);
        let (mut h, arg) = max_pool(&f0, 3, 2, 1);
        if let Some(t) = trace.as_deref_mut() {
            t.pool_shape = f0.shape();
            t.pool_arg = arg;
            t.conv1_out = a;
        }
        let mut feats = vec![f0];
        for layer in &self.layers {
            let mut bt = Vec::new();
            for block in layer {
                h = block.forward(&h, trace.is_some().then_some(&mut bt));
            }
            if let Some(t) = trace.as_deref_mut() {
                t.blocks.push(bt);
            }
            feats.push(h.clone());
        }

        let mut x = feats[4].clone();
        for i in (0..5).rev() {
            let (c0, c1) = &self.upconv[i];
            let a0 = c0.forward(&x);
            let u = upsample_nearest(&elu(&a0), 2 * x.h, 2 * x.w);
            let up_hw = (u.h, u.w);
            let cat = if i > 0 { concat_channels(&u, &feats[i - 1]) } else { u };
            let a1 = c1.forward(&cat);
            x = elu(&a1);
            if let Some(t) = trace.as_deref_mut() {
                t.dec.push((a0, up_hw, a1));
            }
        }
        let disp = sigmoid(&self.dispconv.forward(&x));
        let out = resize_bilinear(&disp, in_hw.0, in_hw.1);
        if let Some(t) = trace {
            t.disp = disp;
        }
        out
    }

    /// Input gradient of a scalar whose gradient with respect to
    /// [`MonodepthNet::disparity`]'s output is `gy`.
    pub fn disparity_backward(&self, t: &MonodepthTrace<T>, gy: &Tensor<T>) -> Tensor<T> {
        let (nh, nw) = self.native;
        let g_disp = resize_bilinear_backward(gy, nh, nw);
        let g_pre = sigmoid_backward(&t.disp, &g_disp);
        let mut g = self.dispconv.input_grad(nh, nw, &g_pre);

        let mut g_feats: Vec<Option<Tensor<T>>> = vec![None; 5];
        for i in 0..5 {
            let (c0, c1) = &self.upconv[i];
            let (a0, up_hw, a1) = &t.dec[4 - i];
            let g_a1 = elu_backward(a1, &g);
            let g_cat = c1.input_grad(up_hw.0, up_hw.1, &g_a1);
            let g_u = if i > 0 {
                let (gu, gskip) = split_channels(&g_cat, DEC_CH[i]);
                add_into(&mut g_feats[i - 1], gskip);
                gu
            } else {
                g_cat
            };
            let g_e = upsample_nearest_backward(&g_u, a0.h, a0.w);
            let g_a0 = elu_backward(a0, &g_e);
            g = c0.input_grad(a0.h, a0.w, &g_a0);
        }
        add_into(&mut g_feats[4], g);

        let mut g = g_feats[4].take().unwrap();
        for l in (0..4).rev() {
            for (block, bt) in self.layers[l].iter().zip(&t.blocks[l]).rev() {
                g = block.backward(bt, &g);
            }
            if l > 0 {
                g.add_assign(g_feats[l].as_ref().unwrap());
            }
        }
        let mut g_f0 = max_pool_backward(&g, &t.pool_arg, t.pool_shape);
        g_f0.add_assign(g_feats[0].as_ref().unwrap());
        let g_a = relu_backward(&t.conv1_out, &g_f0);
        let mut g_in = self.conv1.input_grad(nh, nw, &g_a);
        let s = T::lit(INPUT_STD);
        g_in.data.iter_mut().for_each(|v| *v /= s);
        resize_bilinear_backward(&g_in, t.in_hw.0, t.in_hw.1)
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Scaled depth from sigmoid disparity: `1 / (min_disp + (max_disp − min_disp)·disp)`.
pub fn disp_to_depth<T: Scalar>(disp: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = (T::lit(1.0 / MAX_DEPTH), T::lit(1.0 / MIN_DEPTH));
    disp.map(|d| T::one() / (lo + (hi - lo) * d))
}

pub fn disp_to_depth_backward<T: Scalar>(depth: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let span = T::lit(1.0 / MIN_DEPTH - 1.0 / MAX_DEPTH);
    depth.zip_map(gy, |z, g| -g * span * z * z)
}
