//! Frozen VGG-19 feature extractor (conv1_1 through relu5_1).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::nn::{
    max_pool, max_pool_backward, pad2d, pad2d_backward, relu, relu_backward, Conv2d, PadMode,
};
use crate::tensor::{Scalar, Tensor};

/// Inputs are reflect-padded on the bottom/right edge up to a multiple of
/// this before encoding.
pub const SPATIAL_MULTIPLE: usize = 16;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Relu1_1,
    Relu2_1,
    Relu3_1,
    Relu4_1,
    Relu5_1,
}

impl Layer {
    pub const ALL: [Layer; 5] = [
        Layer::Relu1_1,
        Layer::Relu2_1,
        Layer::Relu3_1,
        Layer::Relu4_1,
        Layer::Relu5_1,
    ];
    /// Layers the content loss compares.
    pub const CONTENT: [Layer; 2] = [Layer::Relu4_1, Layer::Relu5_1];
    /// Layers the style loss compares.
    pub const STYLE: [Layer; 4] = [Layer::Relu2_1, Layer::Relu3_1, Layer::Relu4_1, Layer::Relu5_1];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Relu1_1 => "relu1_1",
            Layer::Relu2_1 => "relu2_1",
            Layer::Relu3_1 => "relu3_1",
            Layer::Relu4_1 => "relu4_1",
            Layer::Relu5_1 => "relu5_1",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Layer::ALL.into_iter().find(|l| l.name() == s)
    }

    /// Spatial downsampling factor relative to the (padded) input.
    pub fn stride(self) -> usize {
        1 << (self as usize)
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Channel widths of the five VGG stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderSpec {
    pub widths: [usize; 5],
}

/// Convolutions per VGG-19 stage, up to conv5_1.
const CONVS_PER_STAGE: [usize; 5] = [2, 2, 4, 4, 1];

impl EncoderSpec {
    pub fn vgg19() -> Self {
        EncoderSpec {
            widths: [64, 128, 256, 512, 512],
        }
    }

    /// VGG-19 topology with every width divided by `div` (for fast tests).
    pub fn narrow(div: usize) -> Self {
        let w = Self::vgg19().widths.map(|c| (c / div).max(1));
        EncoderSpec { widths: w }
    }

    pub fn channels(&self, layer: Layer) -> usize {
        self.widths[layer as usize]
    }

    /// (name, in_channels, out_channels) for every convolution in order.
    pub fn conv_table(&self) -> Vec<(String, usize, usize)> {
        let mut table = Vec::new();
        let mut in_c = 3;
        for (stage, &n) in CONVS_PER_STAGE.iter().enumerate() {
            for i in 0..n {
                let out_c = self.widths[stage];
                table.push((format!("conv{}_{}", stage + 1, i + 1), in_c, out_c));
                in_c = out_c;
            }
        }
        table
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Conv(usize),
    Relu,
    Pool,
    Tap(Layer),
}

fn op_sequence() -> Vec<Op> {
    let mut ops = Vec::new();
    let mut conv = 0;
    for (stage, &n) in CONVS_PER_STAGE.iter().enumerate() {
        if stage > 0 {
            ops.push(Op::Pool);
        }
        for i in 0..n {
            ops.push(Op::Conv(conv));
            ops.push(Op::Relu);
            if i == 0 {
                ops.push(Op::Tap(Layer::ALL[stage]));
            }
            conv += 1;
        }
    }
    ops
}

/// Activations at the requested layers.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle<T> {
    pub maps: BTreeMap<Layer, Tensor<T>>,
    /// Rows and columns of reflect padding added below/right of the input.
    pub pad: (usize, usize),
}

impl<T: Scalar> FeatureBundle<T> {
    pub fn get(&self, layer: Layer) -> Result<&Tensor<T>> {
        self.maps
            .get(&layer)
            .ok_or_else(|| Error::arg(format!("feature bundle lacks {layer}")))
    }

    pub fn layers(&self) -> impl Iterator<Item = Layer> + '_ {
        self.maps.keys().copied()
    }
}

/// Forward values kept for [`Encoder::backward`].
pub struct EncoderTrace<T> {
    input_hw: (usize, usize),
    pad: (usize, usize),
    /// Per executed op: its input (conv/relu) or pool bookkeeping.
    saved: Vec<Saved<T>>,
}

enum Saved<T> {
    Input(Tensor<T>),
    Pool {
        arg: Vec<u32>,
        shape: (usize, usize, usize),
    },
    None,
}

#[derive(Clone, Debug)]
pub struct Encoder<T> {
    spec: EncoderSpec,
    convs: Vec<Conv2d<T>>,
    names: Vec<String>,
    mean: [T; 3],
    std: [T; 3],
    ops: Vec<Op>,
}

/// File name looked up inside a weights directory.
pub const ENCODER_FILE: &str = "vgg19.ldst";

/// Loads a VGG-19 encoder from a named-tensor archive.
pub fn load_encoder(path: impl AsRef<Path>) -> Result<Encoder<f32>> {
    let archive = Archive::read(path)?;
    Encoder::from_archive(&archive, "")
}

impl<T: Scalar> Encoder<T> {
    fn assemble(spec: EncoderSpec, convs: Vec<Conv2d<T>>, names: Vec<String>, mean: [f64; 3], std: [f64; 3]) -> Self {
        Encoder {
            spec,
            convs,
            names,
            mean: mean.map(T::lit),
            std: std.map(T::lit),
            ops: op_sequence(),
        }
    }

    /// Randomly initialised encoder (He-uniform, seeded) with ImageNet input
    /// statistics. Stands in for pretrained weights in tests and when none
    /// are available.
    pub fn random(spec: EncoderSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut names = Vec::new();
        for (name, ic, oc) in spec.conv_table() {
            let mut c = Conv2d::same3x3(ic, oc, PadMode::Zero);
            c.init_uniform(&mut rng);
            convs.push(c);
            names.push(name);
        }
        Self::assemble(spec, convs, names, IMAGENET_MEAN, IMAGENET_STD)
    }

    /// Reads `{prefix}conv*_*.{weight,bias}` plus optional
    /// `{prefix}normalization.{mean,std}` and `{prefix}widths`. Widths
    /// default to standard VGG-19.
    pub fn from_archive(a: &Archive, prefix: &str) -> Result<Self> {
        let widths_key = format!("{prefix}widths");
        let spec = if a.contains(&widths_key) {
            let w = a.get_u64(&widths_key)?;
            if w.len() != 5 || w.contains(&0) {
                return Err(Error::CheckpointFormat(format!("invalid `{widths_key}`: {w:?}")));
            }
            EncoderSpec {
                widths: [w[0], w[1], w[2], w[3], w[4]].map(|c| c as usize),
            }
        } else {
            EncoderSpec::vgg19()
        };
        let mut convs = Vec::new();
        let mut names = Vec::new();
        for (name, ic, oc) in spec.conv_table() {
            let mut c = Conv2d::same3x3(ic, oc, PadMode::Zero);
            c.weight.value = a.get_as(&format!("{prefix}{name}.weight"), &c.weight_shape())?;
            c.bias.value = a.get_as(&format!("{prefix}{name}.bias"), &[oc])?;
            convs.push(c);
            names.push(name);
        }
        let stat = |key: &str, default: [f64; 3]| -> Result<[f64; 3]> {
            let full = format!("{prefix}normalization.{key}");
            if a.contains(&full) {
                let v = a.get_as::<f64>(&full, &[3])?;
                Ok([v[0], v[1], v[2]])
            } else {
                Ok(default)
            }
        };
        let mean = stat("mean", IMAGENET_MEAN)?;
        let std = stat("std", IMAGENET_STD)?;
        if std.iter().any(|&s| s <= 0.0) {
            return Err(Error::CheckpointFormat("normalization std must be positive".into()));
        }
        Ok(Self::assemble(spec, convs, names, mean, std))
    }

    pub fn export(&self, a: &mut Archive, prefix: &str) {
        for (name, c) in self.names.iter().zip(&self.convs) {
            a.insert_scalars(format!("{prefix}{name}.weight"), &c.weight_shape(), &c.weight.value);
            a.insert_scalars(format!("{prefix}{name}.bias"), &[c.out_c], &c.bias.value);
        }
        a.insert_scalars(format!("{prefix}normalization.mean"), &[3], &self.mean);
        a.insert_scalars(format!("{prefix}normalization.std"), &[3], &self.std);
        a.insert_u64(
            format!("{prefix}widths"),
            &self.spec.widths.map(|w| w as u64),
        );
    }

    pub fn spec(&self) -> EncoderSpec {
        self.spec
    }

    /// Named convolution, e.g. `conv1_1`.
    pub fn conv(&self, name: &str) -> Option<&Conv2d<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.convs[i])
    }

    pub fn named_convs(&self) -> impl Iterator<Item = (&str, &Conv2d<T>)> {
        self.names.iter().map(String::as_str).zip(&self.convs)
    }

    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        let cv = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64().unwrap())).collect::<Vec<U>>();
        let convs = self
            .convs
            .iter()
            .map(|c| {
                let mut n = Conv2d::same3x3(c.in_c, c.out_c, PadMode::Zero);
                n.weight.value = cv(&c.weight.value);
                n.bias.value = cv(&c.bias.value);
                n
            })
            .collect();
        Encoder {
            spec: self.spec,
            convs,
            names: self.names.clone(),
            mean: self.mean.map(|x| U::lit(x.to_f64().unwrap())),
            std: self.std.map(|x| U::lit(x.to_f64().unwrap())),
            ops: self.ops.clone(),
        }
    }

    fn pad_amount(h: usize, w: usize) -> (usize, usize) {
        let up = |n: usize| n.div_ceil(SPATIAL_MULTIPLE) * SPATIAL_MULTIPLE - n;
        (up(h), up(w))
    }

    fn prepare(&self, img: &Tensor<T>) -> Result<(Tensor<T>, (usize, usize))> {
        if img.c != 3 {
            return Err(Error::dim(format!("encoder expects RGB input, got {} channels", img.c)));
        }
        if img.h == 0 || img.w == 0 {
            return Err(Error::dim("empty image"));
        }
        let (ph, pw) = Self::pad_amount(img.h, img.w);
        let mut x = pad2d(img, 0, ph, 0, pw, PadMode::Reflect);
        for c in 0..3 {
            let (m, s) = (self.mean[c], self.std[c]);
            x.plane_mut(c).iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok((x, (ph, pw)))
    }

    fn run(
        &self,
        img: &Tensor<T>,
        layers: &[Layer],
        mut saved: Option<&mut Vec<Saved<T>>>,
    ) -> Result<FeatureBundle<T>> {
        let deepest = *layers
            .iter()
            .max()
            .ok_or_else(|| Error::arg("no encoder layers requested"))?;
        let (mut x, pad) = self.prepare(img)?;
        let mut maps = BTreeMap::new();
        for &op in &self.ops {
            match op {
                Op::Conv(i) => {
                    let y = self.convs[i].forward(&x);
                    if let Some(s) = saved.as_deref_mut() {
                        s.push(Saved::Input(std::mem::replace(&mut x, y)));
                    } else {
                        x = y;
                    }
                }
                Op::Relu => {
                    let y = relu(&x);
                    if let Some(s) = saved.as_deref_mut() {
                        s.push(Saved::Input(std::mem::replace(&mut x, y)));
                    } else {
                        x = y;
                    }
                }
                Op::Pool => {
                    let shape = x.shape();
                    let (y, arg) = max_pool(&x, 2, 2, 0);
                    if let Some(s) = saved.as_deref_mut() {
                        s.push(Saved::Pool { arg, shape });
                    }
                    x = y;
                }
                Op::Tap(layer) => {
                    if let Some(s) = saved.as_deref_mut() {
                        s.push(Saved::None);
                    }
                    if layers.contains(&layer) {
                        maps.insert(layer, x.clone());
                    }
                    if layer == deepest {
                        break;
                    }
                }
            }
        }
        Ok(FeatureBundle { maps, pad })
    }

    /// Activations at `layers` (deterministic; inputs whose sides are not a
    /// multiple of 16 are reflect-padded first).
    pub fn extract(&self, img: &Tensor<T>, layers: &[Layer]) -> Result<FeatureBundle<T>> {
        self.run(img, layers, None)
    }

    /// [`Encoder::extract`] that also records what [`Encoder::backward`] needs.
    pub fn extract_traced(
        &self,
        img: &Tensor<T>,
        layers: &[Layer],
    ) -> Result<(FeatureBundle<T>, EncoderTrace<T>)> {
        let mut saved = Vec::new();
        let bundle = self.run(img, layers, Some(&mut saved))?;
        Ok((
            bundle,
            EncoderTrace {
                input_hw: (img.h, img.w),
                pad: Self::pad_amount(img.h, img.w),
                saved,
            },
        ))
    }

    /// Gradient with respect to the input image of a scalar whose gradients
    /// at the tapped layers are `grads`. Weights stay frozen.
    pub fn backward(
        &self,
        trace: &EncoderTrace<T>,
        grads: &BTreeMap<Layer, Tensor<T>>,
    ) -> Tensor<T> {
        let executed = trace.saved.len();
        let mut g: Option<Tensor<T>> = None;
        for (op, saved) in self.ops[..executed].iter().zip(&trace.saved).rev() {
            match (op, saved) {
                (Op::Tap(layer), _) => {
                    if let Some(gl) = grads.get(layer) {
                        match g.as_mut() {
                            Some(acc) => acc.add_assign(gl),
                            None => g = Some(gl.clone()),
                        }
                    }
                }
                (Op::Relu, Saved::Input(x)) => {
                    if let Some(gy) = g.take() {
                        g = Some(relu_backward(x, &gy));
                    }
                }
                (Op::Conv(i), Saved::Input(x)) => {
                    if let Some(gy) = g.take() {
                        g = Some(self.convs[*i].input_grad(x.h, x.w, &gy));
                    }
                }
                (Op::Pool, Saved::Pool { arg, shape }) => {
                    if let Some(gy) = g.take() {
                        g = Some(max_pool_backward(&gy, arg, *shape));
                    }
                }
                _ => unreachable!("trace does not match op sequence"),
            }
        }
        let (h, w) = trace.input_hw;
        let mut g = g.unwrap_or_else(|| Tensor::zeros(3, h + trace.pad.0, w + trace.pad.1));
        for c in 0..3 {
            let s = self.std[c];
            g.plane_mut(c).iter_mut().for_each(|v| *v /= s);
        }
        pad2d_backward(&g, h, w, 0, 0, PadMode::Reflect)
    }
}

impl Encoder<f32> {
    pub fn extract_image(&self, img: &Image, layers: &[Layer]) -> Result<FeatureBundle<f32>> {
        self.extract(&img.to_tensor(), layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Encoder<f64> {
        Encoder::random(EncoderSpec::narrow(16), 7)
    }

    fn noise(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(3, h, w, (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect())
            .unwrap()
    }

    fn rand_like(t: &Tensor<f64>, seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..t.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(t.c, t.h, t.w, data).unwrap()
    }

    #[test]
    fn conv_table_matches_vgg19() {
        let t = EncoderSpec::vgg19().conv_table();
        assert_eq!(t.len(), 13);
        assert_eq!(t[0], ("conv1_1".to_string(), 3, 64));
        assert_eq!(t[4], ("conv3_1".to_string(), 128, 256));
        assert_eq!(t[12], ("conv5_1".to_string(), 512, 512));
        let enc = Encoder::<f32>::random(EncoderSpec::vgg19(), 0);
        assert_eq!(enc.conv("conv1_1").unwrap().weight_shape(), [64, 3, 3, 3]);
    }

    #[test]
    fn strides_and_channels() {
        let enc = small();
        let b = enc.extract(&noise(32, 48, 1), &Layer::ALL).unwrap();
        for l in Layer::ALL {
            let t = b.get(l).unwrap();
            assert_eq!((t.h, t.w), (32 / l.stride(), 48 / l.stride()), "{l}");
            assert_eq!(t.c, enc.spec().channels(l));
            assert!(t.data.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn subset_request_and_empty_request() {
        let enc = small();
        let b = enc.extract(&noise(16, 16, 2), &[Layer::Relu4_1]).unwrap();
        assert_eq!(b.maps.len(), 1);
        assert!(matches!(enc.extract(&noise(16, 16, 2), &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn odd_sizes_are_padded_and_recorded() {
        let enc = small();
        let b = enc.extract(&noise(20, 17, 3), &[Layer::Relu5_1]).unwrap();
        assert_eq!(b.pad, (12, 15));
        assert_eq!(b.get(Layer::Relu5_1).unwrap().h, 2);
    }

    #[test]
    fn extraction_is_deterministic() {
        let enc = small();
        let z = Tensor::zeros(3, 16, 16);
        assert_eq!(enc.extract(&z, &Layer::ALL).unwrap(), enc.extract(&z, &Layer::ALL).unwrap());
    }

    #[test]
    fn archive_round_trip_and_missing_layer() {
        let enc = Encoder::<f32>::random(EncoderSpec::narrow(8), 3);
        let mut a = Archive::new();
        enc.export(&mut a, "");
        let back = Encoder::<f32>::from_archive(&a, "").unwrap();
        for ((_, x), (_, y)) in enc.named_convs().zip(back.named_convs()) {
            assert_eq!(x, y);
        }
        a.tensors.remove("conv5_1.weight");
        let err = Encoder::<f32>::from_archive(&a, "").unwrap_err();
        assert!(matches!(err, Error::CheckpointFormat(ref m) if m.contains("conv5_1")));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let enc = small();
        let x = noise(6, 6, 4);
        let layers = [Layer::Relu3_1, Layer::Relu5_1];
        let (b, trace) = enc.extract_traced(&x, &layers).unwrap();
        // Objective: fixed random projection of the tapped activations.
        let proj: BTreeMap<Layer, Tensor<f64>> = layers
            .iter()
            .map(|&l| (l, rand_like(b.get(l).unwrap(), 10 + l as u64)))
            .collect();
        let f = |x: &Tensor<f64>| -> f64 {
            let b = enc.extract(x, &layers).unwrap();
            layers
                .iter()
                .map(|l| {
                    b.get(*l)
                        .unwrap()
                        .data
                        .iter()
                        .zip(&proj[l].data)
                        .map(|(a, p)| a * p)
                        .sum::<f64>()
                })
                .sum()
        };
        let g = enc.backward(&trace, &proj);
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += 1e-6;
            let mut xm = x.clone();
            xm.data[i] -= 1e-6;
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            assert!((fd - g.data[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g.data[i]);
        }
    }
}
