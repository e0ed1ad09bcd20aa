use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::decoder::{Decoder, DecoderTrace};
use super::sanet::{SanetBlock, SanetTrace};
use crate::archive::Archive;
use crate::encoder::{Encoder, EncoderSpec, FeatureBundle, Layer};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::nn::{pad2d, upsample_nearest, upsample_nearest_backward, Conv2d, PadMode, Param};
use crate::tensor::{Scalar, Tensor};

/// Encoder layers the attention blocks consume.
pub const MODEL_LAYERS: [Layer; 2] = [Layer::Relu4_1, Layer::Relu5_1];

/// Trainable half of the generator: attention blocks at relu4_1 and
/// relu5_1, the 3×3 fusion convolution and the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferModel<T> {
    spec: EncoderSpec,
    pub sanet4: SanetBlock<T>,
    pub sanet5: SanetBlock<T>,
    pub fusion: Conv2d<T>,
    pub decoder: Decoder<T>,
}

pub struct ModelTrace<T> {
    sanet4: SanetTrace<T>,
    sanet5: SanetTrace<T>,
    fusion_in: Tensor<T>,
    f5_hw: (usize, usize),
    decoder: DecoderTrace<T>,
    decoded_hw: (usize, usize),
}

impl<T: Scalar> TransferModel<T> {
    fn zeros(spec: EncoderSpec) -> Result<Self> {
        let w = spec.widths;
        if w[3] != w[4] {
            return Err(Error::dim(format!(
                "relu4_1 and relu5_1 widths must match for fusion, got {} and {}",
                w[3], w[4]
            )));
        }
        Ok(TransferModel {
            spec,
            sanet4: SanetBlock::zeros(w[3]),
            sanet5: SanetBlock::zeros(w[4]),
            fusion: Conv2d::same3x3(w[3], w[3], PadMode::Reflect),
            decoder: Decoder::zeros([w[0], w[1], w[2], w[3]]),
        })
    }

    /// Fan-in-scaled uniform initialisation drawn from `seed`.
    pub fn random(spec: EncoderSpec, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.sanet4 = SanetBlock::random(spec.widths[3], &mut rng);
        m.sanet5 = SanetBlock::random(spec.widths[4], &mut rng);
        m.fusion.init_uniform(&mut rng);
        m.decoder = Decoder::random([spec.widths[0], spec.widths[1], spec.widths[2], spec.widths[3]], &mut rng);
        Ok(m)
    }

    pub fn spec(&self) -> EncoderSpec {
        self.spec
    }

    pub fn check_encoder<U: Scalar>(&self, enc: &Encoder<U>) -> Result<()> {
        if enc.spec() != self.spec {
            return Err(Error::CheckpointFormat(format!(
                "model built for encoder widths {:?}, encoder has {:?}",
                self.spec.widths,
                enc.spec().widths
            )));
        }
        Ok(())
    }

    /// `conv3x3(f4 + nearest_up(f5))` at relu4_1 resolution.
    pub fn fuse_multiscale(&self, f4: &Tensor<T>, f5: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.fusion.forward(&self.fusion_input(f4, f5)?))
    }

    fn fusion_input(&self, f4: &Tensor<T>, f5: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.fusion.in_c;
        if f4.c != c || f5.c != c {
            return Err(Error::dim(format!(
                "fusion expects {c} channels, got {} and {}",
                f4.c, f5.c
            )));
        }
        let mut sum = upsample_nearest(f5, f4.h, f4.w);
        sum.add_assign(f4);
        Ok(sum)
    }

    /// The decoder input for a content/style pair (`F''`).
    pub fn fused_features(
        &self,
        content: &FeatureBundle<T>,
        style: &FeatureBundle<T>,
    ) -> Result<Tensor<T>> {
        let f4 = self
            .sanet4
            .forward(content.get(Layer::Relu4_1)?, style.get(Layer::Relu4_1)?)?;
        let f5 = self
            .sanet5
            .forward(content.get(Layer::Relu5_1)?, style.get(Layer::Relu5_1)?)?;
        self.fuse_multiscale(&f4, &f5)
    }

    /// Raw decoder output (not clamped, not cropped).
    pub fn decode_raw(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        self.decoder.forward(features)
    }

    /// Decodes, crops to the `height × width` content frame and clamps to
    /// `[0, 1]`.
    pub fn decode(&self, features: &Tensor<T>, height: usize, width: usize) -> Result<Image> {
        let raw = self.decode_raw(features)?;
        if raw.h < height || raw.w < width {
            return Err(Error::dim(format!(
                "decoded {}×{} is smaller than the {height}×{width} frame",
                raw.h, raw.w
            )));
        }
        Image::from_tensor_clamped(&raw.crop(0, 0, height, width))
    }

    /// Forward pass for training. Returns the raw output cropped to
    /// `height × width`.
    pub fn forward_traced(
        &self,
        content: &FeatureBundle<T>,
        style: &FeatureBundle<T>,
        height: usize,
        width: usize,
    ) -> Result<(Tensor<T>, ModelTrace<T>)> {
        let (f4, t4) = self
            .sanet4
            .forward_traced(content.get(Layer::Relu4_1)?, style.get(Layer::Relu4_1)?)?;
        let (f5, t5) = self
            .sanet5
            .forward_traced(content.get(Layer::Relu5_1)?, style.get(Layer::Relu5_1)?)?;
        let fusion_in = self.fusion_input(&f4, &f5)?;
        let fused = self.fusion.forward(&fusion_in);
        let (raw, dt) = self.decoder.forward_traced(&fused)?;
        if raw.h < height || raw.w < width {
            return Err(Error::dim("decoded output smaller than content frame"));
        }
        let trace = ModelTrace {
            sanet4: t4,
            sanet5: t5,
            fusion_in,
            f5_hw: (f5.h, f5.w),
            decoder: dt,
            decoded_hw: (raw.h, raw.w),
        };
        Ok((raw.crop(0, 0, height, width), trace))
    }

    /// Accumulates gradients of every trainable kernel given the gradient
    /// of the cropped raw output.
    pub fn backward(&mut self, trace: &ModelTrace<T>, gy: &Tensor<T>) {
        let (h, w) = trace.decoded_hw;
        let g = pad2d(gy, 0, h - gy.h, 0, w - gy.w, PadMode::Zero);
        let g_fused = self.decoder.backward(&trace.decoder, &g);
        self.fusion.accumulate_grads(&trace.fusion_in, &g_fused);
        let g_in = self
            .fusion
            .input_grad(trace.fusion_in.h, trace.fusion_in.w, &g_fused);
        let g5 = upsample_nearest_backward(&g_in, trace.f5_hw.0, trace.f5_hw.1);
        self.sanet4.backward(&trace.sanet4, &g_in);
        self.sanet5.backward(&trace.sanet5, &g5);
    }

    fn convs(&self) -> Vec<(String, &Conv2d<T>)> {
        let mut v = Vec::new();
        for (prefix, block) in [("sanet4", &self.sanet4), ("sanet5", &self.sanet5)] {
            for (n, c) in block.convs() {
                v.push((format!("{prefix}.{n}"), c));
            }
        }
        v.push(("fusion".to_string(), &self.fusion));
        for (i, c) in self.decoder.convs.iter().enumerate() {
            v.push((format!("decoder.{i}"), c));
        }
        v
    }

    fn convs_mut(&mut self) -> Vec<&mut Conv2d<T>> {
        let mut v: Vec<&mut Conv2d<T>> = Vec::new();
        v.extend(self.sanet4.convs_mut());
        v.extend(self.sanet5.convs_mut());
        v.push(&mut self.fusion);
        v.extend(self.decoder.convs.iter_mut());
        v
    }

    /// Every trainable array with its stable name, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        self.convs()
            .into_iter()
            .flat_map(|(n, c)| [(format!("{n}.weight"), &c.weight), (format!("{n}.bias"), &c.bias)])
            .collect()
    }

    /// Same order as [`TransferModel::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.convs_mut()
            .into_iter()
            .flat_map(|c| [&mut c.weight, &mut c.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.ensure_grad();
            p.zero_grad();
        }
    }

    pub fn export(&self, a: &mut Archive, prefix: &str) {
        a.insert_u64(format!("{prefix}widths"), &self.spec.widths.map(|w| w as u64));
        for (name, c) in self.convs() {
            a.insert_scalars(format!("{prefix}{name}.weight"), &c.weight_shape(), &c.weight.value);
            a.insert_scalars(format!("{prefix}{name}.bias"), &[c.out_c], &c.bias.value);
        }
    }

    pub fn from_archive(a: &Archive, prefix: &str) -> Result<Self> {
        let w = a.get_u64(&format!("{prefix}widths"))?;
        if w.len() != 5 || w.contains(&0) {
            return Err(Error::CheckpointFormat(format!("invalid model widths {w:?}")));
        }
        let spec = EncoderSpec {
            widths: [w[0], w[1], w[2], w[3], w[4]].map(|c| c as usize),
        };
        let mut m = Self::zeros(spec)?;
        let names: Vec<String> = m.convs().into_iter().map(|(n, _)| n).collect();
        for (name, c) in names.iter().zip(m.convs_mut()) {
            c.weight.value = a.get_as(&format!("{prefix}{name}.weight"), &c.weight_shape())?;
            c.bias.value = a.get_as(&format!("{prefix}{name}.bias"), &[c.out_c])?;
        }
        Ok(m)
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> TransferModel<U> {
        let mut a = Archive::new();
        self.export(&mut a, "");
        TransferModel::from_archive(&a, "").expect("exported model reloads")
    }
}

/// Encodes `img` at the layers the attention blocks consume.
pub fn encode<T: Scalar>(enc: &Encoder<T>, img: &Tensor<T>) -> Result<FeatureBundle<T>> {
    enc.extract(img, &MODEL_LAYERS)
}

/// Full pipeline: encode both images, attend, fuse, decode at the content
/// image's size.
pub fn stylize(
    model: &TransferModel<f32>,
    enc: &Encoder<f32>,
    content: &Image,
    style: &Image,
) -> Result<Image> {
    model.check_encoder(enc)?;
    let fc = encode(enc, &content.to_tensor())?;
    let fs = encode(enc, &style.to_tensor())?;
    let f = model.fused_features(&fc, &fs)?;
    let (h, w) = content.dims();
    model.decode(&f, h, w)
}
