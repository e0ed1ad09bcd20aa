//! Inference-time controls: content/style trade-off, style mixing and
//! spatial masks. All of them act on the fused decoder input `F''`.

use log::warn;

use crate::encoder::{Encoder, FeatureBundle, Layer};
use crate::error::{Error, Result};
use crate::imaging::{GrayMap, Image};
use crate::nn::{pad2d, PadMode};
use crate::tensor::Tensor;
use crate::transfer::{encode, TransferModel};

/// Clamps `alpha` into `[0, 1]`, warning when it had to. NaN is rejected.
pub fn clamp_alpha(alpha: f64) -> Result<f64> {
    if alpha.is_nan() {
        return Err(Error::arg("alpha is NaN"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        let c = alpha.clamp(0.0, 1.0);
        warn!("alpha {alpha} outside [0, 1], clamped to {c}");
        return Ok(c);
    }
    Ok(alpha)
}

/// `(1 − α)·f_cc + α·f_cs`. The endpoints return the operand unchanged so
/// they stay bit-identical to the unblended paths.
pub fn blend(f_cc: &Tensor<f32>, f_cs: &Tensor<f32>, alpha: f64) -> Result<Tensor<f32>> {
    if !f_cc.same_shape(f_cs) {
        return Err(Error::dim(format!(
            "cannot blend {:?} with {:?}",
            f_cc.shape(),
            f_cs.shape()
        )));
    }
    let alpha = clamp_alpha(alpha)?;
    if alpha == 0.0 {
        return Ok(f_cc.clone());
    }
    if alpha == 1.0 {
        return Ok(f_cs.clone());
    }
    let (a, b) = ((1.0 - alpha) as f32, alpha as f32);
    Ok(f_cc.zip_map(f_cs, |x, y| a * x + b * y))
}

struct Prepared<'a> {
    model: &'a TransferModel<f32>,
    content: FeatureBundle<f32>,
    hw: (usize, usize),
}

impl<'a> Prepared<'a> {
    fn new(model: &'a TransferModel<f32>, enc: &Encoder<f32>, content: &Image) -> Result<Self> {
        model.check_encoder(enc)?;
        Ok(Prepared {
            model,
            content: encode(enc, &content.to_tensor())?,
            hw: content.dims(),
        })
    }

    /// `F''_cc`: the content image attending to itself.
    fn reconstruction(&self) -> Result<Tensor<f32>> {
        self.model.fused_features(&self.content, &self.content)
    }

    fn stylized(&self, enc: &Encoder<f32>, style: &Image) -> Result<Tensor<f32>> {
        let s = encode(enc, &style.to_tensor())?;
        self.model.fused_features(&self.content, &s)
    }

    fn decode(&self, f: &Tensor<f32>) -> Result<Image> {
        self.model.decode(f, self.hw.0, self.hw.1)
    }
}

/// Decoder input for the trade-off between reconstruction and style.
pub fn alpha_features(
    model: &TransferModel<f32>,
    enc: &Encoder<f32>,
    content: &Image,
    style: &Image,
    alpha: f64,
) -> Result<Tensor<f32>> {
    let alpha = clamp_alpha(alpha)?;
    let p = Prepared::new(model, enc, content)?;
    if alpha == 0.0 {
        return p.reconstruction();
    }
    let f_cs = p.stylized(enc, style)?;
    if alpha == 1.0 {
        return Ok(f_cs);
    }
    blend(&p.reconstruction()?, &f_cs, alpha)
}

pub fn stylize_with_alpha(
    model: &TransferModel<f32>,
    enc: &Encoder<f32>,
    content: &Image,
    style: &Image,
    alpha: f64,
) -> Result<Image> {
    let f = alpha_features(model, enc, content, style, alpha)?;
    model.decode(&f, content.height(), content.width())
}

/// The content image decoded from its own attention features.
pub fn reconstruct(model: &TransferModel<f32>, enc: &Encoder<f32>, content: &Image) -> Result<Image> {
    let p = Prepared::new(model, enc, content)?;
    p.decode(&p.reconstruction()?)
}

/// Styles with non-negative weights normalised to sum to one.
#[derive(Debug, Clone)]
pub struct StyleMix {
    styles: Vec<Image>,
    weights: Vec<f64>,
}

impl StyleMix {
    pub fn new(styles: Vec<Image>, weights: Vec<f64>) -> Result<Self> {
        if styles.is_empty() {
            return Err(Error::arg("style mix needs at least one style"));
        }
        if styles.len() != weights.len() {
            return Err(Error::arg(format!(
                "{} styles but {} weights",
                styles.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::arg("style weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::arg("style weights sum to zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(StyleMix { styles, weights })
    }

    /// Equal weights.
    pub fn uniform(styles: Vec<Image>) -> Result<Self> {
        let n = styles.len();
        Self::new(styles, vec![1.0; n])
    }

    pub fn styles(&self) -> &[Image] {
        &self.styles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `Σ w_k · f_k` over same-shaped feature maps.
pub fn weighted_sum(features: &[Tensor<f32>], weights: &[f64]) -> Result<Tensor<f32>> {
    let first = features
        .first()
        .ok_or_else(|| Error::arg("nothing to combine"))?;
    if features.len() != weights.len() {
        return Err(Error::arg("feature and weight counts differ"));
    }
    let mut out = Tensor::zeros(first.c, first.h, first.w);
    for (f, &w) in features.iter().zip(weights) {
        if !f.same_shape(first) {
            return Err(Error::dim("style features differ in shape"));
        }
        out.axpy(w as f32, f);
    }
    Ok(out)
}

pub fn multi_features(
    model: &TransferModel<f32>,
    enc: &Encoder<f32>,
    content: &Image,
    mix: &StyleMix,
) -> Result<Tensor<f32>> {
    let p = Prepared::new(model, enc, content)?;
    let feats = mix
        .styles
        .iter()
        .map(|s| p.stylized(enc, s))
        .collect::<Result<Vec<_>>>()?;
    weighted_sum(&feats, &mix.weights)
}

pub fn stylize_multi(
    model: &TransferModel<f32>,
    enc: &Encoder<f32>,
    content: &Image,
    mix: &StyleMix,
) -> Result<Image> {
    let f = multi_features(model, enc, content, mix)?;
    model.decode(&f, content.height(), content.width())
}

/// A soft region (1 = full style) bound to one entry of a style list.
#[derive(Debug, Clone)]
pub struct RegionMask {
    pub mask: GrayMap,
    pub style_index: usize,
}

/// Area-averages a content-resolution mask onto the relu4_1 grid. The mask
/// is reflect-padded exactly like the image, so each cell is the mean of
/// one `stride × stride` block.
pub fn feature_mask(mask: &GrayMap, pad: (usize, usize)) -> Tensor<f32> {
    let stride = Layer::Relu4_1.stride();
    let m = pad2d(&mask.to_tensor::<f32>(), 0, pad.0, 0, pad.1, PadMode::Reflect);
    let (fh, fw) = (m.h / stride, m.w / stride);
    let inv = 1.0 / (stride * stride) as f32;
    let mut out = Tensor::zeros(1, fh, fw);
    for y in 0..fh {
        for x in 0..fw {
            let mut s = 0.0f32;
            for dy in 0..stride {
                let row = &m.data[(y * stride + dy) * m.w + x * stride..][..stride];
                s += row.iter().sum::<f32>();
            }
            out.data[y * fw + x] = s * inv;
        }
    }
    out
}

/// Composes `Σ m_k ∘ f_k + (1 − Σ m_k) ∘ f_cc` per position. Where masks
/// overlap beyond full coverage they are rescaled to sum to one.
pub fn compose_regions(
    f_cc: Option<&Tensor<f32>>,
    styled: &[(Tensor<f32>, &Tensor<f32>)],
) -> Result<Tensor<f32>> {
    let shape = match (f_cc, styled.first()) {
        (Some(f), _) => f.shape(),
        (None, Some((m, f))) => (f.c, m.h, m.w),
        (None, None) => return Err(Error::arg("no regions to compose")),
    };
    let (c, h, w) = shape;
    let plane = h * w;
    let mut cover = vec![0.0f32; plane];
    for (m, f) in styled {
        if (m.h, m.w) != (h, w) || f.shape() != shape {
            return Err(Error::dim("region mask and features disagree in shape"));
        }
        for (s, &v) in cover.iter_mut().zip(&m.data) {
            *s += v;
        }
    }
    let scale: Vec<f32> = cover.iter().map(|&s| if s > 1.0 { 1.0 / s } else { 1.0 }).collect();
    let rest: Vec<f32> = cover.iter().map(|&s| (1.0 - s).max(0.0)).collect();
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let o = &mut out.data[ch * plane..][..plane];
        for (m, f) in styled {
            let fp = f.plane(ch);
            for i in 0..plane {
                let wgt = m.data[i] * scale[i];
                if wgt != 0.0 {
                    o[i] += wgt * fp[i];
                }
            }
        }
        if let Some(fcc) = f_cc {
            let fp = fcc.plane(ch);
            for i in 0..plane {
                if rest[i] != 0.0 {
                    o[i] += rest[i] * fp[i];
                }
            }
        } else if rest.iter().any(|&r| r != 0.0) {
            return Err(Error::arg("uncovered positions need reconstruction features"));
        }
    }
    Ok(out)
}

pub fn spatial_features(
    model: &TransferModel<f32>,
    enc: &Encoder<f32>,
    content: &Image,
    styles: &[Image],
    regions: &[RegionMask],
) -> Result<Tensor<f32>> {
    spatial_with(&Prepared::new(model, enc, content)?, enc, styles, regions)
}

fn spatial_with(p: &Prepared, enc: &Encoder<f32>, styles: &[Image], regions: &[RegionMask]) -> Result<Tensor<f32>> {
    let mut masks = Vec::with_capacity(regions.len());
    for r in regions {
        if r.mask.dims() != p.hw {
            return Err(Error::dim(format!(
                "mask is {:?} but content is {:?} (height, width)",
                r.mask.dims(),
                p.hw
            )));
        }
        if r.style_index >= styles.len() {
            return Err(Error::arg(format!(
                "region refers to style {} of {}",
                r.style_index,
                styles.len()
            )));
        }
        masks.push(feature_mask(&r.mask, p.content.pad));
    }
    let mut cache: Vec<Option<Tensor<f32>>> = vec![None; styles.len()];
    for r in regions {
        if cache[r.style_index].is_none() {
            cache[r.style_index] = Some(p.stylized(enc, &styles[r.style_index])?);
        }
    }
    let full = masks.iter().fold(None::<Vec<f32>>, |acc, m| {
        Some(match acc {
            None => m.data.clone(),
            Some(mut a) => {
                a.iter_mut().zip(&m.data).for_each(|(s, v)| *s += v);
                a
            }
        })
    });
    let covered = full.is_some_and(|c| c.iter().all(|&s| s >= 1.0));
    let f_cc = if covered { None } else { Some(p.reconstruction()?) };
    let styled: Vec<(Tensor<f32>, &Tensor<f32>)> = masks
        .into_iter()
        .zip(regions)
        .map(|(m, r)| (m, cache[r.style_index].as_ref().expect("style features cached")))
        .collect();
    compose_regions(f_cc.as_ref(), &styled)
}

pub fn stylize_spatial(
    model: &TransferModel<f32>,
    enc: &Encoder<f32>,
    content: &Image,
    styles: &[Image],
    regions: &[RegionMask],
) -> Result<Image> {
    let f = spatial_features(model, enc, content, styles, regions)?;
    model.decode(&f, content.height(), content.width())
}

/// Every control at once, as the service exposes them. Regions pick their
/// style by index and ignore the mix weights; without regions the styles
/// are mixed by weight. `alpha` then blends the result with the content
/// reconstruction. Single-style and pure-control requests take exactly the
/// same path as [`stylize_with_alpha`], [`stylize_multi`] and
/// [`stylize_spatial`].
pub fn stylize_controlled(
    model: &TransferModel<f32>,
    enc: &Encoder<f32>,
    content: &Image,
    mix: &StyleMix,
    alpha: f64,
    regions: &[RegionMask],
) -> Result<Image> {
    let alpha = clamp_alpha(alpha)?;
    if regions.is_empty() && mix.styles.len() == 1 {
        return stylize_with_alpha(model, enc, content, &mix.styles[0], alpha);
    }
    let p = Prepared::new(model, enc, content)?;
    if alpha == 0.0 {
        return p.decode(&p.reconstruction()?);
    }
    let f = if regions.is_empty() {
        let feats = mix
            .styles
            .iter()
            .map(|s| p.stylized(enc, s))
            .collect::<Result<Vec<_>>>()?;
        weighted_sum(&feats, &mix.weights)?
    } else {
        spatial_with(&p, enc, &mix.styles, regions)?
    };
    if alpha == 1.0 {
        return p.decode(&f);
    }
    p.decode(&blend(&p.reconstruction()?, &f, alpha)?)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::encoder::EncoderSpec;
    use crate::imaging::MapKind;
    use crate::transfer::stylize;

    fn rand_img(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_planar(w, h, (0..3 * w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn setup() -> (TransferModel<f32>, Encoder<f32>) {
        let spec = EncoderSpec::narrow(16);
        (TransferModel::random(spec, 3).unwrap(), Encoder::random(spec, 4))
    }

    fn mask(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> GrayMap {
        let v = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        GrayMap::new(w, h, v, MapKind::Mask).unwrap()
    }

    #[test]
    fn alpha_is_clamped_and_nan_rejected() {
        assert_eq!(clamp_alpha(1.7).unwrap(), 1.0);
        assert_eq!(clamp_alpha(-0.2).unwrap(), 0.0);
        assert_eq!(clamp_alpha(0.25).unwrap(), 0.25);
        assert!(clamp_alpha(f64::NAN).is_err());
    }

    #[test]
    fn alpha_endpoints_match_plain_paths() {
        let (m, e) = setup();
        let (c, s) = (rand_img(24, 20, 1), rand_img(16, 16, 2));
        assert_eq!(stylize_with_alpha(&m, &e, &c, &s, 1.0).unwrap(), stylize(&m, &e, &c, &s).unwrap());
        assert_eq!(stylize_with_alpha(&m, &e, &c, &s, 0.0).unwrap(), stylize(&m, &e, &c, &c).unwrap());
        assert_eq!(reconstruct(&m, &e, &c).unwrap(), stylize(&m, &e, &c, &c).unwrap());
        assert_eq!(stylize_with_alpha(&m, &e, &c, &s, 3.0).unwrap(), stylize(&m, &e, &c, &s).unwrap());
    }

    #[test]
    fn mix_normalises_and_checks_lengths() {
        let s = rand_img(8, 8, 0);
        let mix = StyleMix::new(vec![s.clone(), s.clone()], vec![1.0, 3.0]).unwrap();
        assert_eq!(mix.weights(), &[0.25, 0.75]);
        assert!(StyleMix::new(vec![s.clone()], vec![0.5, 0.5]).is_err());
        assert!(StyleMix::new(vec![s.clone()], vec![-1.0]).is_err());
        assert!(StyleMix::new(vec![s], vec![0.0]).is_err());
        assert!(StyleMix::new(vec![], vec![]).is_err());
    }

    #[test]
    fn mix_degenerate_cases() {
        let (m, e) = setup();
        let (c, s, t) = (rand_img(16, 16, 1), rand_img(16, 16, 2), rand_img(16, 16, 3));
        let single = StyleMix::new(vec![s.clone()], vec![1.0]).unwrap();
        assert_eq!(stylize_multi(&m, &e, &c, &single).unwrap(), stylize(&m, &e, &c, &s).unwrap());
        let twin = StyleMix::new(vec![s.clone(), s.clone()], vec![0.3, 0.7]).unwrap();
        let a = multi_features(&m, &e, &c, &twin).unwrap();
        let b = multi_features(&m, &e, &c, &single).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-6);
        let ab = StyleMix::new(vec![s.clone(), t.clone()], vec![0.2, 0.8]).unwrap();
        let ba = StyleMix::new(vec![t, s], vec![0.8, 0.2]).unwrap();
        let d = multi_features(&m, &e, &c, &ab).unwrap().max_abs_diff(&multi_features(&m, &e, &c, &ba).unwrap());
        assert!(d < 1e-6);
    }

    #[test]
    fn feature_mask_is_block_mean() {
        let g = mask(16, 16, |x, y| if x < 4 && y < 8 { 1.0 } else { 0.0 });
        let f = feature_mask(&g, (0, 0));
        assert_eq!(f.shape(), (1, 2, 2));
        assert_eq!(f.data, vec![0.5, 0.0, 0.0, 0.0]);
        let odd = feature_mask(&mask(20, 10, |_, _| 1.0), (6, 12));
        assert_eq!(odd.shape(), (1, 2, 4));
        assert!(odd.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn spatial_coverage_cases() {
        let (m, e) = setup();
        let (c, s) = (rand_img(24, 16, 5), rand_img(16, 16, 6));
        let styles = vec![s.clone()];
        let full = RegionMask { mask: mask(24, 16, |_, _| 1.0), style_index: 0 };
        let a = stylize_spatial(&m, &e, &c, &styles, &[full]).unwrap();
        assert_eq!(a, stylize(&m, &e, &c, &s).unwrap());
        let empty = RegionMask { mask: mask(24, 16, |_, _| 0.0), style_index: 0 };
        let b = stylize_spatial(&m, &e, &c, &styles, &[empty]).unwrap();
        assert_eq!(b, reconstruct(&m, &e, &c).unwrap());
        let wrong = RegionMask { mask: mask(20, 16, |_, _| 1.0), style_index: 0 };
        assert!(matches!(stylize_spatial(&m, &e, &c, &styles, &[wrong]), Err(Error::Dimension(_))));
        let bad_index = RegionMask { mask: mask(24, 16, |_, _| 1.0), style_index: 1 };
        assert!(stylize_spatial(&m, &e, &c, &styles, &[bad_index]).is_err());
    }

    #[test]
    fn overlapping_masks_are_rescaled() {
        let f1 = Tensor::full(2, 1, 2, 1.0f32);
        let f2 = Tensor::full(2, 1, 2, 3.0f32);
        let fcc = Tensor::full(2, 1, 2, 10.0f32);
        let m1 = Tensor::from_vec(1, 1, 2, vec![1.0, 0.5]).unwrap();
        let m2 = Tensor::from_vec(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let out = compose_regions(Some(&fcc), &[(m1, &f1), (m2, &f2)]).unwrap();
        assert_eq!(out.data, vec![2.0, 5.5, 2.0, 5.5]);
    }

    #[test]
    fn controlled_dispatch_matches_pure_paths() {
        let (m, e) = setup();
        let c = rand_img(40, 36, 1);
        let (s1, s2) = (rand_img(32, 32, 2), rand_img(36, 28, 3));
        let one = StyleMix::uniform(vec![s1.clone()]).unwrap();
        for a in [0.0, 0.4, 1.0] {
            assert_eq!(
                stylize_controlled(&m, &e, &c, &one, a, &[]).unwrap(),
                stylize_with_alpha(&m, &e, &c, &s1, a).unwrap()
            );
        }
        let two = StyleMix::new(vec![s1.clone(), s2.clone()], vec![1.0, 3.0]).unwrap();
        assert_eq!(
            stylize_controlled(&m, &e, &c, &two, 1.0, &[]).unwrap(),
            stylize_multi(&m, &e, &c, &two).unwrap()
        );
        assert_eq!(
            stylize_controlled(&m, &e, &c, &two, 0.0, &[]).unwrap(),
            reconstruct(&m, &e, &c).unwrap()
        );
        let regions = [RegionMask {
            mask: mask(40, 36, |x, _| if x < 20 { 1.0 } else { 0.0 }),
            style_index: 1,
        }];
        let styles = [s1, s2];
        assert_eq!(
            stylize_controlled(&m, &e, &c, &two, 1.0, &regions).unwrap(),
            stylize_spatial(&m, &e, &c, &styles, &regions).unwrap()
        );
        let half = stylize_controlled(&m, &e, &c, &two, 0.5, &regions).unwrap();
        assert_ne!(half, stylize_spatial(&m, &e, &c, &styles, &regions).unwrap());
    }
}
