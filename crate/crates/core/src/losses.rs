//! Content, style, Laplacian and depth losses with their gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::depth::{depth_backward, depth_tensor, depth_traced, DepthBackend};
use crate::encoder::{Encoder, FeatureBundle, Layer};
use crate::error::{Error, Result};
use crate::imaging::laplacian;
use crate::nn::{channel_stats, channel_stats_backward};
use crate::tensor::{Scalar, Tensor};

/// Epsilon inside the standard deviation of the style statistics.
pub const STYLE_EPS: f64 = 1e-6;

/// Layers the stylised image is encoded at for the loss.
pub const LOSS_LAYERS: [Layer; 4] = Layer::STYLE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub content: f64,
    pub style: f64,
    pub lap: f64,
    pub depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            content: 1.0,
            style: 3.0,
            lap: 0.1,
            depth: 20.0,
        }
    }
}

impl LossWeights {
    pub fn new(content: f64, style: f64, lap: f64, depth: f64) -> Result<Self> {
        let w = LossWeights {
            content,
            style,
            lap,
            depth,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("content", self.content),
            ("style", self.style),
            ("lap", self.lap),
            ("depth", self.depth),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::arg(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub content: f64,
    pub style: f64,
    pub lap: f64,
    pub depth: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_components(content: f64, style: f64, lap: f64, depth: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            content,
            style,
            lap,
            depth,
            total: w.content * content + w.style * style + w.lap * lap + w.depth * depth,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.content, self.style, self.lap, self.depth, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Component-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.content += b.content / n;
            m.style += b.style / n;
            m.lap += b.lap / n;
            m.depth += b.depth / n;
            m.total += b.total / n;
        }
        m
    }
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

fn layer_pair<'a, T: Scalar>(
    a: &'a FeatureBundle<T>,
    b: &'a FeatureBundle<T>,
    layer: Layer,
) -> Result<(&'a Tensor<T>, &'a Tensor<T>)> {
    let (x, y) = (a.get(layer)?, b.get(layer)?);
    if x.c != y.c {
        return Err(Error::dim(format!("{layer}: {} vs {} channels", x.c, y.c)));
    }
    Ok((x, y))
}

fn mse_grad<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, grad: bool) -> Result<(T, Option<Tensor<T>>)> {
    if !a.same_shape(b) {
        return Err(Error::dim(format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let n = T::from_usize(a.data.len()).unwrap();
    let loss = a.data.iter().zip(&b.data).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / n;
    let g = grad.then(|| {
        let k = T::lit(2.0) / n;
        a.zip_map(b, |x, y| k * (x - y))
    });
    Ok((loss, g))
}

/// Sum over relu4_1 and relu5_1 of the per-layer mean squared difference.
pub fn content_loss<T: Scalar>(stylized: &FeatureBundle<T>, content: &FeatureBundle<T>) -> Result<T> {
    Ok(content_loss_grad(stylized, content, false)?.0)
}

/// Content loss and, if `grad`, its gradient with respect to `stylized`.
pub fn content_loss_grad<T: Scalar>(
    stylized: &FeatureBundle<T>,
    content: &FeatureBundle<T>,
    grad: bool,
) -> Result<(T, BTreeMap<Layer, Tensor<T>>)> {
    let mut total = T::zero();
    let mut grads = BTreeMap::new();
    for layer in Layer::CONTENT {
        let (a, b) = layer_pair(stylized, content, layer)?;
        let (l, g) = mse_grad(a, b, grad)?;
        total += l;
        if let Some(g) = g {
            grads.insert(layer, g);
        }
    }
    Ok((total, grads))
}

fn norm_and_unit<T: Scalar>(d: &[T]) -> (T, Vec<T>) {
    let n = d.iter().map(|&v| v * v).sum::<T>().sqrt();
    let unit = if n > T::zero() {
        d.iter().map(|&v| v / n).collect()
    } else {
        vec![T::zero(); d.len()]
    };
    (n, unit)
}

/// Σ over relu2_1..relu5_1 of `‖μ(a) − μ(b)‖₂ + ‖σ(a) − σ(b)‖₂`, with
/// per-channel spatial statistics.
pub fn style_loss<T: Scalar>(stylized: &FeatureBundle<T>, style: &FeatureBundle<T>) -> Result<T> {
    Ok(style_loss_grad(stylized, style, false)?.0)
}

pub fn style_loss_grad<T: Scalar>(
    stylized: &FeatureBundle<T>,
    style: &FeatureBundle<T>,
    grad: bool,
) -> Result<(T, BTreeMap<Layer, Tensor<T>>)> {
    let eps = T::lit(STYLE_EPS);
    let mut total = T::zero();
    let mut grads = BTreeMap::new();
    for layer in Layer::STYLE {
        let (a, b) = layer_pair(stylized, style, layer)?;
        let (sa, sb) = (channel_stats(a, eps), channel_stats(b, eps));
        let dm: Vec<T> = sa.mean.iter().zip(&sb.mean).map(|(&x, &y)| x - y).collect();
        let ds: Vec<T> = sa.std.iter().zip(&sb.std).map(|(&x, &y)| x - y).collect();
        let (nm, um) = norm_and_unit(&dm);
        let (ns, us) = norm_and_unit(&ds);
        total += nm + ns;
        if grad {
            grads.insert(layer, channel_stats_backward(a, &sa, &um, &us));
        }
    }
    Ok((total, grads))
}

fn check_images<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if !a.same_shape(b) || a.c != 3 {
        return Err(Error::dim(format!(
            "expected two RGB images of equal size, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Squared difference of per-channel Laplacians, averaged over `3·H·W`.
pub fn laplacian_loss<T: Scalar>(stylized: &Tensor<T>, content: &Tensor<T>) -> Result<T> {
    Ok(laplacian_loss_grad(stylized, content, false)?.0)
}

pub fn laplacian_loss_grad<T: Scalar>(
    stylized: &Tensor<T>,
    content: &Tensor<T>,
    grad: bool,
) -> Result<(T, Option<Tensor<T>>)> {
    check_images(stylized, content)?;
    let (l, g) = mse_grad(&laplacian(stylized), &laplacian(content), grad)?;
    // The Laplacian operator is self-adjoint.
    Ok((l, g.map(|g| laplacian(&g))))
}

/// Mean squared difference of the two normalised depth maps.
pub fn depth_loss<T: Scalar>(
    backend: &DepthBackend<T>,
    stylized: &Tensor<T>,
    content: &Tensor<T>,
) -> Result<T> {
    check_images(stylized, content)?;
    let target = depth_tensor(backend, content)?;
    Ok(mse_grad(&depth_tensor(backend, stylized)?, &target, false)?.0)
}

/// Depth loss against a precomputed content depth map, with the gradient
/// with respect to `stylized`.
pub fn depth_loss_grad<T: Scalar>(
    backend: &DepthBackend<T>,
    stylized: &Tensor<T>,
    content_depth: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    let (d, trace) = depth_traced(backend, stylized)?;
    let (l, g) = mse_grad(&d, content_depth, true)?;
    Ok((l, depth_backward(backend, &trace, &g.unwrap())))
}

/// Everything the total loss compares the stylised image against.
pub struct LossTargets<'a, T> {
    pub content: &'a Tensor<T>,
    /// Encoder features of the content image (relu4_1, relu5_1).
    pub content_features: &'a FeatureBundle<T>,
    /// Encoder features of the style image (relu2_1..relu5_1).
    pub style_features: &'a FeatureBundle<T>,
    /// Normalised depth map of the content image.
    pub content_depth: &'a Tensor<T>,
}

/// Weighted total loss of `stylized` and its gradient with respect to
/// `stylized`.
pub fn total_loss<T: Scalar>(
    enc: &Encoder<T>,
    backend: &DepthBackend<T>,
    stylized: &Tensor<T>,
    targets: &LossTargets<'_, T>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Tensor<T>)> {
    check_images(stylized, targets.content)?;
    let (feats, trace) = enc.extract_traced(stylized, &LOSS_LAYERS)?;
    let (lc, gc) = content_loss_grad(&feats, targets.content_features, weights.content > 0.0)?;
    let (ls, gs) = style_loss_grad(&feats, targets.style_features, weights.style > 0.0)?;
    let (ll, gl) = laplacian_loss_grad(stylized, targets.content, weights.lap > 0.0)?;
    let (ld, gd) = depth_loss_grad(backend, stylized, targets.content_depth)?;

    let mut feat_grads: BTreeMap<Layer, Tensor<T>> = BTreeMap::new();
    for (g, w) in [(gc, weights.content), (gs, weights.style)] {
        let w = T::lit(w);
        for (layer, g) in g {
            match feat_grads.get_mut(&layer) {
                Some(acc) => acc.axpy(w, &g),
                None => {
                    let mut g = g;
                    g.scale(w);
                    feat_grads.insert(layer, g);
                }
            }
        }
    }
    let mut grad = enc.backward(&trace, &feat_grads);
    if let Some(gl) = gl {
        grad.axpy(T::lit(weights.lap), &gl);
    }
    if weights.depth > 0.0 {
        grad.axpy(T::lit(weights.depth), &gd);
    }
    let breakdown = LossBreakdown::from_components(to_f64(lc), to_f64(ls), to_f64(ll), to_f64(ld), weights);
    Ok((breakdown, grad))
}
