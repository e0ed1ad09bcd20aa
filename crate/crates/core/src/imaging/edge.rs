use std::path::Path;

use super::{GrayMap, Image, MapKind};
use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::nn::{max_pool, relu, resize_bilinear, sigmoid, Conv2d, PadMode};
use crate::tensor::Tensor;

/// File name looked up inside a weights directory.
pub const HED_FILE: &str = "hed.ldst";

/// Edge extractor used by the evaluation harness.
#[derive(Clone, Debug)]
pub enum EdgeBackend {
    /// Sobel gradient magnitude on luminance. Needs no weights.
    Sobel,
    /// Holistically-nested edge network loaded from an archive.
    Pretrained(Box<HedNet>),
}

impl EdgeBackend {
    pub fn name(&self) -> &'static str {
        match self {
            EdgeBackend::Sobel => "sobel",
            EdgeBackend::Pretrained(_) => "hed",
        }
    }

    /// `sobel`, or `hed` with weights at `weights_dir/hed.ldst`.
    pub fn from_name(name: &str, weights_dir: Option<&Path>) -> Result<Self> {
        match name {
            "sobel" => Ok(EdgeBackend::Sobel),
            "hed" => match weights_dir {
                Some(dir) => Self::pretrained(dir.join(HED_FILE)),
                None => Err(Error::BackendUnavailable {
                    backend: "hed".into(),
                    reason: "no weights directory configured".into(),
                }),
            },
            other => Err(Error::Argument(format!("unknown edge backend `{other}` (expected hed or sobel)"))),
        }
    }

    /// Loads pretrained edge weights. A missing file is reported as an
    /// unavailable backend rather than an I/O error.
    pub fn pretrained(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::BackendUnavailable {
                backend: "hed".into(),
                reason: format!("weights file {} not found", path.display()),
            });
        }
        Ok(EdgeBackend::Pretrained(Box::new(HedNet::from_archive(
            &Archive::read(path)?,
        )?)))
    }
}

/// Edge map in `[0, 1]` from the chosen backend.
pub fn edge_map(img: &Image, backend: &EdgeBackend) -> GrayMap {
    let mut map = match backend {
        EdgeBackend::Sobel => sobel_edges(img),
        EdgeBackend::Pretrained(net) => net.edges(img),
    };
    map.backend = Some(backend.name().to_string());
    map
}

/// Sobel gradient magnitude of luminance (edge-replicated borders),
/// divided by its maximum. A flat image yields all zeros.
pub fn sobel_edges(img: &Image) -> GrayMap {
    let lum = img.luminance();
    let (h, w) = (lum.height, lum.width);
    let at = |x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        lum.values[yc * w + xc] as f64
    };
    let mut mag = vec![0.0f64; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            mag[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    let values = mag
        .iter()
        .map(|&m| if max > 0.0 { (m / max) as f32 } else { 0.0 })
        .collect();
    GrayMap {
        width: w,
        height: h,
        values,
        kind: MapKind::Edge,
        backend: None,
    }
}

/// VGG-16 trunk with five side outputs fused by a 1×1 convolution.
#[derive(Clone, Debug)]
pub struct HedNet {
    stages: Vec<Vec<Conv2d<f32>>>,
    scores: Vec<Conv2d<f32>>,
    combine: Conv2d<f32>,
    /// Subtracted from 0–255 BGR input.
    bgr_mean: [f32; 3],
}

const HED_STAGES: [&[(usize, usize)]; 5] = [
    &[(3, 64), (64, 64)],
    &[(64, 128), (128, 128)],
    &[(128, 256), (256, 256), (256, 256)],
    &[(256, 512), (512, 512), (512, 512)],
    &[(512, 512), (512, 512), (512, 512)],
];

impl HedNet {
    pub fn from_archive(a: &Archive) -> Result<Self> {
        let load = |name: String, in_c: usize, out_c: usize, k: usize| -> Result<Conv2d<f32>> {
            let mut c = Conv2d::new(in_c, out_c, k, 1, k / 2, PadMode::Zero);
            c.weight.value = a.get_as(&format!("{name}.weight"), &c.weight_shape())?;
            c.bias.value = a.get_as(&format!("{name}.bias"), &[out_c])?;
            Ok(c)
        };
        let mut stages = Vec::new();
        let mut scores = Vec::new();
        for (s, convs) in HED_STAGES.iter().enumerate() {
            let mut stage = Vec::new();
            for (i, &(ic, oc)) in convs.iter().enumerate() {
                stage.push(load(format!("conv{}_{}", s + 1, i + 1), ic, oc, 3)?);
            }
            let last = convs.last().unwrap().1;
            scores.push(load(format!("score{}", s + 1), last, 1, 1)?);
            stages.push(stage);
        }
        let combine = load("combine".into(), 5, 1, 1)?;
        let mean = if a.contains("input.bgr_mean") {
            a.get_as::<f32>("input.bgr_mean", &[3])?
        } else {
            vec![104.006_99, 116.668_77, 122.678_92]
        };
        Ok(HedNet {
            stages,
            scores,
            combine,
            bgr_mean: [mean[0], mean[1], mean[2]],
        })
    }

    pub fn edges(&self, img: &Image) -> GrayMap {
        let (h, w) = img.dims();
        let rgb = img.to_tensor::<f32>();
        let mut x = Tensor::zeros(3, h, w);
        for c in 0..3 {
            let src = rgb.plane(2 - c);
            for (d, &s) in x.plane_mut(c).iter_mut().zip(src) {
                *d = s * 255.0 - self.bgr_mean[c];
            }
        }
        let mut sides = Vec::with_capacity(5);
        for (s, stage) in self.stages.iter().enumerate() {
            if s > 0 {
                x = max_pool(&x, 2, 2, 0).0;
            }
            for conv in stage {
                x = relu(&conv.forward(&x));
            }
            let side = self.scores[s].forward(&x);
            sides.push(resize_bilinear(&side, h, w));
        }
        let mut stacked = Tensor::zeros(5, h, w);
        for (i, s) in sides.iter().enumerate() {
            stacked.plane_mut(i).copy_from_slice(&s.data);
        }
        let out = sigmoid(&self.combine.forward(&stacked));
        GrayMap {
            width: w,
            height: h,
            values: out.data,
            kind: MapKind::Edge,
            backend: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::archive::TensorData;

    #[test]
    fn flat_image_has_no_edges() {
        let m = edge_map(&Image::filled(9, 7, [0.4, 0.4, 0.4]), &EdgeBackend::Sobel);
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert_eq!(m.backend.as_deref(), Some("sobel"));
    }

    #[test]
    fn vertical_step_peaks_beside_the_step() {
        let k = 6;
        let img = Image::from_fn(12, 8, |x, _| if x < k { [0.0; 3] } else { [1.0; 3] });
        let m = sobel_edges(&img);
        for y in 0..8 {
            for x in 0..12 {
                let v = m.at(x, y);
                if x == k - 1 || x == k {
                    assert_eq!(v, 1.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn missing_weights_report_backend_unavailable() {
        let err = EdgeBackend::pretrained("/nonexistent/hed.ldst").unwrap_err();
        assert!(matches!(err, Error::BackendUnavailable { .. }));
    }

    #[test]
    fn hed_forward_runs_on_random_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = Archive::new();
        let mut add = |name: String, shape: &[usize]| {
            let n: usize = shape.iter().product();
            let v = (0..n).map(|_| rng.gen_range(-0.05f32..0.05)).collect();
            a.insert(name, shape, TensorData::F32(v));
        };
        for (s, convs) in HED_STAGES.iter().enumerate() {
            for (i, &(ic, oc)) in convs.iter().enumerate() {
                add(format!("conv{}_{}.weight", s + 1, i + 1), &[oc, ic, 3, 3]);
                add(format!("conv{}_{}.bias", s + 1, i + 1), &[oc]);
            }
            let last = convs.last().unwrap().1;
            add(format!("score{}.weight", s + 1), &[1, last, 1, 1]);
            add(format!("score{}.bias", s + 1), &[1]);
        }
        add("combine.weight".into(), &[1, 5, 1, 1]);
        add("combine.bias".into(), &[1]);
        let net = HedNet::from_archive(&a).unwrap();
        let img = Image::from_fn(32, 32, |x, y| [(x ^ y) as f32 / 63.0, 0.5, 0.2]);
        let m = edge_map(&img, &EdgeBackend::Pretrained(Box::new(net)));
        assert_eq!(m.dims(), (32, 32));
        assert!(m.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(m.backend.as_deref(), Some("hed"));
    }
}
