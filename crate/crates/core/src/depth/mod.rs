//! Monocular depth maps for the global structure loss.

mod monodepth;
mod stub;

use std::path::Path;

pub use monodepth::{
    disp_to_depth, disp_to_depth_backward, MonodepthNet, MonodepthTrace, MAX_DEPTH, MIN_DEPTH,
    NATIVE_HEIGHT, NATIVE_WIDTH,
};
pub use stub::BOX as STUB_BOX;

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::imaging::{GrayMap, Image, MapKind};
use crate::tensor::{Scalar, Tensor};

/// File name looked up inside a weights directory.
pub const MONODEPTH_FILE: &str = "monodepth.ldst";

#[derive(Clone, Debug)]
pub enum DepthBackend<T = f32> {
    /// Inverted, box-blurred luminance. Needs no weights.
    Stub,
    Monodepth(Box<MonodepthNet<T>>),
}

impl<T: Scalar> DepthBackend<T> {
    pub fn name(&self) -> &'static str {
        match self {
            DepthBackend::Stub => "stub",
            DepthBackend::Monodepth(_) => "monodepth",
        }
    }

    pub fn monodepth(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::BackendUnavailable {
                backend: "monodepth".into(),
                reason: format!("weights file {} not found", path.display()),
            });
        }
        let net = MonodepthNet::from_archive(&Archive::read(path)?)?;
        Ok(DepthBackend::Monodepth(Box::new(net)))
    }

    /// `stub`, or `monodepth` with weights at `weights_dir/monodepth.ldst`.
    pub fn from_name(name: &str, weights_dir: Option<&Path>) -> Result<Self> {
        match name {
            "stub" => Ok(DepthBackend::Stub),
            "monodepth" => match weights_dir {
                Some(dir) => Self::monodepth(dir.join(MONODEPTH_FILE)),
                None => Err(Error::BackendUnavailable {
                    backend: "monodepth".into(),
                    reason: "no weights directory configured".into(),
                }),
            },
            other => Err(Error::arg(format!(
                "unknown depth backend `{other}` (expected monodepth or stub)"
            ))),
        }
    }

    pub fn cast<U: Scalar>(&self) -> DepthBackend<U> {
        match self {
            DepthBackend::Stub => DepthBackend::Stub,
            DepthBackend::Monodepth(net) => {
                let mut a = Archive::new();
                net.export(&mut a);
                DepthBackend::Monodepth(Box::new(
                    MonodepthNet::from_archive(&a).expect("exported network reloads"),
                ))
            }
        }
    }
}

/// Min-max normalisation bookkeeping.
struct MinMax<T> {
    out: Tensor<T>,
    range: T,
    argmin: usize,
    argmax: usize,
}

/// `(x − min) / (max − min)`; a constant input maps to all zeros.
fn min_max<T: Scalar>(x: &Tensor<T>) -> MinMax<T> {
    let (mut argmin, mut argmax) = (0, 0);
    for (i, &v) in x.data.iter().enumerate() {
        if v < x.data[argmin] {
            argmin = i;
        }
        if v > x.data[argmax] {
            argmax = i;
        }
    }
    let (lo, hi) = (x.data[argmin], x.data[argmax]);
    let range = hi - lo;
    let out = if range > T::zero() {
        x.map(|v| (v - lo) / range)
    } else {
        Tensor::zeros(x.c, x.h, x.w)
    };
    MinMax {
        out,
        range,
        argmin,
        argmax,
    }
}

fn min_max_backward<T: Scalar>(m: &MinMax<T>, g: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(g.c, g.h, g.w);
    if m.range <= T::zero() {
        return gx;
    }
    let inv = T::one() / m.range;
    let (mut g_lo, mut g_hi) = (T::zero(), T::zero());
    for ((o, &gv), &y) in gx.data.iter_mut().zip(&g.data).zip(&m.out.data) {
        *o = gv * inv;
        g_lo += gv * (y - T::one());
        g_hi -= gv * y;
    }
    gx.data[m.argmin] += g_lo * inv;
    gx.data[m.argmax] += g_hi * inv;
    gx
}

/// Forward values kept for [`depth_backward`].
pub struct DepthTrace<T> {
    norm: MinMax<T>,
    net: Option<(MonodepthTrace<T>, Tensor<T>)>,
}

fn check_rgb<T>(x: &Tensor<T>) -> Result<()> {
    if x.c != 3 || x.h == 0 || x.w == 0 {
        return Err(Error::dim(format!("depth expects a non-empty RGB image, got {:?}", (x.c, x.h, x.w))));
    }
    Ok(())
}

/// Normalised `1 × H × W` depth map of an RGB tensor.
pub fn depth_tensor<T: Scalar>(backend: &DepthBackend<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    check_rgb(x)?;
    let raw = match backend {
        DepthBackend::Stub => stub::proxy(x),
        DepthBackend::Monodepth(net) => disp_to_depth(&net.disparity(x)),
    };
    Ok(min_max(&raw).out)
}

pub fn depth_traced<T: Scalar>(
    backend: &DepthBackend<T>,
    x: &Tensor<T>,
) -> Result<(Tensor<T>, DepthTrace<T>)> {
    check_rgb(x)?;
    let (raw, net) = match backend {
        DepthBackend::Stub => (stub::proxy(x), None),
        DepthBackend::Monodepth(net) => {
            let (disp, t) = net.disparity_traced(x);
            let depth = disp_to_depth(&disp);
            (depth.clone(), Some((t, depth)))
        }
    };
    let norm = min_max(&raw);
    Ok((norm.out.clone(), DepthTrace { norm, net }))
}

/// Gradient with respect to the RGB input given the gradient of the
/// normalised depth map.
pub fn depth_backward<T: Scalar>(
    backend: &DepthBackend<T>,
    trace: &DepthTrace<T>,
    g: &Tensor<T>,
) -> Tensor<T> {
    let g_raw = min_max_backward(&trace.norm, g);
    match (backend, &trace.net) {
        (DepthBackend::Stub, None) => stub::proxy_backward(&g_raw),
        (DepthBackend::Monodepth(net), Some((t, depth))) => {
            net.disparity_backward(t, &disp_to_depth_backward(depth, &g_raw))
        }
        _ => panic!("depth trace was produced by a different backend"),
    }
}

/// Depth map of an image, min-max normalised to `[0, 1]`.
pub fn estimate_depth(backend: &DepthBackend<f32>, img: &Image) -> Result<GrayMap> {
    let d = depth_tensor(backend, &img.to_tensor())?;
    let mut map = GrayMap::from_tensor(&d, MapKind::Depth)?;
    map.backend = Some(backend.name().to_string());
    Ok(map)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rand_t(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(3, h, w, (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn grad_check(backend: &DepthBackend<f64>, x: &Tensor<f64>, tol: f64, stride: usize) {
        let (d, trace) = depth_traced(backend, x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let proj: Vec<f64> = (0..d.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let proj = Tensor::from_vec(1, d.h, d.w, proj).unwrap();
        let f = |x: &Tensor<f64>| -> f64 {
            let d = depth_tensor(backend, x).unwrap();
            d.data.iter().zip(&proj.data).map(|(a, b)| a * b).sum()
        };
        let g = depth_backward(backend, &trace, &proj);
        for i in (0..x.data.len()).step_by(stride) {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data[i] += 1e-6;
            xm.data[i] -= 1e-6;
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            let rel = (fd - g.data[i]).abs() / fd.abs().max(g.data[i].abs()).max(1e-8);
            assert!(rel < tol || (fd - g.data[i]).abs() < 1e-7, "{i}: {fd} vs {}", g.data[i]);
        }
    }

    #[test]
    fn constant_image_gives_zero_map() {
        let img = Image::filled(20, 13, [0.2, 0.6, 0.9]);
        let m = estimate_depth(&DepthBackend::Stub, &img).unwrap();
        assert_eq!(m.dims(), (13, 20));
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert_eq!(m.backend.as_deref(), Some("stub"));
    }

    #[test]
    fn stub_is_deterministic_and_normalised() {
        let img = Image::from_fn(24, 18, |x, y| [x as f32 / 23.0, y as f32 / 17.0, 0.5]);
        let a = estimate_depth(&DepthBackend::Stub, &img).unwrap();
        assert_eq!(a, estimate_depth(&DepthBackend::Stub, &img).unwrap());
        let (lo, hi) = a.values.iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn stub_gradient_matches_finite_differences() {
        for seed in 0..3 {
            grad_check(&DepthBackend::Stub, &rand_t(8, 8, seed), 1e-6, 1);
        }
    }

    #[test]
    fn missing_weights_are_reported() {
        let err = DepthBackend::<f32>::monodepth("/nonexistent/monodepth.ldst").unwrap_err();
        assert!(matches!(err, Error::BackendUnavailable { .. }));
        assert!(matches!(
            DepthBackend::<f32>::from_name("monodepth", None),
            Err(Error::BackendUnavailable { .. })
        ));
        assert!(matches!(DepthBackend::<f32>::from_name("zoe", None), Err(Error::Argument(_))));
    }

    #[test]
    fn network_backend_shapes_round_trip_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = MonodepthNet::<f64>::random((32, 64), &mut rng).unwrap();
        let mut a = Archive::new();
        net.export(&mut a);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MONODEPTH_FILE);
        a.write(&path).unwrap();
        let backend = DepthBackend::<f64>::from_name("monodepth", Some(dir.path())).unwrap();
        assert_eq!(backend.name(), "monodepth");
        let x = rand_t(20, 28, 6);
        let d = depth_tensor(&backend, &x).unwrap();
        assert_eq!(d.shape(), (1, 20, 28));
        assert!(d.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let x = rand_t(5, 7, 7);
        grad_check(&backend, &x, 1e-4, 7);
    }
}
