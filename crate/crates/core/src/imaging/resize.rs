use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;
use crate::error::{Error, Result};
use crate::nn::resize_bilinear;

/// Output (width, height) when the smaller side is scaled to `target`
/// and the other side keeps the aspect ratio (rounded to nearest).
pub fn smaller_dim_size(width: usize, height: usize, target: usize) -> (usize, usize) {
    let scaled = |long: usize, short: usize| {
        ((long as f64 * target as f64 / short as f64).round() as usize).max(1)
    };
    if width <= height {
        (target, scaled(height, width))
    } else {
        (scaled(width, height), target)
    }
}

/// Bilinear resize so that `min(width, height) == target`.
pub fn resize_smaller_dim(img: &Image, target: usize) -> Result<Image> {
    if target == 0 {
        return Err(Error::arg("resize target must be at least 1"));
    }
    let (w, h) = smaller_dim_size(img.width(), img.height(), target);
    if (w, h) == (img.width(), img.height()) {
        return Ok(img.clone());
    }
    let t = resize_bilinear(&img.to_tensor::<f32>(), h, w);
    Image::from_tensor_clamped(&t)
}

/// `size × size` crop at an offset drawn uniformly from the valid range.
pub fn random_crop_with<R: Rng>(img: &Image, size: usize, rng: &mut R) -> Result<Image> {
    let (h, w) = img.dims();
    if size == 0 || h < size || w < size {
        return Err(Error::dim(format!(
            "cannot crop {size}x{size} from a {w}x{h} image"
        )));
    }
    let top = rng.gen_range(0..=h - size);
    let left = rng.gen_range(0..=w - size);
    let t = img.to_tensor::<f32>().crop(top, left, size, size);
    Image::from_planar(size, size, t.data)
}

/// Seeded [`random_crop_with`]; equal seeds give identical crops.
pub fn random_crop(img: &Image, size: usize, seed: u64) -> Result<Image> {
    random_crop_with(img, size, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn gradient(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            [x as f32 / w as f32, y as f32 / h as f32, ((x + y) % 7) as f32 / 7.0]
        })
    }

    #[test]
    fn aspect_ratio_arithmetic() {
        assert_eq!(smaller_dim_size(1024, 768, 512), (683, 512));
        assert_eq!(smaller_dim_size(512, 512, 512), (512, 512));
        assert_eq!(smaller_dim_size(300, 600, 512), (512, 1024));
    }

    #[test]
    fn resize_fixed_point_is_identity() {
        let img = gradient(32, 32);
        assert_eq!(resize_smaller_dim(&img, 32).unwrap(), img);
    }

    #[test]
    fn crop_of_exact_size_is_identity() {
        let img = gradient(16, 16);
        assert_eq!(random_crop(&img, 16, 5).unwrap(), img);
    }

    #[test]
    fn crop_is_deterministic_per_seed() {
        let img = gradient(64, 64);
        let a = random_crop(&img, 16, 42).unwrap();
        let b = random_crop(&img, 16, 42).unwrap();
        assert_eq!(a, b);
        let differs = (0..20).any(|s| random_crop(&img, 16, s).unwrap() != a);
        assert!(differs);
    }

    #[test]
    fn crop_larger_than_image_is_dimension_error() {
        let img = gradient(512, 128);
        assert!(matches!(random_crop(&img, 256, 0), Err(Error::Dimension(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn smaller_side_hits_target(w in 1usize..96, h in 1usize..96, target in 1usize..64) {
            let img = Image::filled(w, h, [0.3, 0.6, 0.9]);
            let out = resize_smaller_dim(&img, target).unwrap();
            prop_assert_eq!(out.width().min(out.height()), target);
            let want = w.max(h) as f64 * target as f64 / w.min(h) as f64;
            prop_assert!((out.width().max(out.height()) as f64 - want).abs() <= 1.0);
        }
    }
}
