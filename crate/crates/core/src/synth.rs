//! Procedural image corpora. Content images are shaded scenes with clear
//! depth cues and edges; style images are coloured textures.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{save_image, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    Content,
    Style,
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn colour<R: Rng>(rng: &mut R) -> [f32; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

enum Shape {
    Disc { cx: f32, cy: f32, r: f32 },
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
}

/// Sky/ground split with a few shaded objects whose brightness follows
/// their vertical position.
pub fn content_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.gen_range(0.3..0.6f32);
    let (sky_top, sky_low) = (colour(&mut rng), colour(&mut rng));
    let (near, far) = (colour(&mut rng), colour(&mut rng));
    let n = rng.gen_range(2..6);
    let shapes: Vec<(Shape, [f32; 3])> = (0..n)
        .map(|_| {
            let c = colour(&mut rng);
            let s = if rng.gen_bool(0.5) {
                Shape::Disc {
                    cx: rng.gen(),
                    cy: rng.gen_range(horizon..1.0),
                    r: rng.gen_range(0.05..0.2),
                }
            } else {
                let (x0, y0) = (rng.gen_range(0.0..0.8f32), rng.gen_range(0.1..0.8f32));
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.gen_range(0.08..0.3),
                    y1: y0 + rng.gen_range(0.1..0.35),
                }
            };
            (s, c)
        })
        .collect();
    let (w, h) = (width as f32, height as f32);
    Image::from_fn(width, height, |x, y| {
        let (u, v) = ((x as f32 + 0.5) / w, (y as f32 + 0.5) / h);
        let mut px = if v < horizon {
            lerp3(sky_top, sky_low, v / horizon)
        } else {
            lerp3(far, near, (v - horizon) / (1.0 - horizon))
        };
        for (s, c) in &shapes {
            match *s {
                Shape::Disc { cx, cy, r } => {
                    let d2 = ((u - cx) / r).powi(2) + ((v - cy) / r).powi(2);
                    if d2 < 1.0 {
                        px = lerp3(*c, [0.0; 3], 0.5 * d2 * (1.0 - v));
                    }
                }
                Shape::Rect { x0, y0, x1, y1 } => {
                    if (x0..x1).contains(&u) && (y0..y1).contains(&v) {
                        px = lerp3(*c, [1.0; 3], 0.3 * (u - x0) / (x1 - x0));
                    }
                }
            }
        }
        px.map(|c| c.clamp(0.0, 1.0))
    })
}

/// Oriented stripes, checker or sinusoid blobs in a random palette.
pub fn style_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, c) = (colour(&mut rng), colour(&mut rng), colour(&mut rng));
    let kind = rng.gen_range(0..3);
    let freq = rng.gen_range(4.0..18.0f32);
    let angle = rng.gen_range(0.0..std::f32::consts::PI);
    let (ca, sa) = (angle.cos(), angle.sin());
    let phase: [f32; 3] = [rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3)];
    let (w, h) = (width as f32, height as f32);
    Image::from_fn(width, height, |x, y| {
        let (u, v) = (x as f32 / w, y as f32 / h);
        let t = match kind {
            0 => 0.5 + 0.5 * (freq * (u * ca + v * sa) * std::f32::consts::TAU).sin(),
            1 => {
                let cell = ((u * freq).floor() + (v * freq).floor()) as i64;
                if cell % 2 == 0 { 0.15 } else { 0.85 }
            }
            _ => {
                let s = (freq * u + phase[0]).sin() * (freq * 0.7 * v + phase[1]).cos()
                    + 0.5 * (freq * 1.3 * (u + v) + phase[2]).sin();
                (0.5 + 0.35 * s).clamp(0.0, 1.0)
            }
        };
        let accent = 0.5 + 0.5 * (3.0 * u + phase[2]).sin() * (2.0 * v).cos();
        lerp3(lerp3(a, b, t), c, 0.3 * accent).map(|c| c.clamp(0.0, 1.0))
    })
}

pub fn generate(kind: CorpusKind, width: usize, height: usize, seed: u64) -> Image {
    match kind {
        CorpusKind::Content => content_image(width, height, seed),
        CorpusKind::Style => style_image(width, height, seed),
    }
}

/// Writes `count` PNGs named `{prefix}_{i:04}.png` into `dir`. Image `i`
/// uses seed `seed + i`, so corpora generated from disjoint seed ranges
/// never share images.
pub fn write_corpus(
    dir: &Path,
    kind: CorpusKind,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    if size == 0 {
        return Err(Error::arg("corpus image size must be positive"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let prefix = match kind {
        CorpusKind::Content => "content",
        CorpusKind::Style => "style",
    };
    (0..count)
        .map(|i| {
            let p = dir.join(format!("{prefix}_{i:04}.png"));
            save_image(&generate(kind, size, size, seed + i as u64), &p)?;
            Ok(p)
        })
        .collect()
}
