use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::depth::DepthBackend;
use crate::encoder::{load_encoder, Encoder, EncoderSpec, ENCODER_FILE};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::optim::AdamConfig;

/// Key-value run configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub content_dir: PathBuf,
    pub style_dir: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_resize")]
    pub resize_target: usize,
    #[serde(default = "default_crop")]
    pub crop_size: usize,
    pub max_iterations: u64,
    #[serde(default)]
    pub seed: u64,
    /// `stub` or `monodepth`.
    #[serde(default = "default_depth")]
    pub depth_backend: String,
    /// Iterations between checkpoint writes; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Encoder weights archive. When absent, `weights_dir/vgg19.ldst` is
    /// used if present, otherwise a seeded random encoder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<PathBuf>,
    /// Channel divisor for the random encoder (1 = full VGG-19 widths).
    #[serde(default = "default_divisor")]
    pub encoder_width_divisor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_dir: Option<PathBuf>,
    #[serde(default)]
    pub weights: LossWeights,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_lr() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    5
}
fn default_resize() -> usize {
    512
}
fn default_crop() -> usize {
    256
}
fn default_depth() -> String {
    "stub".into()
}
fn default_divisor() -> usize {
    1
}

impl TrainConfig {
    /// Config with defaults for everything but the two corpora and the
    /// iteration count.
    pub fn new(content_dir: impl Into<PathBuf>, style_dir: impl Into<PathBuf>, max_iterations: u64) -> Self {
        TrainConfig {
            content_dir: content_dir.into(),
            style_dir: style_dir.into(),
            output_dir: default_output_dir(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            resize_target: default_resize(),
            crop_size: default_crop(),
            max_iterations,
            seed: 0,
            depth_backend: default_depth(),
            checkpoint_every: 0,
            encoder: None,
            encoder_width_divisor: 1,
            weights_dir: None,
            weights: LossWeights::default(),
        }
    }

    /// Parses TOML; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let cfg_err = |reason: String| Error::Config {
            path: base.to_path_buf(),
            reason,
        };
        let mut cfg: TrainConfig = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.content_dir);
        rebase(&mut cfg.style_dir);
        rebase(&mut cfg.output_dir);
        cfg.encoder.as_mut().map(rebase);
        cfg.weights_dir.as_mut().map(rebase);
        cfg.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config { reason, .. } => Error::Config {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::arg("learning_rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be >= 1"));
        }
        if self.crop_size == 0 || self.crop_size > self.resize_target {
            return Err(Error::arg(format!(
                "crop_size {} must be in 1..=resize_target ({})",
                self.crop_size, self.resize_target
            )));
        }
        if self.encoder_width_divisor == 0 || 64 % self.encoder_width_divisor != 0 {
            return Err(Error::arg("encoder_width_divisor must divide 64"));
        }
        if !matches!(self.depth_backend.as_str(), "stub" | "monodepth") {
            return Err(Error::arg(format!(
                "unknown depth backend `{}` (expected monodepth or stub)",
                self.depth_backend
            )));
        }
        self.weights.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn depth(&self) -> Result<DepthBackend<f32>> {
        DepthBackend::from_name(&self.depth_backend, self.weights_dir.as_deref())
    }

    /// Resolves the frozen encoder as described on [`TrainConfig::encoder`].
    pub fn build_encoder(&self) -> Result<Encoder<f32>> {
        if let Some(p) = &self.encoder {
            return load_encoder(p);
        }
        if let Some(dir) = &self.weights_dir {
            let p = dir.join(ENCODER_FILE);
            if p.is_file() {
                return load_encoder(p);
            }
        }
        log::warn!("no encoder weights configured, using a random encoder seeded from the run seed");
        let spec = if self.encoder_width_divisor == 1 {
            EncoderSpec::vgg19()
        } else {
            EncoderSpec::narrow(self.encoder_width_divisor)
        };
        Ok(Encoder::random(spec, derive_seed(self.seed, "encoder")))
    }
}

/// Independent seed for a named stream of a run, so that model init, data
/// order and encoder init never share random state.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_defaults_and_rebases_paths() {
        let text = "content_dir = \"c\"\nstyle_dir = \"/abs/s\"\nmax_iterations = 3\n[weights]\ncontent = 1.0\nstyle = 3.0\nlap = 0.0\ndepth = 0.0\n";
        let cfg = TrainConfig::from_toml(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.content_dir, PathBuf::from("/base/c"));
        assert_eq!(cfg.style_dir, PathBuf::from("/abs/s"));
        assert_eq!((cfg.batch_size, cfg.crop_size, cfg.resize_target), (5, 256, 512));
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.weights.lap, 0.0);
        let again = TrainConfig::from_toml(&cfg.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_invalid_values() {
        let base = Path::new("/b");
        for extra in [
            "learning_rate = 0.0",
            "batch_size = 0",
            "crop_size = 600",
            "depth_backend = \"zoe\"",
            "bogus = 1",
        ] {
            let text = format!("content_dir = \"c\"\nstyle_dir = \"s\"\nmax_iterations = 1\n{extra}\n");
            assert!(matches!(TrainConfig::from_toml(&text, base), Err(Error::Config { .. })), "{extra}");
        }
    }

    #[test]
    fn derived_seeds_differ_by_stream_and_seed() {
        assert_ne!(derive_seed(1, "model"), derive_seed(1, "data"));
        assert_ne!(derive_seed(1, "model"), derive_seed(2, "model"));
        assert_eq!(derive_seed(9, "model"), derive_seed(9, "model"));
    }
}
