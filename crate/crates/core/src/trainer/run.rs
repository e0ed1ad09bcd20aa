use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use log::info;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::{derive_seed, TrainConfig};
use super::data::{pair_stream, Batch};
use crate::depth::{depth_tensor, DepthBackend};
use crate::encoder::{Encoder, Layer};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossBreakdown, LossTargets, LossWeights};
use crate::optim::Adam;
use crate::tensor::Tensor;
use crate::transfer::{TransferModel, MODEL_LAYERS};

pub const CHECKPOINT_FILE: &str = "checkpoint.ldst";
pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "iter,content,style,lap,depth,total";

/// Mutable training state owned by the optimisation thread.
pub struct TrainState {
    pub model: TransferModel<f32>,
    pub encoder: Encoder<f32>,
    pub depth: DepthBackend<f32>,
    pub adam: Adam<f32>,
    pub weights: LossWeights,
    pub iteration: u64,
}

impl TrainState {
    pub fn new(
        model: TransferModel<f32>,
        encoder: Encoder<f32>,
        depth: DepthBackend<f32>,
        adam: Adam<f32>,
        weights: LossWeights,
    ) -> Result<Self> {
        model.check_encoder(&encoder)?;
        Ok(TrainState {
            model,
            encoder,
            depth,
            adam,
            weights,
            iteration: 0,
        })
    }

    /// State at iteration 0 for a config: model initialised from a seed
    /// derived from the run seed.
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = cfg.build_encoder()?;
        let model = TransferModel::random(encoder.spec(), derive_seed(cfg.seed, "model"))?;
        let ckpt = Checkpoint::initial(model, encoder, cfg.adam(), String::new())?;
        Self::new(ckpt.model, ckpt.encoder, cfg.depth()?, ckpt.adam, cfg.weights)
    }

    pub fn resume(ckpt: Checkpoint, depth: DepthBackend<f32>, weights: LossWeights) -> Result<Self> {
        let mut s = Self::new(ckpt.model, ckpt.encoder, depth, ckpt.adam, weights)?;
        s.iteration = ckpt.iteration;
        Ok(s)
    }

    pub fn checkpoint(&self, config: &str) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            encoder: self.encoder.clone(),
            adam: self.adam.clone(),
            iteration: self.iteration,
            config: config.to_string(),
        }
    }

    /// One optimisation step on a batch: gradients of the total loss
    /// averaged over the pairs reach the attention blocks, fusion conv and
    /// decoder; the encoder stays frozen. Returns the pre-update losses.
    pub fn step(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        if batch.is_empty() || batch.content.len() != batch.style.len() {
            return Err(Error::arg("batch needs equally many content and style images"));
        }
        let next = self.iteration + 1;
        let inv = 1.0 / batch.len() as f32;
        self.model.zero_grads();
        let mut parts = Vec::with_capacity(batch.len());
        for (c_img, s_img) in batch.content.iter().zip(&batch.style) {
            let c: Tensor<f32> = c_img.to_tensor();
            let s: Tensor<f32> = s_img.to_tensor();
            let fc = self.encoder.extract(&c, &MODEL_LAYERS)?;
            let fs = self.encoder.extract(&s, &Layer::STYLE)?;
            let cd = depth_tensor(&self.depth, &c)?;
            let (out, trace) = self.model.forward_traced(&fc, &fs, c.h, c.w)?;
            let targets = LossTargets {
                content: &c,
                content_features: &fc,
                style_features: &fs,
                content_depth: &cd,
            };
            let (b, mut g) = total_loss(&self.encoder, &self.depth, &out, &targets, &self.weights)?;
            if !b.is_finite() || !g.is_finite() {
                return Err(Error::Divergence { iteration: next });
            }
            g.scale(inv);
            self.model.backward(&trace, &g);
            parts.push(b);
        }
        if self.model.named_params().iter().any(|(_, p)| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::Divergence { iteration: next });
        }
        self.adam.update(&mut self.model.params_mut())?;
        self.iteration = next;
        Ok(LossBreakdown::mean(&parts))
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    /// Per-iteration losses, in order.
    pub history: Vec<LossBreakdown>,
    pub cancelled: bool,
    pub checkpoint_path: PathBuf,
}

fn log_line(iter: u64, b: &LossBreakdown) -> String {
    format!("{iter},{},{},{},{},{}", b.content, b.style, b.lap, b.depth, b.total)
}

/// Parses a training log written by [`train`].
pub fn read_log(path: &Path) -> Result<Vec<(u64, LossBreakdown)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Dataset(format!("{}: bad log field {i}", path.display())))
        };
        out.push((
            f(0)? as u64,
            LossBreakdown {
                content: f(1)?,
                style: f(2)?,
                lap: f(3)?,
                depth: f(4)?,
                total: f(5)?,
            },
        ));
    }
    Ok(out)
}

/// Runs `max_iterations` steps, logging every breakdown to CSV and writing
/// `checkpoint.ldst` every `checkpoint_every` iterations and at the end.
/// Setting `cancel` stops after the current step and saves. A divergent
/// step aborts without touching the last saved checkpoint.
pub fn train(cfg: &TrainConfig, cancel: Option<&AtomicBool>) -> Result<TrainRun> {
    let state = TrainState::from_config(cfg)?;
    train_from(cfg, state, cancel)
}

/// [`train`] starting from an existing state (for resuming).
pub fn train_from(cfg: &TrainConfig, mut state: TrainState, cancel: Option<&AtomicBool>) -> Result<TrainRun> {
    let snapshot = cfg.to_toml();
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let ckpt_path = cfg.output_dir.join(CHECKPOINT_FILE);
    let log_path = cfg.output_dir.join(LOG_FILE);
    let mut log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;

    let mut history = Vec::new();
    let mut cancelled = false;
    let start = state.iteration;
    let end = start + cfg.max_iterations;
    if start < end {
        let mut stream = pair_stream(cfg)?;
        while state.iteration < end {
            if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
                cancelled = true;
                break;
            }
            let batch = stream
                .next()
                .ok_or_else(|| Error::Dataset("data loader stopped".into()))??;
            let b = state.step(&batch)?;
            let it = state.iteration;
            writeln!(log, "{}", log_line(it, &b)).map_err(|e| Error::io(&log_path, e))?;
            if it == start + 1 || it.is_multiple_of(10) {
                info!(
                    "iter {it}: total {:.4} (content {:.4}, style {:.4}, lap {:.4}, depth {:.4})",
                    b.total, b.content, b.style, b.lap, b.depth
                );
            }
            history.push(b);
            if cfg.checkpoint_every > 0 && it.is_multiple_of(cfg.checkpoint_every) && it < end {
                save_checkpoint(&state.checkpoint(&snapshot), &ckpt_path)?;
            }
        }
    }
    let checkpoint = state.checkpoint(&snapshot);
    save_checkpoint(&checkpoint, &ckpt_path)?;
    Ok(TrainRun {
        checkpoint,
        history,
        cancelled,
        checkpoint_path: ckpt_path,
    })
}
