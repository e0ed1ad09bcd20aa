use std::path::PathBuf;
use std::sync::atomic::AtomicBool;

use log::{info, warn};

use super::config::TrainConfig;
use super::run::{train, TrainRun};
use crate::depth::DepthBackend;
use crate::error::{Error, Result};
use crate::evaluation::{structure_consistency, StructureReport};
use crate::imaging::{EdgeBackend, Image};
use crate::transfer::stylize;

/// Held-out (content, style) pairs and the backends used to score them.
pub struct HeldOut {
    pub pairs: Vec<(Image, Image)>,
    pub depth: DepthBackend<f32>,
    pub edge: EdgeBackend,
}

pub struct SweepCell {
    pub lap: f64,
    pub depth: f64,
    pub output_dir: PathBuf,
    pub outcome: Result<(TrainRun, StructureReport)>,
}

pub fn cell_name(lap: f64, depth: f64) -> String {
    format!("lap{lap}_depth{depth}")
}

/// Stylises every held-out pair with a trained run and scores structure
/// consistency against the content images.
pub fn evaluate_run(name: &str, run: &TrainRun, held_out: &HeldOut) -> Result<StructureReport> {
    let ckpt = &run.checkpoint;
    let pairs = held_out
        .pairs
        .iter()
        .map(|(c, s)| Ok((c.clone(), stylize(&ckpt.model, &ckpt.encoder, c, s)?)))
        .collect::<Result<Vec<_>>>()?;
    structure_consistency(name, &pairs, &held_out.depth, &held_out.edge)
}

/// Trains one model per `(λ_lap, λ_depth)` cell with the same seed and
/// data order, each in its own subdirectory of `cfg.output_dir`. A failing
/// cell is recorded and the grid continues.
pub fn ablation_sweep(
    cfg: &TrainConfig,
    lap_values: &[f64],
    depth_values: &[f64],
    held_out: &HeldOut,
    cancel: Option<&AtomicBool>,
) -> Result<Vec<SweepCell>> {
    if lap_values.is_empty() || depth_values.is_empty() {
        return Err(Error::arg("sweep needs at least one value per axis"));
    }
    if held_out.pairs.is_empty() {
        return Err(Error::arg("sweep needs held-out pairs"));
    }
    let mut cells = Vec::new();
    for &lap in lap_values {
        for &depth in depth_values {
            let name = cell_name(lap, depth);
            let mut cell_cfg = cfg.clone();
            cell_cfg.weights.lap = lap;
            cell_cfg.weights.depth = depth;
            cell_cfg.output_dir = cfg.output_dir.join(&name);
            info!("sweep cell {name}");
            let outcome = cell_cfg
                .validate()
                .and_then(|_| train(&cell_cfg, cancel))
                .and_then(|run| {
                    let report = evaluate_run(&name, &run, held_out)?;
                    Ok((run, report))
                });
            if let Err(e) = &outcome {
                warn!("sweep cell {name} failed: {e}");
            }
            cells.push(SweepCell {
                lap,
                depth,
                output_dir: cell_cfg.output_dir,
                outcome,
            });
        }
    }
    Ok(cells)
}
