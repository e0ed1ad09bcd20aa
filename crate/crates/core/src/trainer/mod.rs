//! Dataset ingestion, the optimisation loop, loss-weight sweeps and
//! checkpoint persistence.

mod checkpoint;
mod config;
mod data;
mod run;
mod sweep;

pub use checkpoint::{load_checkpoint, load_model, save_checkpoint, Checkpoint};
pub use config::{derive_seed, TrainConfig};
pub use data::{list_images, pair_stream, Batch, PairStream};
pub use run::{read_log, train, train_from, TrainRun, TrainState, CHECKPOINT_FILE, LOG_FILE, LOG_HEADER};
pub use sweep::{ablation_sweep, cell_name, evaluate_run, HeldOut, SweepCell};
