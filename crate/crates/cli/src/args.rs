use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Structure-enhanced arbitrary style transfer.
///
/// Pretrained weights (vgg19.ldst, monodepth.ldst, hed.ldst) are looked up
/// in LDSTYLE_WEIGHTS_DIR unless a flag names them.
#[derive(Debug, Parser)]
#[command(name = "ldstyle", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a transfer model.
    Train(TrainArgs),
    /// Stylize one content image with one style.
    Stylize(StylizeArgs),
    /// Stylize with a weighted mix of styles.
    Interpolate(InterpolateArgs),
    /// Stylize image regions with different styles.
    MaskStylize(MaskArgs),
    /// Train one model per (lambda_lap, lambda_depth) cell and report structure SSIM.
    Sweep(SweepArgs),
    /// Structure-consistency SSIM of content/stylized pairs.
    Evaluate(EvaluateArgs),
    /// Time end-to-end stylization.
    Bench(BenchArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
    /// Write a procedurally generated image corpus.
    MakeCorpus(CorpusArgs),
    /// Write a randomly initialised encoder archive.
    InitEncoder(InitEncoderArgs),
}

/// Overrides applied on top of `--config` (or defaults when there is none).
#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    /// Content image directory.
    #[arg(long)]
    pub content_dir: Option<PathBuf>,
    /// Style image directory.
    #[arg(long)]
    pub style_dir: Option<PathBuf>,
    /// Run directory for the checkpoint and loss log.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub crop_size: Option<usize>,
    #[arg(long)]
    pub resize_target: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub lambda_content: Option<f64>,
    #[arg(long)]
    pub lambda_style: Option<f64>,
    #[arg(long)]
    pub lambda_lap: Option<f64>,
    #[arg(long)]
    pub lambda_depth: Option<f64>,
    /// monodepth or stub.
    #[arg(long)]
    pub depth_backend: Option<String>,
    /// Encoder weights archive.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Channel divisor of the random encoder used without weights.
    #[arg(long)]
    pub width_divisor: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    #[arg(short, long)]
    pub content: PathBuf,
    #[arg(short, long)]
    pub style: PathBuf,
    /// Output image; .jpg/.jpeg writes JPEG, anything else PNG.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Content/style trade-off in [0, 1]; 0 reconstructs the content.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(short, long)]
    pub content: PathBuf,
    /// Style and weight as `path:weight`, repeatable.
    #[arg(long = "style", required = true)]
    pub styles: Vec<String>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(short, long)]
    pub content: PathBuf,
    /// Grayscale mask (255 = full style) and style as `mask.png:style.png`, repeatable.
    #[arg(long = "region", required = true)]
    pub regions: Vec<String>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated lambda_lap values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lap: Vec<f64>,
    /// Comma-separated lambda_depth values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub depth: Vec<f64>,
    /// Held-out pairs: `content/` and `style/` subdirectories, paired in name order.
    #[arg(long)]
    pub held_out: PathBuf,
    /// Structure report CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory with `content/` and `stylized/` subdirectories; files pair by name.
    #[arg(long)]
    pub pairs_dir: PathBuf,
    /// Structure report CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "model")]
    pub method_name: String,
    /// monodepth or stub.
    #[arg(long, default_value = "stub")]
    pub depth_backend: String,
    /// hed or sobel.
    #[arg(long, default_value = "sobel")]
    pub edge_backend: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoint to time; without one a seeded random model is used.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "256,512")]
    pub resolutions: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub runs: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    /// Speed report CSV including raw timings.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Channel divisor of the random model.
    #[arg(long, default_value_t = 1)]
    pub width_divisor: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    #[arg(long, default_value_t = 16)]
    pub max_queue: usize,
    /// Request body limit in MiB.
    #[arg(long, default_value_t = 16)]
    pub max_body_mb: usize,
    /// CORS origin to allow, `*` for any.
    #[arg(long)]
    pub allow_origin: Option<String>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// content or style.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitEncoderArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub width_divisor: usize,
}
