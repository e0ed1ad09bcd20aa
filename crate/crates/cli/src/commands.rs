use std::collections::HashMap;
use std::fmt::Write as _;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use ldstyle::controls::{stylize_controlled, RegionMask, StyleMix};
use ldstyle::depth::DepthBackend;
use ldstyle::encoder::{Encoder, EncoderSpec};
use ldstyle::evaluation::{render_table, speed_benchmark, structure_consistency, Report};
use ldstyle::imaging::{load_image, load_mask, save_image, EdgeBackend, Image};
use ldstyle::synth::{write_corpus, CorpusKind};
use ldstyle::trainer::{
    ablation_sweep, list_images, load_checkpoint, load_model, train, train_from, HeldOut, TrainConfig, TrainState,
};
use ldstyle::transfer::TransferModel;
use ldstyle::write_atomic;
use ldstyle_service::{AppState, Engine, ServiceConfig};
use log::info;

use crate::args::*;
use crate::failure::{Failure, Outcome};

const WEIGHTS_ENV: &str = "LDSTYLE_WEIGHTS_DIR";

fn weights_dir() -> Option<PathBuf> {
    std::env::var_os(WEIGHTS_ENV).map(PathBuf::from)
}

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Stylize(a) => cmd_stylize(a),
        Command::Interpolate(a) => cmd_interpolate(a),
        Command::MaskStylize(a) => cmd_mask(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Serve(a) => cmd_serve(a),
        Command::MakeCorpus(a) => cmd_corpus(a),
        Command::InitEncoder(a) => cmd_init_encoder(a),
    }
}

/// Config from `--config` (or the corpus flags) with every override applied.
fn train_config(config: Option<&Path>, o: &TrainOverrides) -> Outcome<TrainConfig> {
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => {
            let (Some(c), Some(s)) = (&o.content_dir, &o.style_dir) else {
                return Err(Failure::user("give --config or both --content-dir and --style-dir"));
            };
            TrainConfig::new(c, s, 0)
        }
    };
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = &o.$flag { cfg.$($field).+ = v.clone(); })*
        };
    }
    set!(
        content_dir => content_dir,
        style_dir => style_dir,
        output_dir => output_dir,
        iterations => max_iterations,
        seed => seed,
        batch_size => batch_size,
        crop_size => crop_size,
        resize_target => resize_target,
        learning_rate => learning_rate,
        checkpoint_every => checkpoint_every,
        lambda_content => weights.content,
        lambda_style => weights.style,
        lambda_lap => weights.lap,
        lambda_depth => weights.depth,
        depth_backend => depth_backend,
        width_divisor => encoder_width_divisor,
    );
    if let Some(e) = &o.encoder {
        cfg.encoder = Some(e.clone());
    }
    if cfg.weights_dir.is_none() {
        cfg.weights_dir = weights_dir();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let cfg = train_config(a.config.as_deref(), &a.overrides)?;
    let run = match &a.resume {
        Some(p) => {
            let state = TrainState::resume(load_checkpoint(p)?, cfg.depth()?, cfg.weights)?;
            info!("resuming from {} at iteration {}", p.display(), state.iteration);
            train_from(&cfg, state, None)?
        }
        None => train(&cfg, None)?,
    };
    if let Some(last) = run.history.last() {
        info!("final total loss {:.4}", last.total);
    }
    println!("{}", run.checkpoint_path.display());
    Ok(())
}

/// A checkpoint's inference half, loaded before any other input so a bad
/// checkpoint path is the first error reported.
type Loaded = (TransferModel<f32>, Encoder<f32>);

fn render(
    (model, enc): Loaded,
    content: &Path,
    styles: Vec<Image>,
    weights: Vec<f64>,
    alpha: f64,
    regions: &[RegionMask],
    out: &Path,
) -> Outcome {
    let content = load_image(content)?;
    let mix = StyleMix::new(styles, weights)?;
    let img = stylize_controlled(&model, &enc, &content, &mix, alpha, regions)?;
    save_image(&img, out)?;
    info!("wrote {}", out.display());
    Ok(())
}

fn cmd_stylize(a: StylizeArgs) -> Outcome {
    let loaded = load_model(&a.ckpt)?;
    render(loaded, &a.content, vec![load_image(&a.style)?], vec![1.0], a.alpha, &[], &a.output)
}

/// Splits `left:right` at the last colon.
fn split_pair<'a>(s: &'a str, what: &str) -> Outcome<(&'a str, &'a str)> {
    s.rsplit_once(':')
        .filter(|(l, r)| !l.is_empty() && !r.is_empty())
        .ok_or_else(|| Failure::user(format!("expected {what}, got `{s}`")))
}

fn cmd_interpolate(a: InterpolateArgs) -> Outcome {
    let loaded = load_model(&a.ckpt)?;
    let mut styles = Vec::new();
    let mut weights = Vec::new();
    for spec in &a.styles {
        let (path, w) = split_pair(spec, "path:weight")?;
        let w: f64 = w
            .parse()
            .map_err(|_| Failure::user(format!("invalid weight `{w}` in `{spec}`")))?;
        styles.push(load_image(path)?);
        weights.push(w);
    }
    render(loaded, &a.content, styles, weights, a.alpha, &[], &a.output)
}

fn cmd_mask(a: MaskArgs) -> Outcome {
    let loaded = load_model(&a.ckpt)?;
    let mut styles = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut regions = Vec::new();
    for spec in &a.regions {
        let (mask, style) = split_pair(spec, "mask.png:style.png")?;
        let style_index = match index.get(style) {
            Some(&i) => i,
            None => {
                styles.push(load_image(style)?);
                index.insert(style.to_string(), styles.len() - 1);
                styles.len() - 1
            }
        };
        regions.push(RegionMask {
            mask: load_mask(mask)?,
            style_index,
        });
    }
    let weights = vec![1.0; styles.len()];
    render(loaded, &a.content, styles, weights, a.alpha, &regions, &a.output)
}

fn load_dir(dir: &Path) -> Outcome<Vec<(PathBuf, Image)>> {
    list_images(dir)?
        .into_iter()
        .map(|p| Ok((p.clone(), load_image(&p)?)))
        .collect()
}

fn backends(depth: &str, edge: &str) -> Outcome<(DepthBackend<f32>, EdgeBackend)> {
    let dir = weights_dir();
    Ok((
        DepthBackend::from_name(depth, dir.as_deref())?,
        EdgeBackend::from_name(edge, dir.as_deref())?,
    ))
}

fn cmd_sweep(a: SweepArgs) -> Outcome {
    let cfg = train_config(a.config.as_deref(), &a.overrides)?;
    let content = load_dir(&a.held_out.join("content"))?;
    let style = load_dir(&a.held_out.join("style"))?;
    if content.len() != style.len() {
        return Err(Failure::user(format!(
            "held-out set has {} content but {} style images",
            content.len(),
            style.len()
        )));
    }
    let held = HeldOut {
        pairs: content.into_iter().zip(style).map(|((_, c), (_, s))| (c, s)).collect(),
        depth: cfg.depth()?,
        edge: EdgeBackend::Sobel,
    };
    let cells = ablation_sweep(&cfg, &a.lap, &a.depth, &held, None)?;
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for cell in cells {
        match cell.outcome {
            Ok((_, report)) => reports.push(Report::Structure(report)),
            Err(e) => failed.push(format!("lap {} depth {}: {e}", cell.lap, cell.depth)),
        }
    }
    if !reports.is_empty() {
        let tables = render_table(&reports)?;
        print!("{}", tables.text);
        write_atomic(&a.out, tables.structure_csv.unwrap_or_default().as_bytes())?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Internal(format!("{} sweep cells failed: {}", failed.len(), failed.join("; "))))
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> Outcome {
    let content_dir = a.pairs_dir.join("content");
    let stylized_dir = a.pairs_dir.join("stylized");
    let mut pairs = Vec::new();
    for (path, content) in load_dir(&content_dir)? {
        let name = path.file_name().expect("listed files have names");
        let other = stylized_dir.join(name);
        if !other.is_file() {
            return Err(Failure::user(format!("no stylized image {} for {}", other.display(), path.display())));
        }
        pairs.push((content, load_image(&other)?));
    }
    let (depth, edge) = backends(&a.depth_backend, &a.edge_backend)?;
    let report = structure_consistency(&a.method_name, &pairs, &depth, &edge)?;
    let tables = render_table(&[Report::Structure(report)])?;
    print!("{}", tables.text);
    write_atomic(&a.out, tables.structure_csv.unwrap_or_default().as_bytes())?;
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Outcome {
    let (model, enc) = match &a.ckpt {
        Some(p) => load_model(p)?,
        None => {
            let spec = match a.width_divisor {
                1 => EncoderSpec::vgg19(),
                d if d > 0 && 64 % d == 0 => EncoderSpec::narrow(d),
                _ => return Err(Failure::user("--width-divisor must divide 64")),
            };
            (TransferModel::random(spec, a.seed)?, Encoder::random(spec, a.seed.wrapping_add(1)))
        }
    };
    let reports = speed_benchmark(&model, &enc, &a.resolutions, a.runs, a.warmup)?;
    let tables = render_table(&reports.iter().cloned().map(Report::Speed).collect::<Vec<_>>())?;
    print!("{}", tables.text);
    if let Some(out) = &a.out {
        write_atomic(out, tables.speed_csv.unwrap_or_default().as_bytes())?;
        let mut raw = String::from("resolution,run,warmup,seconds\n");
        for r in &reports {
            for (i, t) in r.timings.iter().enumerate() {
                let _ = writeln!(raw, "{},{},{},{t}", r.resolution, i, i < r.warmup_runs);
            }
        }
        write_atomic(&raw_log_path(out), raw.as_bytes())?;
    }
    Ok(())
}

/// `speed.csv` → `speed.raw.csv`.
fn raw_log_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("bench");
    out.with_file_name(format!("{stem}.raw.csv"))
}

fn cmd_serve(a: ServeArgs) -> Outcome {
    let engine = Engine::load(&a.ckpt)?;
    let ip: IpAddr = a
        .host
        .parse()
        .map_err(|_| Failure::user(format!("invalid host `{}`", a.host)))?;
    let config = ServiceConfig {
        workers: a.workers.max(1),
        max_queue: a.max_queue.max(1),
        max_body_bytes: a.max_body_mb * 1024 * 1024,
        allow_origin: a.allow_origin,
        ..ServiceConfig::default()
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Internal(format!("runtime: {e}")))?;
    rt.block_on(ldstyle_service::serve(AppState::new(engine, config), SocketAddr::new(ip, a.port)))
        .map_err(|e| Failure::user(format!("cannot serve on {}:{}: {e}", a.host, a.port)))
}

fn cmd_corpus(a: CorpusArgs) -> Outcome {
    let kind = match a.kind.as_str() {
        "content" => CorpusKind::Content,
        "style" => CorpusKind::Style,
        other => return Err(Failure::user(format!("unknown corpus kind `{other}` (content or style)"))),
    };
    let files = write_corpus(&a.out, kind, a.count, a.size, a.seed)?;
    info!("wrote {} images to {}", files.len(), a.out.display());
    Ok(())
}

fn cmd_init_encoder(a: InitEncoderArgs) -> Outcome {
    let spec = match a.width_divisor {
        1 => EncoderSpec::vgg19(),
        d if d > 0 && 64 % d == 0 => EncoderSpec::narrow(d),
        _ => return Err(Failure::user("--width-divisor must divide 64")),
    };
    let mut archive = ldstyle::archive::Archive::new();
    Encoder::<f32>::random(spec, a.seed).export(&mut archive, "");
    archive.write(&a.out)?;
    info!("wrote random encoder to {}", a.out.display());
    Ok(())
}
