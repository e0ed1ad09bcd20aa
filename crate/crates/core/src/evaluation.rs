//! Structure-consistency scores and timing benchmarks.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::depth::{estimate_depth, DepthBackend};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::imaging::{edge_map, ssim, ssim_gray, EdgeBackend, Image};
use crate::transfer::{stylize, TransferModel};

/// Published figures printed under rendered tables for orientation only.
/// They come from full-scale training on other hardware.
const PUBLISHED_STRUCTURE: [(&str, [f64; 3]); 2] = [
    ("structure-loss model", [0.410, 0.886, 0.477]),
    ("SANet", [0.364, 0.846, 0.423]),
];
const PUBLISHED_SPEED: [(&str, [f64; 2]); 2] = [("structure-loss model", [0.015, 0.050]), ("SANet", [0.017, 0.055])];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub method_name: String,
    pub content_ssim: f64,
    pub depth_ssim: f64,
    pub edge_ssim: f64,
    pub n_pairs: usize,
}

/// SSIM triple for one (content, stylised) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScores {
    pub content: f64,
    pub depth: f64,
    pub edge: f64,
}

pub fn pair_scores(
    content: &Image,
    stylized: &Image,
    depth: &DepthBackend,
    edge: &EdgeBackend,
) -> Result<PairScores> {
    Ok(PairScores {
        content: ssim(content, stylized)?,
        depth: ssim_gray(&estimate_depth(depth, content)?, &estimate_depth(depth, stylized)?)?,
        edge: ssim_gray(&edge_map(content, edge), &edge_map(stylized, edge))?,
    })
}

/// Mean SSIM of raw images, depth maps and edge maps over all pairs.
pub fn structure_consistency(
    method_name: &str,
    pairs: &[(Image, Image)],
    depth: &DepthBackend,
    edge: &EdgeBackend,
) -> Result<StructureReport> {
    if pairs.is_empty() {
        return Err(Error::arg("structure consistency needs at least one pair"));
    }
    let scores = pairs
        .iter()
        .map(|(c, s)| pair_scores(c, s, depth, edge))
        .collect::<Result<Vec<_>>>()?;
    let n = scores.len() as f64;
    let mean = |f: fn(&PairScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(StructureReport {
        method_name: method_name.to_string(),
        content_ssim: mean(|s| s.content),
        depth_ssim: mean(|s| s.depth),
        edge_ssim: mean(|s| s.edge),
        n_pairs: scores.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub resolution: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    /// Total runs, warm-up included.
    pub n_runs: usize,
    pub warmup_runs: usize,
    pub hardware_note: String,
    /// Every timing in run order, warm-up first.
    pub timings: Vec<f64>,
}

impl SpeedReport {
    /// Summarises raw timings, ignoring the first `warmup` entries.
    pub fn from_timings(resolution: usize, timings: Vec<f64>, warmup: usize, hardware_note: String) -> Result<Self> {
        if warmup >= timings.len() {
            return Err(Error::arg("need at least one timed run after warm-up"));
        }
        let timed = &timings[warmup..];
        let n = timed.len() as f64;
        let mean = timed.iter().sum::<f64>() / n;
        let var = if timed.len() > 1 {
            timed.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(SpeedReport {
            resolution,
            mean_seconds: mean,
            std_seconds: var.sqrt(),
            n_runs: timings.len(),
            warmup_runs: warmup,
            hardware_note,
            timings,
        })
    }
}

pub const MIN_BENCH_RUNS: usize = 10;

/// CPU model and logical core count, as far as the OS reveals them.
pub fn hardware_note() -> String {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    format!("{model}, {cores} logical cores, single-threaded")
}

/// Deterministic test card used as benchmark input.
fn bench_image(size: usize, phase: f32) -> Image {
    let s = size as f32;
    Image::from_fn(size, size, |x, y| {
        let (u, v) = (x as f32 / s, y as f32 / s);
        [
            0.5 + 0.5 * (6.0 * u + phase).sin(),
            0.5 + 0.5 * (9.0 * v - phase).cos(),
            (u * v + 0.25 * phase).fract(),
        ]
    })
}

/// Times end-to-end stylisation at each square resolution. `n_runs`
/// counts warm-up runs, which are excluded from the statistics but kept in
/// the raw log.
pub fn speed_benchmark(
    model: &TransferModel<f32>,
    enc: &Encoder<f32>,
    resolutions: &[usize],
    n_runs: usize,
    warmup: usize,
) -> Result<Vec<SpeedReport>> {
    if n_runs < MIN_BENCH_RUNS {
        return Err(Error::arg(format!("benchmark needs at least {MIN_BENCH_RUNS} runs")));
    }
    if warmup >= n_runs {
        return Err(Error::arg("warm-up must leave at least one timed run"));
    }
    if resolutions.is_empty() || resolutions.contains(&0) {
        return Err(Error::arg("resolutions must be positive"));
    }
    let note = hardware_note();
    let mut out = Vec::new();
    for &res in resolutions {
        let content = bench_image(res, 0.0);
        let style = bench_image(res, 1.7);
        let mut timings = Vec::with_capacity(n_runs);
        for _ in 0..n_runs {
            let t0 = Instant::now();
            let img = stylize(model, enc, &content, &style)?;
            timings.push(t0.elapsed().as_secs_f64());
            std::hint::black_box(img);
        }
        out.push(SpeedReport::from_timings(res, timings, warmup, note.clone())?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Structure(StructureReport),
    Speed(SpeedReport),
}

/// Rendered output: one aligned text block, and one CSV per report type
/// present.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub text: String,
    pub structure_csv: Option<String>,
    pub speed_csv: Option<String>,
}

fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

const STRUCTURE_HEADER: [&str; 5] = ["method", "content_ssim", "depth_ssim", "edge_ssim", "n_pairs"];
const SPEED_HEADER: [&str; 6] = ["resolution", "mean_seconds", "std_seconds", "n_runs", "warmup_runs", "hardware_note"];

pub fn structure_csv(reports: &[StructureReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(STRUCTURE_HEADER).map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.method_name.clone(),
            r.content_ssim.to_string(),
            r.depth_ssim.to_string(),
            r.edge_ssim.to_string(),
            r.n_pairs.to_string(),
        ])
        .map_err(csv_err)?;
    }
    into_string(w)
}

pub fn speed_csv(reports: &[SpeedReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SPEED_HEADER).map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.resolution.to_string(),
            r.mean_seconds.to_string(),
            r.std_seconds.to_string(),
            r.n_runs.to_string(),
            r.warmup_runs.to_string(),
            r.hardware_note.clone(),
        ])
        .map_err(csv_err)?;
    }
    into_string(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::arg(format!("csv: {e}"))
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::arg(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::arg(format!("csv: {e}")))
}

/// Parses the output of [`structure_csv`].
pub fn parse_structure_csv(text: &str) -> Result<Vec<StructureReport>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::arg(format!("bad number in column {i}")))
        };
        out.push(StructureReport {
            method_name: rec.get(0).unwrap_or_default().to_string(),
            content_ssim: num(1)?,
            depth_ssim: num(2)?,
            edge_ssim: num(3)?,
            n_pairs: num(4)? as usize,
        });
    }
    Ok(out)
}

/// Parses the output of [`speed_csv`] (raw timings are not part of the CSV).
pub fn parse_speed_csv(text: &str) -> Result<Vec<SpeedReport>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::arg(format!("bad number in column {i}")))
        };
        out.push(SpeedReport {
            resolution: num(0)? as usize,
            mean_seconds: num(1)?,
            std_seconds: num(2)?,
            n_runs: num(3)? as usize,
            warmup_runs: num(4)? as usize,
            hardware_note: rec.get(5).unwrap_or_default().to_string(),
            timings: Vec::new(),
        });
    }
    Ok(out)
}

/// Aligned text tables plus CSV, one table per report type.
pub fn render_table(reports: &[Report]) -> Result<Tables> {
    if reports.is_empty() {
        return Err(Error::arg("nothing to render"));
    }
    let structure: Vec<StructureReport> = reports
        .iter()
        .filter_map(|r| match r {
            Report::Structure(s) => Some(s.clone()),
            _ => None,
        })
        .collect();
    let speed: Vec<SpeedReport> = reports
        .iter()
        .filter_map(|r| match r {
            Report::Speed(s) => Some(s.clone()),
            _ => None,
        })
        .collect();
    let mut text = String::new();
    if !structure.is_empty() {
        let rows: Vec<Vec<String>> = structure
            .iter()
            .map(|r| {
                vec![
                    r.method_name.clone(),
                    format!("{:.3}", r.content_ssim),
                    format!("{:.3}", r.depth_ssim),
                    format!("{:.3}", r.edge_ssim),
                    r.n_pairs.to_string(),
                ]
            })
            .collect();
        text += "Structure consistency (SSIM)\n";
        text += &aligned(&STRUCTURE_HEADER, &rows);
        for (name, [c, d, e]) in PUBLISHED_STRUCTURE {
            let _ = writeln!(text, "# published, full-scale: {name}: content {c:.3}, depth {d:.3}, edge {e:.3}");
        }
    }
    if !speed.is_empty() {
        if !text.is_empty() {
            text.push('\n');
        }
        let rows: Vec<Vec<String>> = speed
            .iter()
            .map(|r| {
                vec![
                    format!("{0}x{0}", r.resolution),
                    format!("{:.4}", r.mean_seconds),
                    format!("{:.4}", r.std_seconds),
                    r.n_runs.to_string(),
                    r.warmup_runs.to_string(),
                    r.hardware_note.clone(),
                ]
            })
            .collect();
        text += "Execution time (seconds)\n";
        text += &aligned(&SPEED_HEADER, &rows);
        for (name, [a, b]) in PUBLISHED_SPEED {
            let _ = writeln!(text, "# published, other hardware: {name}: {a:.3} s @256, {b:.3} s @512");
        }
    }
    Ok(Tables {
        text,
        structure_csv: (!structure.is_empty()).then(|| structure_csv(&structure)).transpose()?,
        speed_csv: (!speed.is_empty()).then(|| speed_csv(&speed)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::encoder::EncoderSpec;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_planar(w, h, (0..3 * w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn scene(seed: u64) -> Image {
        let p = seed as f32;
        Image::from_fn(40, 32, move |x, y| {
            let v = if (x as f32) < 15.0 + p { 0.2 } else { 0.8 };
            [v, 0.5 * v + 0.02 * y as f32, 0.3]
        })
    }

    #[test]
    fn identical_pairs_score_exactly_one() {
        let pairs: Vec<_> = (0..3).map(|s| (scene(s), scene(s))).collect();
        let r = structure_consistency("id", &pairs, &DepthBackend::Stub, &EdgeBackend::Sobel).unwrap();
        assert_eq!((r.content_ssim, r.depth_ssim, r.edge_ssim, r.n_pairs), (1.0, 1.0, 1.0, 3));
    }

    #[test]
    fn noise_scores_lower_and_means_are_arithmetic() {
        let pairs: Vec<_> = (0..3).map(|s| (scene(s), noise(40, 32, s))).collect();
        let r = structure_consistency("noise", &pairs, &DepthBackend::Stub, &EdgeBackend::Sobel).unwrap();
        assert!(r.content_ssim < 1.0 && r.depth_ssim < 1.0 && r.edge_ssim < 1.0);
        let per: Vec<_> = pairs
            .iter()
            .map(|(c, s)| pair_scores(c, s, &DepthBackend::Stub, &EdgeBackend::Sobel).unwrap())
            .collect();
        let m = per.iter().map(|p| p.edge).sum::<f64>() / 3.0;
        assert!((m - r.edge_ssim).abs() < 1e-9);
        assert!(structure_consistency("x", &[], &DepthBackend::Stub, &EdgeBackend::Sobel).is_err());
    }

    #[test]
    fn speed_report_excludes_warmup() {
        let t = vec![10.0, 10.0, 1.0, 2.0, 3.0];
        let r = SpeedReport::from_timings(256, t, 2, "x".into()).unwrap();
        assert_eq!(r.mean_seconds, 2.0);
        assert!((r.std_seconds - 1.0).abs() < 1e-12);
        assert_eq!((r.n_runs, r.warmup_runs), (5, 2));
    }

    #[test]
    fn benchmark_times_every_run() {
        let spec = EncoderSpec::narrow(32);
        let enc = Encoder::random(spec, 0);
        let model = TransferModel::random(spec, 0).unwrap();
        let r = speed_benchmark(&model, &enc, &[16, 32], 10, 3).unwrap();
        assert_eq!(r.len(), 2);
        for rep in &r {
            assert_eq!(rep.timings.len(), 10);
            assert!(rep.mean_seconds > 0.0 && rep.std_seconds >= 0.0);
            let m = rep.timings[3..].iter().sum::<f64>() / 7.0;
            assert!((m - rep.mean_seconds).abs() < 1e-15);
        }
        assert!(speed_benchmark(&model, &enc, &[16], 9, 0).is_err());
    }

    #[test]
    fn tables_group_and_round_trip() {
        let s = StructureReport {
            method_name: "ours, desk".into(),
            content_ssim: 0.412345678901,
            depth_ssim: 0.8,
            edge_ssim: -0.01,
            n_pairs: 8,
        };
        let t = render_table(&[Report::Structure(s.clone())]).unwrap();
        let csv = t.structure_csv.unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(parse_structure_csv(&csv).unwrap(), vec![s.clone()]);
        assert!(t.speed_csv.is_none());

        let sp = SpeedReport::from_timings(256, vec![0.5; 12], 2, "cpu, 1 core".into()).unwrap();
        let both = render_table(&[Report::Speed(sp.clone()), Report::Structure(s)]).unwrap();
        assert!(both.text.contains("Structure consistency") && both.text.contains("Execution time"));
        let parsed = parse_speed_csv(&both.speed_csv.unwrap()).unwrap();
        assert_eq!(parsed[0].mean_seconds, sp.mean_seconds);
        assert_eq!(parsed[0].hardware_note, sp.hardware_note);
        assert!(render_table(&[]).is_err());
    }
}
