use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use ldstyle::imaging::{encode_image, GrayMap, MapKind, OutputFormat};
use ldstyle_service::{router, AppState, Engine, ServiceConfig};
use tower::ServiceExt;

fn ldstyle(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldstyle"))
        .args(args)
        .current_dir(dir)
        .env_remove("LDSTYLE_WEIGHTS_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = ldstyle(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Tiny corpora plus one trained checkpoint.
struct Fixture {
    dir: tempfile::TempDir,
    ckpt: PathBuf,
}

fn train_args<'a>(iterations: &'a str, output_dir: &'a str) -> Vec<&'a str> {
    vec![
        "train",
        "--content-dir",
        "content",
        "--style-dir",
        "style",
        "--iterations",
        iterations,
        "--batch-size",
        "2",
        "--crop-size",
        "32",
        "--resize-target",
        "40",
        "--width-divisor",
        "16",
        "--seed",
        "5",
        "--output-dir",
        output_dir,
    ]
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (kind, seed) in [("content", "100"), ("style", "200")] {
        ok(d, &["make-corpus", "--kind", kind, "--count", "4", "--size", "40", "--seed", seed, "--out", kind]);
    }
    let out = ok(d, &train_args("3", "run"));
    let printed = String::from_utf8(out.stdout).unwrap();
    let ckpt = d.join("run/checkpoint.ldst");
    assert_eq!(d.join(printed.trim()), ckpt);
    Fixture { dir, ckpt }
}

impl Fixture {
    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn ckpt(&self) -> &str {
        self.ckpt.to_str().unwrap()
    }

    fn read(&self, name: &str) -> Vec<u8> {
        std::fs::read(self.path().join(name)).unwrap()
    }
}

#[test]
fn help_exits_zero_without_touching_files() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [
        "train",
        "stylize",
        "interpolate",
        "mask-stylize",
        "sweep",
        "evaluate",
        "bench",
        "serve",
        "make-corpus",
        "init-encoder",
    ] {
        let out = ldstyle(dir.path(), &[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
    assert_eq!(ldstyle(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_and_input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(ldstyle(d, &["stylize", "--bogus"]).status.code(), Some(1));
    assert_eq!(ldstyle(d, &[]).status.code(), Some(1));

    let out = ldstyle(d, &["train", "--config", "missing.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing.cfg"), "{}", stderr(&out));

    let out = ldstyle(
        d,
        &["stylize", "-c", "c.png", "-s", "s.png", "-o", "o.png", "--ckpt", "nowhere.ldst"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nowhere.ldst"), "{}", stderr(&out));

    std::fs::write(d.join("bad.toml"), "content_dir = 'a'\nstyle_dir = 'b'\nmax_iterations = 1\nlearning_rte = 1\n").unwrap();
    let out = ldstyle(d, &["train", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bad.toml"), "{}", stderr(&out));
}

#[test]
fn controls_write_expected_images() {
    let f = fixture();
    let d = f.path();
    let ck = f.ckpt();
    let (c, s1, s2) = ("content/content_0000.png", "style/style_0000.png", "style/style_0001.png");

    ok(d, &["stylize", "-c", c, "-s", s1, "-o", "full.png", "--ckpt", ck]);
    ok(d, &["stylize", "-c", c, "-s", s1, "-o", "again.png", "--ckpt", ck]);
    ok(d, &["stylize", "-c", c, "-s", s1, "-o", "half.png", "--ckpt", ck, "--alpha", "0.5"]);
    assert!(f.read("full.png") == f.read("again.png"));
    assert!(f.read("full.png") != f.read("half.png"));

    let mask = GrayMap::new(40, 40, vec![1.0; 1600], MapKind::Mask).unwrap().to_image();
    std::fs::write(d.join("all.png"), encode_image(&mask, OutputFormat::Png).unwrap()).unwrap();
    let region = format!("all.png:{s1}");
    ok(d, &["mask-stylize", "-c", c, "--region", &region, "-o", "masked.png", "--ckpt", ck]);
    assert!(f.read("masked.png") == f.read("full.png"));

    let (w1, w2) = (format!("{s1}:1"), format!("{s2}:0"));
    ok(d, &["interpolate", "-c", c, "--style", &w1, "--style", &w2, "-o", "mix.png", "--ckpt", ck]);
    assert!(f.read("mix.png") == f.read("full.png"));
    let (w1, w2) = (format!("{s1}:0.25"), format!("{s2}:0.75"));
    ok(d, &["interpolate", "-c", c, "--style", &w1, "--style", &w2, "-o", "mix2.png", "--ckpt", ck]);
    assert!(f.read("mix2.png") != f.read("full.png"));

    let out = ldstyle(d, &["interpolate", "-c", c, "--style", s1, "-o", "x.png", "--ckpt", ck]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("x.png").exists());
}

#[test]
fn training_is_reproducible_and_resumable() {
    let f = fixture();
    let d = f.path();
    let (ckpt, log) = (f.read("run/checkpoint.ldst"), f.read("run/train_log.csv"));
    ok(d, &train_args("3", "run"));
    assert!(ckpt == f.read("run/checkpoint.ldst"), "checkpoint bytes differ between runs");
    assert!(log == f.read("run/train_log.csv"), "loss log differs between runs");

    let mut args = train_args("2", "run3");
    args.extend(["--resume", f.ckpt()]);
    ok(d, &args);
    let log = String::from_utf8(f.read("run3/train_log.csv")).unwrap();
    let iters: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iters, ["4", "5"]);

    ok(d, &["init-encoder", "--out", "enc.ldst", "--width-divisor", "16", "--seed", "9"]);
    let mut args = train_args("1", "run4");
    args.extend(["--encoder", "enc.ldst"]);
    ok(d, &args);
}

#[test]
fn evaluate_bench_and_sweep_write_reports() {
    let f = fixture();
    let d = f.path();
    std::fs::create_dir_all(d.join("pairs/stylized")).unwrap();
    ok(d, &["make-corpus", "--kind", "content", "--count", "2", "--size", "40", "--out", "pairs/content"]);
    for name in ["content_0000.png", "content_0001.png"] {
        std::fs::copy(d.join("pairs/content").join(name), d.join("pairs/stylized").join(name)).unwrap();
    }
    let out = ok(d, &["evaluate", "--pairs-dir", "pairs", "--out", "eval.csv", "--method-name", "copy"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("copy"));
    let csv = String::from_utf8(f.read("eval.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row, ["copy", "1", "1", "1", "2"]);

    ok(
        d,
        &["bench", "--resolutions", "32,48", "--runs", "10", "--warmup", "3", "--width-divisor", "16", "--out", "speed.csv"],
    );
    let raw = String::from_utf8(f.read("speed.raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 20);
    assert_eq!(raw.lines().filter(|l| l.contains(",true,")).count(), 6);
    assert_eq!(String::from_utf8(f.read("speed.csv")).unwrap().lines().count(), 3);
    let out = ldstyle(d, &["bench", "--resolutions", "32", "--runs", "5", "--width-divisor", "16"]);
    assert_eq!(out.status.code(), Some(1));

    let mut args = train_args("1", "grid");
    args.extend([
        "--lap",
        "0,0.1",
        "--depth",
        "0",
        "--held-out",
        "pairs",
        "--out",
        "sweep.csv",
    ]);
    args[0] = "sweep";
    std::fs::create_dir_all(d.join("pairs/style")).unwrap();
    ok(d, &["make-corpus", "--kind", "style", "--count", "2", "--size", "40", "--out", "pairs/style"]);
    ok(d, &args);
    let csv = String::from_utf8(f.read("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(d.join("grid/lap0_depth0/checkpoint.ldst").is_file());
    assert!(d.join("grid/lap0.1_depth0/checkpoint.ldst").is_file());
}

async fn service_png(app: &axum::Router, content: &[u8], style: &[u8], alpha: &str) -> Vec<u8> {
    let b = "cli-parity";
    let mut body = Vec::new();
    for (name, bytes) in [("content", content), ("style", style), ("alpha", alpha.as_bytes())] {
        let file = if name == "alpha" { String::new() } else { format!("; filename=\"{name}.png\"") };
        body.extend_from_slice(format!("--{b}\r\nContent-Disposition: form-data; name=\"{name}\"{file}\r\n\r\n").as_bytes());
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{b}--\r\n").as_bytes());
    let req = Request::post("/v1/stylize")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={b}"))
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec()
}

#[tokio::test]
async fn service_matches_cli_bytes() {
    let f = fixture();
    let d = f.path();
    let ck = f.ckpt();
    let (c, s) = ("content/content_0002.png", "style/style_0003.png");
    let app = router(AppState::new(Engine::load(&f.ckpt).unwrap(), ServiceConfig::default()));
    for (alpha, file) in [("1", "a1.png"), ("0", "a0.png"), ("0.3", "a03.png")] {
        ok(d, &["stylize", "-c", c, "-s", s, "-o", file, "--ckpt", ck, "--alpha", alpha]);
        let body = service_png(&app, &f.read(c), &f.read(s), alpha).await;
        assert!(body == f.read(file), "alpha {alpha}: service bytes differ from the CLI file");
    }
}
