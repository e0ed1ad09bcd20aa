mod common;

use std::sync::atomic::AtomicBool;

use common::tiny_setup;
use ldstyle::archive::{Archive, SCHEMA_VERSION};
use ldstyle::encoder::{Encoder, EncoderSpec};
use ldstyle::imaging::EdgeBackend;
use ldstyle::losses::LossWeights;
use ldstyle::optim::AdamConfig;
use ldstyle::synth::{content_image, style_image};
use ldstyle::trainer::{
    ablation_sweep, load_checkpoint, pair_stream, read_log, save_checkpoint, train, Batch, Checkpoint, HeldOut,
    TrainConfig, TrainState,
};
use ldstyle::transfer::TransferModel;
use ldstyle::depth::DepthBackend;
use ldstyle::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn stream_yields_cropped_batches_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_setup(dir.path(), 10, 1);
    cfg.batch_size = 5;
    let first = pair_stream(&cfg).unwrap().next().unwrap().unwrap();
    assert_eq!(first.len(), 5);
    for img in first.content.iter().chain(&first.style) {
        assert_eq!(img.dims(), (32, 32));
    }
    let again = pair_stream(&cfg).unwrap().next().unwrap().unwrap();
    assert_eq!(first, again);
    cfg.seed += 1;
    assert_ne!(first, pair_stream(&cfg).unwrap().next().unwrap().unwrap());
}

#[test]
fn stream_errors_and_skips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_setup(dir.path(), 2, 1);
    std::fs::write(cfg.content_dir.join("broken.png"), b"not a png").unwrap();
    let mut s = pair_stream(&cfg).unwrap();
    for _ in 0..4 {
        assert_eq!(s.next().unwrap().unwrap().len(), 2);
    }
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let mut bad = cfg.clone();
    bad.content_dir = empty;
    assert!(matches!(pair_stream(&bad), Err(Error::Dataset(_))));
    let only_broken = dir.path().join("broken");
    std::fs::create_dir_all(&only_broken).unwrap();
    std::fs::write(only_broken.join("x.png"), b"junk").unwrap();
    bad.content_dir = only_broken;
    assert!(matches!(pair_stream(&bad).unwrap().next().unwrap(), Err(Error::Dataset(_))));
}

fn tiny_state(seed: u64, weights: LossWeights) -> TrainState {
    let spec = EncoderSpec::narrow(16);
    let ckpt = Checkpoint::initial(
        TransferModel::random(spec, seed).unwrap(),
        Encoder::random(spec, 1),
        AdamConfig::default(),
        String::new(),
    )
    .unwrap();
    TrainState::resume(ckpt, DepthBackend::Stub, weights).unwrap()
}

fn fixed_pair(seed: u64) -> Batch {
    Batch {
        content: vec![content_image(24, 24, seed)],
        style: vec![style_image(24, 24, seed + 1000)],
    }
}

#[test]
fn repeated_step_on_one_pair_usually_lowers_the_loss() {
    let mut better = 0;
    for seed in 0..20 {
        let mut s = tiny_state(seed, LossWeights::default());
        let batch = fixed_pair(seed);
        let a = s.step(&batch).unwrap().total;
        let b = s.step(&batch).unwrap().total;
        if b <= a {
            better += 1;
        }
    }
    assert!(better >= 16, "{better}/20");
}

#[test]
fn encoder_stays_frozen() {
    let mut s = tiny_state(0, LossWeights::default());
    let mut before = Archive::new();
    s.encoder.export(&mut before, "");
    for i in 0..100 {
        s.step(&fixed_pair(i % 3)).unwrap();
    }
    let mut after = Archive::new();
    s.encoder.export(&mut after, "");
    assert_eq!(before.to_bytes(), after.to_bytes());
    assert_eq!(s.iteration, 100);
}

#[test]
fn zero_objective_leaves_parameters_unchanged() {
    let mut s = tiny_state(2, LossWeights::new(0.0, 0.0, 0.0, 0.0).unwrap());
    let before = s.checkpoint("").model;
    let b = s.step(&fixed_pair(1)).unwrap();
    assert_eq!(b.total, 0.0);
    let mut x = Archive::new();
    let mut y = Archive::new();
    before.export(&mut x, "");
    s.model.export(&mut y, "");
    assert_eq!(x.to_bytes(), y.to_bytes());
}

#[test]
fn non_finite_loss_is_a_divergence() {
    let mut s = tiny_state(0, LossWeights::default());
    s.model.decoder.convs[0].bias.value[0] = f32::NAN;
    match s.step(&fixed_pair(0)) {
        Err(Error::Divergence { iteration }) => assert_eq!(iteration, 1),
        other => panic!("expected divergence, got {other:?}"),
    }
    assert_eq!(s.iteration, 0);
}

#[test]
fn train_logs_checkpoints_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_setup(dir.path(), 4, 3);
    cfg.checkpoint_every = 2;
    let run = train(&cfg, None).unwrap();
    assert_eq!(run.history.len(), 3);
    assert_eq!(run.checkpoint.iteration, 3);
    assert!(!run.cancelled);
    let log = read_log(&cfg.output_dir.join("train_log.csv")).unwrap();
    assert_eq!(log.iter().map(|(i, _)| *i).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(log[2].1.total, run.history[2].total);
    let loaded = load_checkpoint(&run.checkpoint_path).unwrap();
    assert_eq!(loaded.to_bytes(), run.checkpoint.to_bytes());
    assert_eq!(TrainConfig::from_toml(&loaded.config, dir.path()).unwrap(), cfg);

    cfg.output_dir = dir.path().join("again");
    let twin = train(&cfg, None).unwrap();
    assert_eq!(twin.history, run.history);
}

#[test]
fn zero_iterations_and_cancel_keep_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_setup(dir.path(), 2, 0);
    let run = train(&cfg, None).unwrap();
    assert_eq!(run.checkpoint.iteration, 0);
    let init = TrainState::from_config(&cfg).unwrap().checkpoint(&cfg.to_toml());
    assert_eq!(run.checkpoint.to_bytes(), init.to_bytes());

    let mut cfg = cfg;
    cfg.max_iterations = 5;
    let stop = AtomicBool::new(true);
    let run = train(&cfg, Some(&stop)).unwrap();
    assert!(run.cancelled);
    assert_eq!(load_checkpoint(&run.checkpoint_path).unwrap().iteration, 0);
}

fn random_checkpoint(seed: u64) -> Checkpoint {
    let spec = EncoderSpec::narrow(16);
    let mut c = Checkpoint::initial(
        TransferModel::random(spec, seed).unwrap(),
        Encoder::random(spec, seed + 1),
        AdamConfig::default(),
        format!("seed = {seed}\n"),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in c.adam.m.iter_mut().chain(c.adam.v.iter_mut()) {
        m.iter_mut().for_each(|x| *x = rng.gen::<f32>() * 1e-3);
    }
    c.adam.step = rng.gen_range(1..1000);
    c.iteration = c.adam.step;
    c
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let c = random_checkpoint(seed);
        let path = dir.path().join(format!("c{seed}.ldst"));
        save_checkpoint(&c, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.to_bytes(), c.to_bytes());
        assert_eq!((back.iteration, back.adam.step), (c.iteration, c.adam.step));
        assert_eq!(back.config, c.config);
    }
}

#[test]
fn checkpoint_errors_are_loud() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = random_checkpoint(0).to_bytes();
    let write = |name: &str, b: &[u8]| {
        let p = dir.path().join(name);
        std::fs::write(&p, b).unwrap();
        p
    };
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(load_checkpoint(write("magic", &magic)), Err(Error::Corruption(_))));
    let mut old = bytes.clone();
    old[4..8].copy_from_slice(&(SCHEMA_VERSION - 1).to_le_bytes());
    assert!(matches!(load_checkpoint(write("old", &old)), Err(Error::CheckpointFormat(_))));
    let partial = &bytes[..bytes.len() / 2];
    assert!(matches!(load_checkpoint(write("partial", partial)), Err(Error::Corruption(_))));
    let mut a = random_checkpoint(0).to_archive();
    a.tensors.remove("optim.step");
    match load_checkpoint(write("missing", &a.to_bytes())) {
        Err(Error::CheckpointFormat(m)) => assert!(m.contains("optim.step")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn sweep_covers_the_grid_and_survives_failed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_setup(dir.path(), 3, 1);
    let held_out = HeldOut {
        pairs: (0..2).map(|i| (content_image(32, 32, 900 + i), style_image(32, 32, 950 + i))).collect(),
        depth: DepthBackend::Stub,
        edge: EdgeBackend::Sobel,
    };
    let cells = ablation_sweep(&cfg, &[0.0, 0.1], &[0.0, 20.0], &held_out, None).unwrap();
    assert_eq!(cells.len(), 4);
    for c in &cells {
        let (run, report) = c.outcome.as_ref().unwrap();
        assert_eq!(run.checkpoint.iteration, 1);
        assert_eq!(report.n_pairs, 2);
        assert!(c.output_dir.join("checkpoint.ldst").is_file());
    }
    let base = &cells[0].outcome.as_ref().unwrap().0;
    let full = &cells[3].outcome.as_ref().unwrap().0;
    assert_eq!(base.history[0].content, full.history[0].content);
    assert_eq!((cells[0].lap, cells[0].depth), (0.0, 0.0));

    let cells = ablation_sweep(&cfg, &[-1.0, 0.1], &[0.0], &held_out, None).unwrap();
    assert!(cells[0].outcome.is_err());
    assert!(cells[1].outcome.is_ok());
    assert!(ablation_sweep(&cfg, &[], &[0.0], &held_out, None).is_err());
}
