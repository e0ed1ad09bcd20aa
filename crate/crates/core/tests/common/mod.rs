#![allow(dead_code)]

use std::path::Path;

use ldstyle::synth::{write_corpus, CorpusKind};
use ldstyle::trainer::TrainConfig;

/// Small corpora and a narrow-encoder config that trains in milliseconds.
pub fn tiny_setup(root: &Path, n: usize, iterations: u64) -> TrainConfig {
    write_corpus(&root.join("content"), CorpusKind::Content, n, 40, 100).unwrap();
    write_corpus(&root.join("style"), CorpusKind::Style, n, 40, 500).unwrap();
    let mut cfg = TrainConfig::new(root.join("content"), root.join("style"), iterations);
    cfg.output_dir = root.join("out");
    cfg.resize_target = 40;
    cfg.crop_size = 32;
    cfg.batch_size = 2;
    cfg.encoder_width_divisor = 16;
    cfg.seed = 11;
    cfg
}
