use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{derive_seed, TrainConfig};
use crate::error::{Error, Result};
use crate::imaging::{load_image, random_crop_with, resize_smaller_dim, Image};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Batches kept ready ahead of the optimiser.
const QUEUE_DEPTH: usize = 2;

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Dataset(format!("{} contains no images", dir.display())));
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub content: Vec<Image>,
    pub style: Vec<Image>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.content.len()
    }

    pub fn is_empty(&self) -> bool {
        self.content.is_empty()
    }
}

/// One corpus cycled in a fresh shuffled order per pass.
struct Side {
    dir: PathBuf,
    files: Vec<PathBuf>,
    dead: Vec<bool>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
    resize: usize,
    crop: usize,
}

impl Side {
    fn new(dir: &Path, seed: u64, resize: usize, crop: usize) -> Result<Self> {
        let files = list_images(dir)?;
        let n = files.len();
        Ok(Side {
            dir: dir.to_path_buf(),
            files,
            dead: vec![false; n],
            order: (0..n).collect(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
            resize,
            crop,
        })
    }

    fn prepare(&mut self, path: &Path) -> Result<Image> {
        let img = resize_smaller_dim(&load_image(path)?, self.resize)?;
        random_crop_with(&img, self.crop, &mut self.rng)
    }

    fn next_image(&mut self) -> Result<Image> {
        loop {
            if self.dead.iter().all(|&d| d) {
                return Err(Error::Dataset(format!(
                    "{} has no decodable images",
                    self.dir.display()
                )));
            }
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let idx = self.order[self.pos];
            self.pos += 1;
            if self.dead[idx] {
                continue;
            }
            let path = self.files[idx].clone();
            match self.prepare(&path) {
                Ok(img) => return Ok(img),
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    self.dead[idx] = true;
                }
            }
        }
    }
}

/// Infinite stream of (content, style) batches produced on a loader
/// thread. The thread stops when the stream is dropped.
pub struct PairStream {
    rx: Receiver<Result<Batch>>,
    _worker: JoinHandle<()>,
}

impl Iterator for PairStream {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.recv().ok()
    }
}

/// Each image is resized so its smaller side equals `resize_target`, then
/// randomly cropped to `crop_size`. Both corpora are sampled independently
/// from seeds derived from the run seed.
pub fn pair_stream(cfg: &TrainConfig) -> Result<PairStream> {
    cfg.validate()?;
    let mut content = Side::new(&cfg.content_dir, derive_seed(cfg.seed, "data.content"), cfg.resize_target, cfg.crop_size)?;
    let mut style = Side::new(&cfg.style_dir, derive_seed(cfg.seed, "data.style"), cfg.resize_target, cfg.crop_size)?;
    let batch = cfg.batch_size;
    let (tx, rx) = sync_channel(QUEUE_DEPTH);
    let worker = std::thread::Builder::new()
        .name("pair-loader".into())
        .spawn(move || loop {
            let b = (|| -> Result<Batch> {
                let mut out = Batch {
                    content: Vec::with_capacity(batch),
                    style: Vec::with_capacity(batch),
                };
                for _ in 0..batch {
                    out.content.push(content.next_image()?);
                    out.style.push(style.next_image()?);
                }
                Ok(out)
            })();
            let failed = b.is_err();
            if tx.send(b).is_err() || failed {
                return;
            }
        })
        .map_err(|e| Error::Dataset(format!("cannot start loader thread: {e}")))?;
    Ok(PairStream { rx, _worker: worker })
}
