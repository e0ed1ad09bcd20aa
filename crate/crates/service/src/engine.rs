use std::path::Path;

use ldstyle::controls::stylize_controlled;
use ldstyle::encoder::Encoder;
use ldstyle::imaging::encode_image;
use ldstyle::trainer::load_checkpoint;
use ldstyle::transfer::TransferModel;
use ldstyle::{Error, Result};
use sha2::{Digest, Sha256};

use crate::request::StylizeParams;

/// The read-only model shared by all workers.
pub struct Engine {
    model: TransferModel<f32>,
    encoder: Encoder<f32>,
    checkpoint_hash: String,
}

impl Engine {
    /// Loads a checkpoint; the hash is the SHA-256 of the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt = load_checkpoint(path)?;
        Ok(Self::new(ckpt.model, ckpt.encoder, hex::encode(Sha256::digest(&bytes))))
    }

    pub fn new(model: TransferModel<f32>, encoder: Encoder<f32>, checkpoint_hash: String) -> Self {
        Engine {
            model,
            encoder,
            checkpoint_hash,
        }
    }

    pub fn checkpoint_hash(&self) -> &str {
        &self.checkpoint_hash
    }

    pub fn model(&self) -> &TransferModel<f32> {
        &self.model
    }

    pub fn encoder(&self) -> &Encoder<f32> {
        &self.encoder
    }

    /// Stylizes and encodes the result.
    pub fn render(&self, p: &StylizeParams) -> Result<Vec<u8>> {
        let img = stylize_controlled(&self.model, &self.encoder, &p.content, &p.mix, p.alpha, &p.regions)?;
        encode_image(&img, p.format)
    }
}
