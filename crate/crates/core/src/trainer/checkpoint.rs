use std::path::Path;

use crate::archive::{Archive, TensorData};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::transfer::TransferModel;

const MODEL: &str = "model.";
const ENCODER: &str = "encoder.";
const OPTIM_STEP: &str = "optim.step";
const OPTIM_CONFIG: &str = "optim.config";
const ITERATION: &str = "meta.iteration";

/// Everything needed to resume training or to serve: trainable weights,
/// the frozen encoder they were trained against, optimiser state, the
/// iteration counter and the run config text.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: TransferModel<f32>,
    pub encoder: Encoder<f32>,
    pub adam: Adam<f32>,
    pub iteration: u64,
    pub config: String,
}

impl Checkpoint {
    /// Fresh checkpoint at iteration 0 with zeroed optimiser moments.
    pub fn initial(model: TransferModel<f32>, encoder: Encoder<f32>, adam: AdamConfig, config: String) -> Result<Self> {
        model.check_encoder(&encoder)?;
        let sizes: Vec<usize> = model.named_params().iter().map(|(_, p)| p.len()).collect();
        Ok(Checkpoint {
            adam: Adam::new(adam, &sizes),
            model,
            encoder,
            iteration: 0,
            config,
        })
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        self.model.export(&mut a, MODEL);
        self.encoder.export(&mut a, ENCODER);
        for ((name, _), (m, v)) in self.model.named_params().iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            a.insert_scalars(format!("optim.m.{name}"), &[m.len()], m);
            a.insert_scalars(format!("optim.v.{name}"), &[v.len()], v);
        }
        a.insert_u64(OPTIM_STEP, &[self.adam.step]);
        let c = self.adam.cfg;
        a.insert(OPTIM_CONFIG, &[4], TensorData::F64(vec![c.lr, c.beta1, c.beta2, c.eps]));
        a.insert_u64(ITERATION, &[self.iteration]);
        a.text = self.config.clone();
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let model = TransferModel::from_archive(a, MODEL)?;
        let encoder = Encoder::from_archive(a, ENCODER)?;
        model.check_encoder(&encoder)?;
        let c: Vec<f64> = a.get_as(OPTIM_CONFIG, &[4])?;
        let mut adam = Adam::new(
            AdamConfig {
                lr: c[0],
                beta1: c[1],
                beta2: c[2],
                eps: c[3],
            },
            &[],
        );
        for (name, p) in model.named_params() {
            adam.m.push(a.get_as(&format!("optim.m.{name}"), &[p.len()])?);
            adam.v.push(a.get_as(&format!("optim.v.{name}"), &[p.len()])?);
        }
        adam.step = single_u64(a, OPTIM_STEP)?;
        Ok(Checkpoint {
            model,
            encoder,
            adam,
            iteration: single_u64(a, ITERATION)?,
            config: a.text.clone(),
        })
    }

    /// Canonical serialised form; equal bytes mean bit-identical state.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_archive().to_bytes()
    }
}

fn single_u64(a: &Archive, name: &str) -> Result<u64> {
    match a.get_u64(name)?.as_slice() {
        [v] => Ok(*v),
        other => Err(Error::CheckpointFormat(format!(
            "`{name}` should hold one value, found {}",
            other.len()
        ))),
    }
}

/// Atomic write-then-rename.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.to_archive().write(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::from_archive(&Archive::read(path)?).map_err(|e| match e {
        Error::CheckpointFormat(m) => Error::CheckpointFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads just the inference half of a checkpoint.
pub fn load_model(path: impl AsRef<Path>) -> Result<(TransferModel<f32>, Encoder<f32>)> {
    let c = load_checkpoint(path)?;
    Ok((c.model, c.encoder))
}
