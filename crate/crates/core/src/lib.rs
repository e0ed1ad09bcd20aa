pub mod archive;
pub mod controls;
pub mod depth;
pub mod encoder;
pub mod error;
pub mod evaluation;
mod fsutil;
pub mod imaging;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod transfer;

pub use error::{Error, Result};
pub use fsutil::write_atomic;
