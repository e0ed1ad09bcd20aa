//! The generator: attention blocks, multi-scale fusion and decoder.

mod decoder;
mod model;
mod sanet;

pub use decoder::{Decoder, DecoderTrace};
pub use model::{encode, stylize, ModelTrace, TransferModel, MODEL_LAYERS};
pub use sanet::{SanetBlock, SanetTrace, NORM_EPS};
