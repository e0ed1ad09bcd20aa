//! Single-file named-tensor archive used for checkpoints and pretrained
//! weights.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LDST"                      magic
//! u32                         schema version
//! u32                         record count
//! record*:
//!   u32 + utf8                name
//!   u8                        dtype (0 = f32, 1 = f64, 2 = u64)
//!   u32 + u64*                rank and dims
//!   u64 + bytes               raw little-endian payload
//! u64 + utf8                  config snapshot text
//! "TSDL"                      end marker
//! ```
//!
//! Records are written in name order, so equal archives serialise to equal
//! bytes.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"LDST";
pub const END_MARKER: &[u8; 4] = b"TSDL";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U64(_) => DType::U64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_scalars<T: Scalar>(v: &[T]) -> Self {
        match T::DTYPE {
            DType::F32 => TensorData::F32(v.iter().map(|x| x.to_f32().unwrap()).collect()),
            _ => TensorData::F64(v.iter().map(|x| x.to_f64().unwrap()).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveTensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub tensors: BTreeMap<String, ArchiveTensor>,
    pub text: String,
}

fn corrupt(what: impl Into<String>) -> Error {
    Error::Corruption(what.into())
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: TensorData) {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "shape does not match payload length");
        self.tensors.insert(
            name.into(),
            ArchiveTensor {
                shape: shape.to_vec(),
                data,
            },
        );
    }

    pub fn insert_scalars<T: Scalar>(&mut self, name: impl Into<String>, shape: &[usize], v: &[T]) {
        self.insert(name, shape, TensorData::from_scalars(v));
    }

    pub fn insert_u64(&mut self, name: impl Into<String>, v: &[u64]) {
        self.insert(name, &[v.len()], TensorData::U64(v.to_vec()));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&ArchiveTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::CheckpointFormat(format!("missing tensor `{name}`")))
    }

    /// Fetches a float tensor, converting to `T`, and checks its shape.
    pub fn get_as<T: Scalar>(&self, name: &str, shape: &[usize]) -> Result<Vec<T>> {
        let t = self.get(name)?;
        if t.shape != shape {
            return Err(Error::CheckpointFormat(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                t.shape, shape
            )));
        }
        match &t.data {
            TensorData::F32(v) => Ok(v.iter().map(|&x| T::lit(x as f64)).collect()),
            TensorData::F64(v) => Ok(v.iter().map(|&x| T::lit(x)).collect()),
            TensorData::U64(_) => Err(Error::CheckpointFormat(format!(
                "tensor `{name}` holds integers, expected floats"
            ))),
        }
    }

    pub fn get_u64(&self, name: &str) -> Result<Vec<u64>> {
        match &self.get(name)?.data {
            TensorData::U64(v) => Ok(v.clone()),
            _ => Err(Error::CheckpointFormat(format!(
                "tensor `{name}` holds floats, expected integers"
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(SCHEMA_VERSION).unwrap();
        out.write_u32::<LittleEndian>(self.tensors.len() as u32).unwrap();
        for (name, t) in &self.tensors {
            out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
            out.extend_from_slice(name.as_bytes());
            out.push(t.data.dtype().tag());
            out.write_u32::<LittleEndian>(t.shape.len() as u32).unwrap();
            for &d in &t.shape {
                out.write_u64::<LittleEndian>(d as u64).unwrap();
            }
            out.write_u64::<LittleEndian>((t.data.len() * t.data.dtype().size()) as u64)
                .unwrap();
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out.write_u64::<LittleEndian>(self.text.len() as u64).unwrap();
        out.extend_from_slice(self.text.as_bytes());
        out.extend_from_slice(END_MARKER);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let eof = |_| corrupt("unexpected end of file");
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != MAGIC {
            return Err(corrupt(format!("bad magic header {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>().map_err(eof)?;
        if version != SCHEMA_VERSION {
            return Err(Error::CheckpointFormat(format!(
                "schema version {version} is not supported (this build reads version {SCHEMA_VERSION})"
            )));
        }
        let count = r.read_u32::<LittleEndian>().map_err(eof)?;
        let remaining = |r: &Cursor<&[u8]>| bytes.len() as u64 - r.position();
        let mut archive = Archive::new();
        for _ in 0..count {
            let name_len = r.read_u32::<LittleEndian>().map_err(eof)? as u64;
            if name_len > remaining(&r) {
                return Err(corrupt("unexpected end of file"));
            }
            let mut name = vec![0u8; name_len as usize];
            r.read_exact(&mut name).map_err(eof)?;
            let name = String::from_utf8(name).map_err(|_| corrupt("tensor name is not utf-8"))?;
            let dtype = DType::from_tag(r.read_u8().map_err(eof)?)
                .ok_or_else(|| corrupt(format!("unknown dtype for `{name}`")))?;
            let rank = r.read_u32::<LittleEndian>().map_err(eof)?;
            if rank > 16 {
                return Err(corrupt(format!("implausible rank {rank} for `{name}`")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(r.read_u64::<LittleEndian>().map_err(eof)? as usize);
            }
            let byte_len = r.read_u64::<LittleEndian>().map_err(eof)?;
            let elems: usize = shape.iter().product();
            if byte_len != (elems * dtype.size()) as u64 {
                return Err(corrupt(format!("payload size mismatch for `{name}`")));
            }
            if byte_len > remaining(&r) {
                return Err(corrupt("unexpected end of file"));
            }
            let start = r.position() as usize;
            let raw = &bytes[start..start + byte_len as usize];
            r.set_position((start + byte_len as usize) as u64);
            let data = match dtype {
                DType::F32 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::F64 => TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::U64 => TensorData::U64(
                    raw.chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            archive.tensors.insert(name, ArchiveTensor { shape, data });
        }
        let text_len = r.read_u64::<LittleEndian>().map_err(eof)?;
        if text_len > remaining(&r) {
            return Err(corrupt("unexpected end of file"));
        }
        let mut text = vec![0u8; text_len as usize];
        r.read_exact(&mut text).map_err(eof)?;
        archive.text = String::from_utf8(text).map_err(|_| corrupt("config text is not utf-8"))?;
        let mut end = [0u8; 4];
        r.read_exact(&mut end).map_err(eof)?;
        if &end != END_MARKER {
            return Err(corrupt("missing end marker"));
        }
        if remaining(&r) != 0 {
            return Err(corrupt("trailing bytes after end marker"));
        }
        Ok(archive)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Corruption(m) => Error::Corruption(format!("{}: {m}", path.display())),
            Error::CheckpointFormat(m) => Error::CheckpointFormat(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample() -> Archive {
        let mut a = Archive::new();
        a.insert("w", &[2, 3], TensorData::F32(vec![1.0, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, 7.0]));
        a.insert("d", &[1], TensorData::F64(vec![std::f64::consts::PI]));
        a.insert_u64("step", &[42]);
        a.text = "seed = 3\n".into();
        a
    }

    #[test]
    fn bytes_round_trip() {
        let a = sample();
        assert_eq!(Archive::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn bad_magic_is_corruption() {
        let mut b = sample().to_bytes();
        b[0] = b'X';
        assert!(matches!(Archive::from_bytes(&b), Err(Error::Corruption(_))));
    }

    #[test]
    fn other_schema_version_is_format_error() {
        let mut b = sample().to_bytes();
        b[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(Archive::from_bytes(&b), Err(Error::CheckpointFormat(_))));
        b[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(Archive::from_bytes(&b), Err(Error::CheckpointFormat(_))));
    }

    #[test]
    fn every_truncation_is_detected() {
        let b = sample().to_bytes();
        for cut in 0..b.len() {
            assert!(
                matches!(Archive::from_bytes(&b[..cut]), Err(Error::Corruption(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn shape_and_presence_checks_name_the_tensor() {
        let a = sample();
        let err = a.get_as::<f32>("w", &[3, 2]).unwrap_err().to_string();
        assert!(err.contains("`w`"), "{err}");
        let err = a.get_as::<f32>("conv5_1.weight", &[1]).unwrap_err().to_string();
        assert!(err.contains("conv5_1.weight"), "{err}");
    }

    proptest! {
        #[test]
        fn arbitrary_f32_payloads_round_trip_bit_exactly(
            bits in proptest::collection::vec(any::<u32>(), 0..64),
            text in ".{0,40}",
        ) {
            let vals: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let mut a = Archive::new();
            a.insert("x", &[vals.len()], TensorData::F32(vals.clone()));
            a.text = text;
            let back = Archive::from_bytes(&a.to_bytes()).unwrap();
            let TensorData::F32(got) = &back.tensors["x"].data else { panic!() };
            prop_assert_eq!(got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), bits);
            prop_assert_eq!(back.text, a.text);
        }
    }
}
