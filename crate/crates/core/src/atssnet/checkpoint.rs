//! Model checkpoint file.
//!
//! ```text
//! magic "ATSM" | version u16 = 1
//! T u16 | d_model u32 | n_layers u16 | n_heads u16 | d_ff u32
//! per parameter, in layout order:
//!     name_len u16 | name | rank u8 | dims u32 x rank | f64 x prod(dims)
//! ```
//!
//! Little-endian throughout. The parameter order is fixed by the
//! configuration; the reader checks every name and shape against it.

use std::path::Path;

use super::{AtssModel, EncoderConfig, ModelError, Parameter};
use crate::fsutil::atomic_write;
use crate::ndauto::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ATSM";
const VERSION: u16 = 1;

pub fn encode_checkpoint(model: &AtssModel) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::with_capacity(24 + model.num_scalars() * 8 + model.parameters().len() * 48);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.frames() as u16).to_le_bytes());
    out.extend_from_slice(&(c.d_model as u32).to_le_bytes());
    out.extend_from_slice(&(c.n_layers as u16).to_le_bytes());
    out.extend_from_slice(&(c.n_heads as u16).to_le_bytes());
    out.extend_from_slice(&(c.d_ff as u32).to_le_bytes());
    for p in model.parameters() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).ok_or(ModelError::Truncated)?;
        let bytes = self.buf.get(self.pos..end).ok_or(ModelError::Truncated)?;
        self.pos = end;
        Ok(bytes)
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<AtssModel, ModelError> {
    if bytes.len() < 4 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let mut cur = Cursor { buf: bytes, pos: 4 };
    let version = cur.u16()?;
    if version != VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let frames = cur.u16()? as usize;
    let d_model = cur.u32()? as usize;
    let n_layers = cur.u16()? as usize;
    let n_heads = cur.u16()? as usize;
    let d_ff = cur.u32()? as usize;
    let config = EncoderConfig {
        n_layers,
        n_heads,
        d_model,
        d_ff,
    };
    let template = AtssModel::init(config, frames, 0)?;

    let mut params = Vec::with_capacity(template.parameters().len());
    for expected in template.parameters() {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8_lossy(cur.take(name_len)?).into_owned();
        let rank = cur.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if name != expected.name || shape != expected.value.shape() {
            return Err(ModelError::UnexpectedParameter {
                expected: expected.name.clone(),
                expected_shape: expected.value.shape().to_vec(),
                found: name,
                found_shape: shape,
            });
        }
        let raw = cur.take(expected.value.len() * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        params.push(Parameter {
            name,
            value: Tensor::new(shape, data)?,
        });
    }
    if cur.pos != bytes.len() {
        return Err(ModelError::TrailingBytes);
    }
    AtssModel::from_parameters(config, frames, params)
}

pub fn save_checkpoint(model: &AtssModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    atomic_write(path, &encode_checkpoint(model)).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AtssModel, ModelError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    decode_checkpoint(&bytes)
}
