//! Self-describing binary checkpoints.
//!
//! Layout (little endian): magic `AUGS1`, `u32` config length and the config
//! text, `u32` block count, then per block a `u16` name length and name,
//! `u8` kind (0 trainable, 1 frozen, 2 buffer), `u8` rank, `u32` dims and the
//! values as `f32`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::model::{Model, ModelConfig, ParamKind};
use super::NnError;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"AUGS1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint does not match the model config: {0}")]
    ConfigMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Config(#[from] NnError),
}

fn kind_byte(k: ParamKind) -> u8 {
    match k {
        ParamKind::Trainable => 0,
        ParamKind::Frozen => 1,
        ParamKind::Buffer => 2,
    }
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let text = model.config().to_text();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let entries = model.params().entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(kind_byte(e.kind));
        out.push(e.value.rank() as u8);
        for &d in e.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in e.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str, CheckpointError> {
        core::str::from_utf8(self.take(n)?).map_err(|_| CheckpointError::Malformed("non-UTF-8 text".into()))
    }
}

/// Decode a checkpoint. With `expected`, the stored config must equal it.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Model, CheckpointError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() {
        return Err(if CHECKPOINT_MAGIC.starts_with(bytes) {
            CheckpointError::Truncated
        } else {
            CheckpointError::BadMagic
        });
    }
    if &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { buf: bytes, pos: 5 };
    let len = r.u32()? as usize;
    let config = ModelConfig::from_text(r.utf8(len)?)?;
    if let Some(exp) = expected {
        if *exp != config {
            return Err(CheckpointError::ConfigMismatch("stored config differs from the requested one".into()));
        }
    }
    let mut model = Model::new(config)?;
    let count = r.u32()? as usize;
    if count != model.params().len() {
        return Err(CheckpointError::ConfigMismatch(format!(
            "{count} blocks stored, architecture has {}",
            model.params().len()
        )));
    }
    for i in 0..count {
        let nlen = r.u16()? as usize;
        let name = r.utf8(nlen)?;
        let kind = match r.u8()? {
            0 => ParamKind::Trainable,
            1 => ParamKind::Frozen,
            2 => ParamKind::Buffer,
            k => return Err(CheckpointError::Malformed(format!("block '{name}': unknown kind {k}"))),
        };
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let entry = &model.params().entries()[i];
        if entry.name != name || entry.value.shape() != shape.as_slice() {
            return Err(CheckpointError::ConfigMismatch(format!(
                "block {i}: stored '{name}' {shape:?}, expected '{}' {:?}",
                entry.name,
                entry.value.shape()
            )));
        }
        if (entry.kind == ParamKind::Buffer) != (kind == ParamKind::Buffer) {
            return Err(CheckpointError::ConfigMismatch(format!("block '{name}': kind mismatch")));
        }
        let n = entry.value.len();
        let raw = r.take(n * 4)?;
        let store = model.params_mut();
        for (dst, src) in store.value_mut(i).data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(src.try_into().expect("4 bytes")) as f64;
        }
        store.set_kind(i, kind);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    model.mark_initialized();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn cfg() -> ModelConfig {
        ModelConfig {
            input_size: 16,
            stage_channels: [4, 4, 8, 8],
            stage_depths: [1, 1, 2, 1],
            attention_dim: 2,
            attention_heads: 2,
            expand_ratio: 2,
            head_channels: 4,
            num_classes: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let mut m = Model::seeded(cfg(), 1).unwrap();
        m.freeze("stem");
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes, Some(&cfg())).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(encode_checkpoint(&back), bytes);
        let probe = Tensor::from_fn(&[2, 3, 16, 16], |i| (i % 17) as f64 / 17.0);
        assert_eq!(back.forward(&probe).unwrap(), m.forward(&probe).unwrap());
    }

    #[test]
    fn errors() {
        let m = Model::seeded(cfg(), 2).unwrap();
        let bytes = encode_checkpoint(&m);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_checkpoint(&bad, None).unwrap_err(), CheckpointError::BadMagic);
        assert_eq!(decode_checkpoint(&bytes[..bytes.len() - 1], None).unwrap_err(), CheckpointError::Truncated);
        assert_eq!(decode_checkpoint(&bytes[..3], None).unwrap_err(), CheckpointError::Truncated);
        let other = ModelConfig { num_classes: 4, ..cfg() };
        assert!(matches!(
            decode_checkpoint(&bytes, Some(&other)),
            Err(CheckpointError::ConfigMismatch(_))
        ));
    }
}
