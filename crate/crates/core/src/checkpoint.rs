//! Checkpoint byte format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "PFDL"
//! version u32      currently 1
//! count   u32      number of tensors
//! manifest, per tensor:
//!     name_len u32, name bytes (UTF-8),
//!     ndim u32, dims (u64 each),
//!     offset u64   byte offset of the tensor's payload, from payload start
//! payload: raw little-endian f64 values, tensors in manifest order
//! ```
//!
//! Encoding a store twice yields identical bytes; decoding validates the
//! manifest against the receiving model's parameter names and shapes and
//! names the first tensor that does not match.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const MAGIC: [u8; 4] = *b"PFDL";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut manifest = Vec::new();
    let mut payload = Vec::new();
    for (name, tensor) in store.iter() {
        let offset = payload.len() as u64;
        manifest.extend_from_slice(&(name.len() as u32).to_le_bytes());
        manifest.extend_from_slice(name.as_bytes());
        manifest.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            manifest.extend_from_slice(&(d as u64).to_le_bytes());
        }
        manifest.extend_from_slice(&offset.to_le_bytes());
        for &v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(12 + manifest.len() + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint {
                msg: format!(
                    "truncated file: wanted {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// A decoded manifest entry plus its values.
pub struct RawTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Parses checkpoint bytes into named tensors.
pub fn decode(bytes: &[u8]) -> Result<Vec<RawTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint {
            msg: String::from("bad magic, not a checkpoint file"),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint {
            msg: format!("unsupported format version {version} (expected {VERSION})"),
        });
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = core::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint {
                msg: String::from("manifest name is not UTF-8"),
            })?
            .into();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let offset = r.u64()? as usize;
        entries.push((name, shape, offset));
    }
    let payload_start = r.pos;
    let mut out = Vec::with_capacity(count);
    for (name, shape, offset) in entries {
        let numel: usize = shape.iter().product();
        let start = payload_start + offset;
        if start + numel * 8 > bytes.len() {
            return Err(Error::Checkpoint {
                msg: format!("payload for tensor '{name}' is out of bounds"),
            });
        }
        let values = bytes[start..start + numel * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(RawTensor {
            name,
            shape,
            values,
        });
    }
    Ok(out)
}

/// Loads checkpoint bytes into an existing store. Every manifest entry
/// must match the store's name and shape at the same position.
pub fn decode_into(bytes: &[u8], store: &mut ParamStore) -> Result<()> {
    let tensors = decode(bytes)?;
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint {
            msg: format!(
                "checkpoint has {} tensors, model has {}",
                tensors.len(),
                store.len()
            ),
        });
    }
    for (i, raw) in tensors.iter().enumerate() {
        let id = crate::params::ParamId(i);
        let name = store.name(id);
        if raw.name != name {
            return Err(Error::Checkpoint {
                msg: format!("tensor #{i} is '{}', model expects '{name}'", raw.name),
            });
        }
        if raw.shape != store.get(id).shape() {
            return Err(Error::Checkpoint {
                msg: format!(
                    "tensor '{}' has shape {:?}, model expects {:?}",
                    raw.name,
                    raw.shape,
                    store.get(id).shape()
                ),
            });
        }
    }
    for (i, raw) in tensors.into_iter().enumerate() {
        store
            .get_mut(crate::params::ParamId(i))
            .data_mut()
            .copy_from_slice(&raw.values);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::model::{DualModel, ModelConfig, ModelVariant};

    fn model(d_model: usize) -> DualModel {
        let enc = EncoderConfig {
            vocab_size: 16,
            d_model,
            n_layers: 1,
            n_heads: 2,
            d_ff: 8,
            max_len: 8,
            dropout_p: 0.0,
        };
        DualModel::init(ModelConfig::new(enc, ModelVariant::PfDfl), 77).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact_and_idempotent() {
        let m = model(8);
        let bytes = encode(&m.store);
        let mut m2 = model(8);
        // scramble before loading
        for t in m2.store.tensors_mut() {
            for v in t.data_mut() {
                *v += 1.0;
            }
        }
        decode_into(&bytes, &mut m2.store).unwrap();
        for (a, b) in m.store.tensors().iter().zip(m2.store.tensors()) {
            assert_eq!(a.data(), b.data());
        }
        // save -> load -> save gives identical bytes
        assert_eq!(bytes, encode(&m2.store));
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let m = model(8);
        let mut bytes = encode(&m.store);
        bytes[0] = b'X';
        match decode(&bytes) {
            Err(Error::Checkpoint { msg }) => assert!(msg.contains("magic")),
            other => panic!("expected checkpoint error, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let m = model(8);
        let mut bytes = encode(&m.store);
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn mismatched_width_names_the_tensor() {
        let m = model(8);
        let bytes = encode(&m.store);
        let mut other = model(4);
        match decode_into(&bytes, &mut other.store) {
            Err(Error::Checkpoint { msg }) => {
                assert!(msg.contains("enc_hall.tok_emb"), "message: {msg}");
            }
            other => panic!("expected mismatch error, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let m = model(8);
        let bytes = encode(&m.store);
        assert!(decode(&bytes[..bytes.len() / 2]).is_err());
    }
}
