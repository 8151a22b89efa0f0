//! Checkpoint container.
//!
//! Layout:
//!
//! ```text
//! b"CBSTM1\0\0"                      8-byte magic
//! u64 (little-endian)               manifest length in bytes
//! manifest                          UTF-8 JSON {version, config, tensors, seed}
//! payload                           raw little-endian f64 values
//! ```
//!
//! Each manifest tensor entry is `{name, shape, offset}` with `offset` in
//! bytes from the start of the payload.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ModelParameters;
use crate::tensor::Tensor;
use crate::util::write_atomic;

pub const MAGIC: &[u8; 8] = b"CBSTM1\0\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub seed: u64,
}

/// Decoded checkpoint: manifest plus tensors in manifest order.
#[derive(Clone, Debug)]
pub struct CheckpointData {
    pub config: serde_json::Value,
    pub seed: u64,
    pub tensors: IndexMap<String, Tensor>,
}

pub fn encode(params: &ModelParameters, config: serde_json::Value, seed: u64) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (name, p) in params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: p.value().dims(),
            offset,
        });
        offset += p.value().len() * 8;
    }
    let manifest = serde_json::to_vec(&Manifest {
        version: VERSION,
        config,
        tensors,
        seed,
    })?;
    let mut out = Vec::with_capacity(16 + manifest.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, p) in params.iter() {
        let start = out.len();
        out.resize(start + p.value().len() * 8, 0);
        LittleEndian::write_f64_into(p.value().data(), &mut out[start..]);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<CheckpointData> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "missing checkpoint magic"));
    }
    let mlen = LittleEndian::read_u64(&bytes[8..16]) as usize;
    let body = &bytes[16..];
    if mlen > body.len() {
        return Err(Error::format(path, "manifest length exceeds file size"));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..mlen])?;
    if manifest.version != VERSION {
        return Err(Error::CheckpointVersion {
            expected: VERSION,
            found: manifest.version,
        });
    }
    let payload = &body[mlen..];
    let expected: usize = manifest
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>() * 8)
        .sum();
    if expected != payload.len() {
        return Err(Error::CheckpointLength {
            expected,
            found: payload.len(),
        });
    }
    let mut tensors = IndexMap::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let len = entry.shape.iter().product::<usize>() * 8;
        let chunk = payload
            .get(entry.offset..entry.offset + len)
            .ok_or(Error::CheckpointLength {
                expected: entry.offset + len,
                found: payload.len(),
            })?;
        let mut data = vec![0.0; len / 8];
        LittleEndian::read_f64_into(chunk, &mut data);
        if tensors
            .insert(entry.name.clone(), Tensor::new(entry.shape, data)?)
            .is_some()
        {
            return Err(Error::format(path, format!("duplicate tensor `{}`", entry.name)));
        }
    }
    Ok(CheckpointData {
        config: manifest.config,
        seed: manifest.seed,
        tensors,
    })
}

pub fn write(path: &Path, params: &ModelParameters, config: serde_json::Value, seed: u64) -> Result<()> {
    write_atomic(path, &encode(params, config, seed)?)
}

pub fn read(path: &Path) -> Result<CheckpointData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngState;

    fn sample() -> ModelParameters {
        let mut rng = RngState::new(2);
        let mut p = ModelParameters::new();
        p.register("a", Tensor::randn([2, 3, 1, 1], 1.0, &mut rng)).unwrap();
        p.register_buffer("b", Tensor::randn([1, 4, 2, 2], 1.0, &mut rng)).unwrap();
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let bytes = encode(&p, serde_json::json!({"kind": "test"}), 9).unwrap();
        let back = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.seed, 9);
        for (name, param) in p.iter() {
            let t = &back.tensors[name];
            let same = t
                .data()
                .iter()
                .zip(param.value().data())
                .all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same, "{name}");
        }
    }

    #[test]
    fn truncated_payload_is_a_length_error() {
        let bytes = encode(&sample(), serde_json::Value::Null, 0).unwrap();
        let cut = &bytes[..bytes.len() - 8];
        assert!(matches!(
            decode(cut, Path::new("mem")),
            Err(Error::CheckpointLength { .. })
        ));
    }

    #[test]
    fn version_is_checked() {
        let p = sample();
        let mut bytes = encode(&p, serde_json::Value::Null, 0).unwrap();
        let mlen = LittleEndian::read_u64(&bytes[8..16]) as usize;
        let text = String::from_utf8(bytes[16..16 + mlen].to_vec()).unwrap();
        let patched = text.replacen("\"version\":1", "\"version\":7", 1);
        assert_eq!(patched.len(), text.len());
        bytes[16..16 + mlen].copy_from_slice(patched.as_bytes());
        assert!(matches!(
            decode(&bytes, Path::new("mem")),
            Err(Error::CheckpointVersion { found: 7, .. })
        ));
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        assert!(matches!(
            decode(b"NOTACKPT\0\0\0\0\0\0\0\0", Path::new("mem")),
            Err(Error::Format { .. })
        ));
    }
}
