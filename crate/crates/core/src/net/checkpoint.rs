//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (model config, dtype, step counter, tensor table, trainer state),
//! then every parameter as little-endian `f64`, followed by the optimizer
//! momentum buffer when present. `f64` storage is exact for both scalar
//! types, so save/load is bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::ParamKind;
use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"SRIQACK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: ParamKind,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    model: ModelConfig,
    step: u64,
    tensors: Vec<TensorEntry>,
    has_momentum: bool,
    #[serde(default)]
    trainer: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub model: Model<S>,
    pub step: u64,
    /// Optimizer momentum, flattened in parameter order.
    pub momentum: Option<Vec<S>>,
    /// Opaque trainer state (config, schedule position, run metadata).
    pub trainer: serde_json::Value,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn from_model(model: Model<S>) -> Self {
        Self {
            model,
            step: 0,
            momentum: None,
            trainer: serde_json::Value::Null,
        }
    }
}

pub fn save_checkpoint<S: Scalar>(ckpt: &Checkpoint<S>, path: &Path) -> Result<()> {
    let params = ckpt.model.params();
    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: S::DTYPE.into(),
        model: ckpt.model.config().clone(),
        step: ckpt.step,
        tensors: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                kind: p.kind,
                len: p.values.len(),
            })
            .collect(),
        has_momentum: ckpt.momentum.is_some(),
        trainer: ckpt.trainer.clone(),
    };
    if let Some(m) = &ckpt.momentum {
        if m.len() != ckpt.model.param_count() {
            return Err(Error::Shape("momentum length differs from parameter count".into()));
        }
    }
    let header = serde_json::to_vec(&header).expect("header serializes");
    let tmp = path.with_extension("tmp");
    let io = |e| Error::io(&tmp, e);
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        for p in &params {
            for v in p.values {
                w.write_all(&v.to_f64_exact().to_le_bytes()).map_err(io)?;
            }
        }
        if let Some(m) = &ckpt.momentum {
            for v in m {
                w.write_all(&v.to_f64_exact().to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_f64s(r: &mut impl Read, n: usize, path: &Path) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated tensor data", path.display())))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b).map_err(|_| bad("truncated header"))?;
    let version = u32::from_le_bytes(u32b);
    if version != FORMAT_VERSION {
        return Err(bad(&format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b).map_err(|_| bad("truncated header"))?;
    let hlen = u64::from_le_bytes(u64b) as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf).map_err(|_| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&hbuf).map_err(|e| bad(&format!("bad header: {e}")))?;

    let mut model = Model::<S>::new(header.model.clone(), 0)?;
    {
        let expected = model.params();
        if expected.len() != header.tensors.len()
            || expected
                .iter()
                .zip(&header.tensors)
                .any(|(p, t)| p.name != t.name || p.values.len() != t.len)
        {
            return Err(bad("tensor table does not match the model configuration"));
        }
    }
    let total = model.param_count();
    let flat: Vec<S> = read_f64s(&mut r, total, path)?
        .into_iter()
        .map(S::from_f64_lossy)
        .collect();
    model.set_flat_params(&flat)?;
    let momentum = if header.has_momentum {
        Some(
            read_f64s(&mut r, total, path)?
                .into_iter()
                .map(S::from_f64_lossy)
                .collect(),
        )
    } else {
        None
    };
    Ok(Checkpoint {
        model,
        step: header.step,
        momentum,
        trainer: header.trainer,
    })
}

/// Hex SHA-256 of a checkpoint file, used to key feature caches.
pub fn checkpoint_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::net::{EncoderConfig, HeadConfig};

    fn small() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                d_enc: 8,
                hidden_channels: vec![4, 6],
                ..EncoderConfig::default()
            },
            head: HeadConfig {
                d_hidden: 10,
                d_proj: 4,
                ..HeadConfig::default()
            },
        }
    }

    #[test]
    fn save_load_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let model = Model::<f32>::new(small(), 5).unwrap();
        let ckpt = Checkpoint {
            momentum: Some(vec![0.5; model.param_count()]),
            model,
            step: 17,
            trainer: serde_json::json!({"epoch": 2}),
        };
        save_checkpoint(&ckpt, &p).unwrap();
        let back: Checkpoint<f32> = load_checkpoint(&p).unwrap();
        assert_eq!(back, ckpt);
        let img: Image<f32> = crate::forge::scenes::synthetic_scene(1, 12, 12);
        let a = ckpt.model.encode_one(&img).unwrap();
        let b = back.model.encode_one(&img).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.ckpt");
        std::fs::write(&p, b"hello world, not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::Checkpoint(_))));
        let good = dir.path().join("g.ckpt");
        save_checkpoint(&Checkpoint::from_model(Model::<f32>::new(small(), 1).unwrap()), &good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::Checkpoint(_))));
    }
}
