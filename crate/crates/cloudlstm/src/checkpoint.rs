//! Self-describing model checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"CLSM"
//! u32    format version (currently 1)
//! u64    config JSON length, then that many bytes of UTF-8 JSON
//! u64    tensor count
//! per tensor:
//!   u64  name length, name bytes
//!   u64  rank, then rank x u64 axis lengths
//!   f64  row-major payload (numel values)
//! ```
//!
//! Tensors are written in the model's canonical visitation order and read
//! back by name, so the container stays valid if that order ever changes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::forecaster::{Forecaster, ForecasterConfig, ModelWeights};
use crate::tensor::NdArray;

const MAGIC: &[u8; 4] = b"CLSM";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("config block: {0}")]
    Config(#[from] serde_json::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// Write a model to `path`. Byte-for-byte deterministic for identical models.
pub fn save(model: &Forecaster, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(&model.config)?;
    w.write_all(&(config.len() as u64).to_le_bytes())?;
    w.write_all(&config)?;

    let mut tensors: Vec<(String, NdArray)> = Vec::new();
    model
        .weights
        .visit(&mut |name, arr| tensors.push((name.to_string(), arr.clone())));
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, arr) in &tensors {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(arr.shape().len() as u64).to_le_bytes())?;
        for &d in arr.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in arr.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Read a model back; validates the header, version, and every tensor shape
/// against the config.
pub fn load(path: &Path) -> Result<Forecaster> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut vbuf = [0u8; 4];
    r.read_exact(&mut vbuf)?;
    let version = u32::from_le_bytes(vbuf);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let config_len = read_u64(&mut r)? as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)?;
    let config: ForecasterConfig = serde_json::from_slice(&config_bytes)?;

    let n_tensors = read_u64(&mut r)? as usize;
    let mut by_name: BTreeMap<String, NdArray> = BTreeMap::new();
    for _ in 0..n_tensors {
        let name_len = read_u64(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| CheckpointError::Malformed(format!("tensor name: {e}")))?;
        let rank = read_u64(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let arr = NdArray::new(shape, data)
            .map_err(|e| CheckpointError::Malformed(format!("tensor {name}: {e}")))?;
        by_name.insert(name, arr);
    }

    // materialize a zero model of the right architecture, then fill by name
    let mut weights = ModelWeights::zeros(&config);
    let mut error: Option<CheckpointError> = None;
    weights.visit_mut(&mut |name, slot| {
        if error.is_some() {
            return;
        }
        match by_name.get(name) {
            Some(arr) if arr.shape() == slot.shape() => *slot = arr.clone(),
            Some(arr) => {
                error = Some(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    got: arr.shape().to_vec(),
                    expected: slot.shape().to_vec(),
                })
            }
            None => error = Some(CheckpointError::MissingTensor(name.to_string())),
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    Ok(Forecaster { config, weights })
}
