//! Model file: `STEPPMLP` | u32 version | u32 layer count | u32 sizes... |
//! f32 parameters per layer (weights row-major, then biases) | u32 metadata
//! length | UTF-8 `key=value` lines. All integers and floats little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Activation, Mlp};
use super::{MlpModel, ModelError, Standardizer};

pub const MODEL_MAGIC: &[u8; 8] = b"STEPPMLP";
pub const MODEL_VERSION: u32 = 1;

const KEY_ACTIVATION: &str = "activation";
const KEY_NORM_MEAN: &str = "norm.mean";
const KEY_NORM_STD: &str = "norm.std";

fn join(values: &[f32]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn split(text: &str, dim: usize, key: &str) -> Result<Vec<f32>, ModelError> {
    let vals = text
        .split(',')
        .map(|t| t.trim().parse::<f32>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ModelError::Metadata(format!("{key}: {e}")))?;
    if vals.len() != dim {
        return Err(ModelError::Metadata(format!("{key}: expected {dim} values, got {}", vals.len())));
    }
    Ok(vals)
}

pub fn model_to_bytes(model: &MlpModel) -> Vec<u8> {
    let mlp = &model.mlp;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(mlp.sizes().len() as u32).to_le_bytes());
    for &s in mlp.sizes() {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for v in mlp.to_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut meta = model.metadata.clone();
    meta.insert(KEY_ACTIVATION.into(), mlp.activation().name().into());
    if let Some(norm) = &model.normalizer {
        meta.insert(KEY_NORM_MEAN.into(), join(&norm.mean));
        meta.insert(KEY_NORM_STD.into(), join(&norm.std));
    }
    let text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).ok_or(ModelError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(ModelError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<MlpModel, ModelError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8).map_err(|_| ModelError::BadMagic)? != MODEL_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(ModelError::Version(version));
    }
    let count = cur.u32()? as usize;
    if !(2..=64).contains(&count) {
        return Err(ModelError::Shape(format!("implausible layer count {count}")));
    }
    let sizes = (0..count)
        .map(|_| cur.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()?;
    if sizes.contains(&0) || sizes.first() != sizes.last() {
        return Err(ModelError::Shape(format!(
            "layer sizes {sizes:?} do not form an autoencoder chain"
        )));
    }
    let mut weights = Vec::with_capacity(count - 1);
    let mut biases = Vec::with_capacity(count - 1);
    let mut read_f32s = |n: usize| -> Result<Vec<f32>, ModelError> {
        let len = n.checked_mul(4).ok_or(ModelError::Truncated)?;
        Ok(cur
            .take(len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    };
    for pair in sizes.windows(2) {
        let w = read_f32s(pair[1] * pair[0])?;
        let b = read_f32s(pair[1])?;
        weights.push(
            Array2::from_shape_vec((pair[1], pair[0]), w).map_err(|e| ModelError::Shape(e.to_string()))?,
        );
        biases.push(Array1::from_vec(b));
    }
    let meta_len = cur.u32()? as usize;
    let text = std::str::from_utf8(cur.take(meta_len)?)
        .map_err(|e| ModelError::Metadata(e.to_string()))?;
    if cur.pos != bytes.len() {
        return Err(ModelError::Shape(format!(
            "{} trailing bytes after metadata",
            bytes.len() - cur.pos
        )));
    }
    let mut metadata = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Metadata(format!("line without '=': {line:?}")))?;
        metadata.insert(k.to_string(), v.to_string());
    }
    let activation = match metadata.remove(KEY_ACTIVATION) {
        None => Activation::Relu,
        Some(name) => Activation::from_name(&name)
            .ok_or_else(|| ModelError::Metadata(format!("unknown activation {name:?}")))?,
    };
    let dim = sizes[0];
    let normalizer = match (metadata.remove(KEY_NORM_MEAN), metadata.remove(KEY_NORM_STD)) {
        (None, None) => None,
        (Some(m), Some(s)) => Some(Standardizer {
            mean: split(&m, dim, KEY_NORM_MEAN)?,
            std: split(&s, dim, KEY_NORM_STD)?,
        }),
        _ => return Err(ModelError::Metadata("incomplete normalization statistics".into())),
    };
    let mlp = Mlp::from_parts(&sizes, weights, biases, activation)?;
    if !mlp.is_finite() {
        return Err(ModelError::Shape("non-finite parameter".into()));
    }
    let mut model = MlpModel::new(mlp)?;
    model.normalizer = normalizer;
    model.metadata = metadata;
    Ok(model)
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&model_to_bytes(model))?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel, ModelError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    model_from_bytes(&bytes)
}
