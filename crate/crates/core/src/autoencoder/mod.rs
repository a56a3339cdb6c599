//! Reconstruction autoencoder over pooled terrain embeddings.
//!
//! The network is trained only on segments that were walked on. Terrain it
//! has seen reconstructs with a low mean squared error; unfamiliar terrain
//! reconstructs poorly, and that error becomes the traversability cost.

mod io;
mod mlp;
mod train;

pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use mlp::{Activation, Gradients, Mlp, Scalar};
pub use train::{train, EpochStats, Optimizer, TrainConfig, TrainOutcome};

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::features::FeatureVector;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("bad magic bytes (not a model file)")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("truncated model file")]
    Truncated,
    #[error("malformed model metadata: {0}")]
    Metadata(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-dimension standardization applied before the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn fit(rows: ArrayView2<f32>) -> Self {
        let n = rows.nrows().max(1) as f64;
        let dim = rows.ncols();
        let mut mean = vec![0.0f64; dim];
        for row in rows.rows() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; dim];
        for row in rows.rows() {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var.iter().map(|&s| ((s / n).sqrt().max(1e-6)) as f32).collect(),
        }
    }

    pub fn apply(&self, rows: &mut Array2<f32>) {
        for mut row in rows.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn invert(&self, rows: &mut Array2<f32>) {
        for mut row in rows.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
    }
}

/// Trained reconstruction model with its optional input standardization and
/// free-form training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub mlp: Mlp<f32>,
    pub normalizer: Option<Standardizer>,
    pub metadata: BTreeMap<String, String>,
}

impl MlpModel {
    /// Wraps a network; fails unless it maps a space onto itself.
    pub fn new(mlp: Mlp<f32>) -> Result<Self, ModelError> {
        if mlp.input_dim() != mlp.output_dim() {
            return Err(ModelError::Shape(format!(
                "autoencoder needs input dim {} = output dim {}",
                mlp.input_dim(),
                mlp.output_dim()
            )));
        }
        Ok(Self {
            mlp,
            normalizer: None,
            metadata: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mlp.input_dim()
    }

    /// Reconstructions of each row, in the input space.
    pub fn reconstruct_rows(&self, rows: ArrayView2<f32>) -> Result<Array2<f32>, ModelError> {
        if rows.ncols() != self.dim() {
            return Err(ModelError::Dimension {
                expected: self.dim(),
                found: rows.ncols(),
            });
        }
        match &self.normalizer {
            None => self.mlp.forward_batch(rows),
            Some(norm) => {
                let mut x = rows.to_owned();
                norm.apply(&mut x);
                let mut y = self.mlp.forward_batch(x.view())?;
                norm.invert(&mut y);
                Ok(y)
            }
        }
    }

    /// Reconstruction loss of each row.
    pub fn row_losses(&self, rows: ArrayView2<f32>) -> Result<Vec<f64>, ModelError> {
        let recon = self.reconstruct_rows(rows)?;
        Ok(rows
            .rows()
            .into_iter()
            .zip(recon.rows())
            .map(|(f, g)| mse(f.iter().copied(), g.iter().copied(), f.len()))
            .collect())
    }
}

fn mse(a: impl Iterator<Item = f32>, b: impl Iterator<Item = f32>, n: usize) -> f64 {
    a.zip(b).map(|(x, y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / n as f64
}

/// Reconstruction of one vector.
pub fn forward(model: &MlpModel, f: &FeatureVector) -> Result<FeatureVector, ModelError> {
    if f.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Shape("input contains non-finite values".into()));
    }
    let view = ArrayView2::from_shape((1, f.len()), f.as_slice())
        .map_err(|e| ModelError::Shape(e.to_string()))?;
    let out = model.reconstruct_rows(view)?;
    Ok(FeatureVector(out.into_iter().collect()))
}

/// Mean squared error over the vector's dimensions.
pub fn reconstruction_loss(f: &FeatureVector, f_hat: &FeatureVector) -> Result<f64, ModelError> {
    if f.len() != f_hat.len() {
        return Err(ModelError::Dimension {
            expected: f.len(),
            found: f_hat.len(),
        });
    }
    if f.is_empty() {
        return Err(ModelError::Dimension {
            expected: 1,
            found: 0,
        });
    }
    Ok(mse(f.0.iter().copied(), f_hat.0.iter().copied(), f.len()))
}

/// Gradient of the mean batch reconstruction loss; rows of `batch` are samples.
pub fn gradients<T: Scalar>(mlp: &Mlp<T>, batch: ArrayView2<T>) -> Result<Gradients<T>, ModelError> {
    mlp.loss_and_gradients(batch).map(|(_, g)| g)
}

/// Stacks vectors into a `rows x dim` matrix.
pub fn stack_vectors(vectors: &[FeatureVector]) -> Result<Array2<f32>, ModelError> {
    let dim = vectors.first().map_or(0, |v| v.len());
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(ModelError::Dimension {
            expected: dim,
            found: bad.len(),
        });
    }
    let flat: Vec<f32> = vectors.iter().flat_map(|v| v.0.iter().copied()).collect();
    Array2::from_shape_vec((vectors.len(), dim), flat).map_err(|e| ModelError::Shape(e.to_string()))
}

#[cfg(test)]
mod tests;
