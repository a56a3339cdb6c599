use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::FeatureError;

/// File magic of the binary grid format.
pub const GRID_MAGIC: &[u8; 8] = b"STEPPFTR";
pub const GRID_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4;

/// Dense `height x width x dim` grid of `f32`, row-major with the embedding
/// dimension innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self, FeatureError> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(FeatureError::Dimensions(format!(
                "grid dims must be positive, got {height}x{width}x{dim}"
            )));
        }
        if data.len() != height * width * dim {
            return Err(FeatureError::Dimensions(format!(
                "{height}x{width}x{dim} grid needs {} values, got {}",
                height * width * dim,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Embedding of the cell at `(row, col)`.
    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Embeddings in raster order.
    pub fn cells(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(GRID_MAGIC);
        for v in [GRID_VERSION, self.height as u32, self.width as u32, self.dim as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FeatureError> {
        if bytes.len() < GRID_MAGIC.len() || &bytes[..8] != GRID_MAGIC {
            return Err(FeatureError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(FeatureError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let word = |i: usize| {
            let o = 8 + 4 * i;
            u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
        };
        let version = word(0);
        if version != GRID_VERSION {
            return Err(FeatureError::UnsupportedVersion(version));
        }
        let (height, width, dim) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let expected = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(dim))
            .and_then(|v| v.checked_mul(4))
            .and_then(|v| v.checked_add(HEADER_LEN))
            .ok_or_else(|| FeatureError::Dimensions("header dimensions overflow".into()))?;
        if bytes.len() < expected {
            return Err(FeatureError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(FeatureError::TrailingBytes(bytes.len() - expected));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new(height, width, dim, data)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }
}

/// Reads a feature grid file.
pub fn read_feature_grid(path: impl AsRef<Path>) -> Result<FeatureGrid, FeatureError> {
    FeatureGrid::read(path)
}

/// Writes a feature grid file.
pub fn write_feature_grid(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    grid.write(path)
}
