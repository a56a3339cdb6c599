//! Reconstruction loss to traversability cost, thresholding and evaluation.

mod eval;

pub use eval::{
    evaluate_accuracy, traversable_mask, tune_threshold, Confusion, Evaluation, GroundTruthMask,
    GtLabel, ThresholdSweep, TraversableMask,
};

use std::path::Path;

use ndarray::ArrayView2;
use thiserror::Error;

use crate::autoencoder::{stack_vectors, MlpModel, ModelError};
use crate::defaults;
use crate::features::{all_segment_means, FeatureError, FeatureGrid};
use crate::raster::{self, RasterError};
use crate::superpixel::{nearest_source_index, SegmentMask};

#[derive(Debug, Error)]
pub enum CostError {
    #[error("reconstruction loss must be non-negative, got {0}")]
    NegativeLoss(f64),
    #[error("cap must be positive, got {0}")]
    InvalidCap(f64),
    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("no labeled pixels to evaluate")]
    NoLabeledPixels,
    #[error("empty threshold candidate grid")]
    EmptyCandidates,
    #[error("cost maps and ground truths must be non-empty and paired ({costs} vs {gts})")]
    Unpaired { costs: usize, gts: usize },
    #[error("invalid cost value {0}")]
    InvalidValue(f32),
    #[error("invalid ground-truth label {0}")]
    InvalidLabel(u8),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Normalized cost `min(loss, cap) / cap`.
pub fn normalize_cost(raw_loss: f64, cap: f64) -> Result<f64, CostError> {
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(CostError::InvalidCap(cap));
    }
    if raw_loss.is_nan() || raw_loss < 0.0 {
        return Err(CostError::NegativeLoss(raw_loss));
    }
    Ok(raw_loss.min(cap) / cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    /// One cost per segment, painted over its pixels.
    Segment,
    /// One cost per pixel.
    Pixel,
}

impl Resolution {
    pub fn name(self) -> &'static str {
        match self {
            Resolution::Segment => "segment",
            Resolution::Pixel => "pixel",
        }
    }
}

/// Per-pixel normalized cost in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    pub resolution: Resolution,
    pub threshold: f64,
}

impl CostMap {
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f32>,
        resolution: Resolution,
    ) -> Result<Self, CostError> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(CostError::Dimensions(format!(
                "{height}x{width} cost map with {} values",
                values.len()
            )));
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CostError::InvalidValue(bad));
        }
        Ok(Self {
            height,
            width,
            values,
            resolution,
            threshold: defaults::THRESHOLD,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    /// Nearest-neighbor resampling to `height x width`.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<CostMap, CostError> {
        if height == 0 || width == 0 {
            return Err(CostError::Dimensions("resize target must be positive".into()));
        }
        let cols: Vec<usize> = (0..width)
            .map(|c| nearest_source_index(c, self.width, width))
            .collect();
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            let sr = nearest_source_index(r, self.height, height);
            values.extend(cols.iter().map(|&sc| self.get(sr, sc)));
        }
        Ok(CostMap {
            height,
            width,
            values,
            resolution: self.resolution,
            threshold: self.threshold,
        })
    }

    /// Writes the float map in the grid file format with `dim = 1`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CostError> {
        FeatureGrid::new(self.height, self.width, 1, self.values.clone())?.write(path)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>, resolution: Resolution) -> Result<Self, CostError> {
        let grid = FeatureGrid::read(path)?;
        if grid.dim() != 1 {
            return Err(CostError::Dimensions(format!("cost map file has dim {}", grid.dim())));
        }
        Self::new(grid.height(), grid.width(), grid.into_data(), resolution)
    }

    /// 8-bit grayscale visualization, cost 1 -> 255.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), CostError> {
        let bytes: Vec<u8> = self.values.iter().map(|v| (v * 255.0).round() as u8).collect();
        raster::write_png_gray8(path, self.width, self.height, &bytes)?;
        Ok(())
    }
}

/// Normalized cost of every segment id present in `mask` (`None` otherwise).
pub fn segment_costs(
    model: &MlpModel,
    grid: &FeatureGrid,
    mask: &SegmentMask,
    cap: f64,
) -> Result<Vec<Option<f64>>, CostError> {
    check_model(model, grid)?;
    let means = all_segment_means(grid, mask)?;
    let present: Vec<usize> = (0..means.len()).filter(|&i| means[i].is_some()).collect();
    let vectors: Vec<_> = present.iter().map(|&i| means[i].clone().expect("present")).collect();
    let losses = model.row_losses(stack_vectors(&vectors)?.view())?;
    let mut costs = vec![None; means.len()];
    for (&id, loss) in present.iter().zip(losses) {
        costs[id] = Some(normalize_cost(loss, cap)?);
    }
    Ok(costs)
}

fn check_model(model: &MlpModel, grid: &FeatureGrid) -> Result<(), CostError> {
    if model.dim() != grid.dim() {
        return Err(ModelError::Dimension {
            expected: model.dim(),
            found: grid.dim(),
        }
        .into());
    }
    Ok(())
}

/// Cost image at grid resolution. Segment mode scores each segment's mean
/// embedding; pixel mode scores every cell's own embedding.
pub fn infer_cost_image(
    model: &MlpModel,
    grid: &FeatureGrid,
    mask: &SegmentMask,
    mode: Resolution,
    cap: f64,
) -> Result<CostMap, CostError> {
    check_model(model, grid)?;
    if mask.height() != grid.height() || mask.width() != grid.width() {
        return Err(CostError::Dimensions(format!(
            "mask {}x{} vs grid {}x{}",
            mask.height(),
            mask.width(),
            grid.height(),
            grid.width()
        )));
    }
    let values = match mode {
        Resolution::Segment => {
            let costs = segment_costs(model, grid, mask, cap)?;
            mask.labels()
                .iter()
                .map(|&id| costs[id as usize].expect("every mask id has pixels") as f32)
                .collect()
        }
        Resolution::Pixel => {
            let rows = ArrayView2::from_shape((grid.height() * grid.width(), grid.dim()), grid.data())
                .map_err(|e| CostError::Dimensions(e.to_string()))?;
            model
                .row_losses(rows)?
                .into_iter()
                .map(|l| normalize_cost(l, cap).map(|c| c as f32))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    CostMap::new(grid.height(), grid.width(), values, mode)
}

/// Paints per-segment costs over a full-resolution mask. Segments with no
/// cost (they vanished at grid resolution) take `fallback`'s value, resampled
/// to the mask's size.
pub fn paint_segment_costs(
    full_mask: &SegmentMask,
    costs: &[Option<f64>],
    fallback: &CostMap,
) -> Result<CostMap, CostError> {
    let fb = fallback.resize_nearest(full_mask.height(), full_mask.width())?;
    let values = full_mask
        .labels()
        .iter()
        .zip(fb.values())
        .map(|(&id, &f)| costs.get(id as usize).copied().flatten().map_or(f, |c| c as f32))
        .collect();
    CostMap::new(full_mask.height(), full_mask.width(), values, Resolution::Segment)
}
