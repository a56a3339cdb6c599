use std::path::Path;

use super::{CostError, CostMap};
use crate::raster::{self, PngPixels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GtLabel {
    Unlabeled = 0,
    Traversable = 1,
    NonTraversable = 2,
}

impl GtLabel {
    pub fn from_u8(v: u8) -> Result<Self, CostError> {
        match v {
            0 => Ok(GtLabel::Unlabeled),
            1 => Ok(GtLabel::Traversable),
            2 => Ok(GtLabel::NonTraversable),
            other => Err(CostError::InvalidLabel(other)),
        }
    }
}

/// Palette used for ground-truth PNGs: black, green, red.
const GT_PALETTE: [u8; 9] = [0, 0, 0, 0, 200, 0, 200, 0, 0];

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMask {
    width: usize,
    height: usize,
    labels: Vec<GtLabel>,
}

impl GroundTruthMask {
    pub fn new(width: usize, height: usize, labels: Vec<GtLabel>) -> Result<Self, CostError> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(CostError::Dimensions(format!(
                "{width}x{height} ground truth with {} labels",
                labels.len()
            )));
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[GtLabel] {
        &self.labels
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != GtLabel::Unlabeled).count()
    }

    /// Palette PNG with indices 0 / 1 / 2. 8-bit grayscale with the same
    /// values is accepted too.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, CostError> {
        let png = raster::read_png(path)?;
        let raw = match png.pixels {
            PngPixels::Indexed(v) | PngPixels::Gray8(v) => v,
            _ => {
                return Err(CostError::Raster(raster::RasterError::Unsupported(
                    "ground truth must be an 8-bit palette or grayscale PNG".into(),
                )))
            }
        };
        let labels = raw.into_iter().map(GtLabel::from_u8).collect::<Result<_, _>>()?;
        Self::new(png.width, png.height, labels)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CostError> {
        let idx: Vec<u8> = self.labels.iter().map(|&l| l as u8).collect();
        raster::write_png_indexed(path, self.width, self.height, &idx, &GT_PALETTE)?;
        Ok(())
    }
}

/// Binary prediction, `true` = traversable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraversableMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<bool>,
}

pub fn traversable_mask(cost: &CostMap, threshold: f64) -> Result<TraversableMask, CostError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CostError::InvalidThreshold(threshold));
    }
    Ok(TraversableMask {
        width: cost.width(),
        height: cost.height(),
        values: cost.values().iter().map(|&c| c as f64 <= threshold).collect(),
    })
}

/// Counts over labeled pixels; "positive" means traversable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn correct(&self) -> usize {
        self.tp + self.tn
    }

    fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Confusion,
}

fn confusion(pred: &TraversableMask, gt: &GroundTruthMask) -> Result<Confusion, CostError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(CostError::Dimensions(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.values.iter().zip(&gt.labels) {
        match (g, p) {
            (GtLabel::Unlabeled, _) => {}
            (GtLabel::Traversable, true) => c.tp += 1,
            (GtLabel::Traversable, false) => c.fn_ += 1,
            (GtLabel::NonTraversable, true) => c.fp += 1,
            (GtLabel::NonTraversable, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn finish(c: Confusion) -> Result<Evaluation, CostError> {
    if c.total() == 0 {
        return Err(CostError::NoLabeledPixels);
    }
    Ok(Evaluation {
        accuracy: c.correct() as f64 / c.total() as f64,
        confusion: c,
    })
}

/// Pixel accuracy over labeled pixels.
pub fn evaluate_accuracy(pred: &TraversableMask, gt: &GroundTruthMask) -> Result<Evaluation, CostError> {
    finish(confusion(pred, gt)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep {
    pub best_threshold: f64,
    pub best: Evaluation,
    /// `(threshold, evaluation)` for every candidate, in candidate order.
    pub curve: Vec<(f64, Evaluation)>,
}

/// Picks the candidate with the highest accuracy pooled over all labeled
/// pixels of all images. Ties go to the smaller threshold.
pub fn tune_threshold(
    costs: &[CostMap],
    gts: &[GroundTruthMask],
    candidates: &[f64],
) -> Result<ThresholdSweep, CostError> {
    if candidates.is_empty() {
        return Err(CostError::EmptyCandidates);
    }
    if costs.is_empty() || costs.len() != gts.len() {
        return Err(CostError::Unpaired {
            costs: costs.len(),
            gts: gts.len(),
        });
    }
    let mut curve = Vec::with_capacity(candidates.len());
    for &t in candidates {
        let mut pooled = Confusion::default();
        for (cost, gt) in costs.iter().zip(gts) {
            pooled.add(&confusion(&traversable_mask(cost, t)?, gt)?);
        }
        curve.push((t, finish(pooled)?));
    }
    let (best_threshold, best) = curve
        .iter()
        .copied()
        .reduce(|a, b| {
            let better = b.1.accuracy > a.1.accuracy || (b.1.accuracy == a.1.accuracy && b.0 < a.0);
            if better {
                b
            } else {
                a
            }
        })
        .expect("non-empty");
    Ok(ThresholdSweep {
        best_threshold,
        best,
        curve,
    })
}
