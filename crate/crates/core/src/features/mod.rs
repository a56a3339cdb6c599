//! Dense feature grids and per-segment mean pooling.

mod grid;

pub use grid::{read_feature_grid, write_feature_grid, FeatureGrid, GRID_MAGIC, GRID_VERSION};

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::geometry::PixelCoord;
use crate::superpixel::{downscale_mask, traversed_segment_ids, SegmentError, SegmentMask};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("bad magic bytes (not a feature grid file)")]
    BadMagic,
    #[error("unsupported grid format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated grid file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes after grid payload")]
    TrailingBytes(usize),
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f32>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

impl From<Vec<f32>> for FeatureVector {
    fn from(v: Vec<f32>) -> Self {
        Self(v)
    }
}

fn check_dims(grid: &FeatureGrid, mask: &SegmentMask) -> Result<(), FeatureError> {
    if grid.height() != mask.height() || grid.width() != mask.width() {
        return Err(FeatureError::Dimensions(format!(
            "mask is {}x{} but grid is {}x{}",
            mask.height(),
            mask.width(),
            grid.height(),
            grid.width()
        )));
    }
    Ok(())
}

/// Scatter-reduce: per-segment sums and pixel counts in one raster pass.
/// `slot_of` maps a segment id to an accumulator slot.
fn scatter_sums(
    grid: &FeatureGrid,
    mask: &SegmentMask,
    slots: usize,
    slot_of: impl Fn(u32) -> Option<usize>,
) -> (Vec<f64>, Vec<usize>) {
    let dim = grid.dim();
    let mut sums = vec![0.0f64; slots * dim];
    let mut counts = vec![0usize; slots];
    for (cell, &id) in grid.cells().zip(mask.labels()) {
        if let Some(slot) = slot_of(id) {
            counts[slot] += 1;
            let acc = &mut sums[slot * dim..(slot + 1) * dim];
            for (a, &v) in acc.iter_mut().zip(cell) {
                *a += v as f64;
            }
        }
    }
    (sums, counts)
}

fn finish_mean(sums: &[f64], count: usize) -> FeatureVector {
    let inv = 1.0 / count as f64;
    FeatureVector(sums.iter().map(|s| (s * inv) as f32).collect())
}

/// Mean embedding of every requested segment that has at least one pixel in
/// `mask`. `mask` must have the grid's spatial resolution.
pub fn segment_mean_features(
    grid: &FeatureGrid,
    mask: &SegmentMask,
    ids: &BTreeSet<u32>,
) -> Result<BTreeMap<u32, FeatureVector>, FeatureError> {
    check_dims(grid, mask)?;
    let ordered: Vec<u32> = ids.iter().copied().collect();
    let slot_of = |id: u32| ordered.binary_search(&id).ok();
    let (sums, counts) = scatter_sums(grid, mask, ordered.len(), slot_of);
    let dim = grid.dim();
    Ok(ordered
        .iter()
        .enumerate()
        .filter(|&(slot, _)| counts[slot] > 0)
        .map(|(slot, &id)| (id, finish_mean(&sums[slot * dim..(slot + 1) * dim], counts[slot])))
        .collect())
}

/// Mean embedding of every segment id in the mask's id space; `None` for ids
/// without pixels.
pub fn all_segment_means(
    grid: &FeatureGrid,
    mask: &SegmentMask,
) -> Result<Vec<Option<FeatureVector>>, FeatureError> {
    check_dims(grid, mask)?;
    let n = mask.num_segments();
    let (sums, counts) = scatter_sums(grid, mask, n, |id| Some(id as usize));
    let dim = grid.dim();
    Ok((0..n)
        .map(|s| (counts[s] > 0).then(|| finish_mean(&sums[s * dim..(s + 1) * dim], counts[s])))
        .collect())
}

/// Training vectors extracted from one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathFeatures {
    /// `(segment id, mean embedding)` sorted by id.
    pub vectors: Vec<(u32, FeatureVector)>,
    /// Segments touched by the path at full resolution.
    pub traversed: usize,
    /// Traversed segments with no pixel left after downscaling.
    pub dropped: usize,
}

/// Selects the segments under the projected path in the full-resolution
/// mask, maps the mask down to the grid, and pools one mean vector per
/// traversed segment.
pub fn masked_path_features(
    grid: &FeatureGrid,
    full_mask: &SegmentMask,
    path_pixels: &[PixelCoord],
) -> Result<PathFeatures, FeatureError> {
    let ids = traversed_segment_ids(full_mask, path_pixels);
    if ids.is_empty() {
        return Ok(PathFeatures::default());
    }
    let small = downscale_mask(full_mask, grid.height(), grid.width())?;
    let means = segment_mean_features(grid, &small, &ids)?;
    Ok(PathFeatures {
        traversed: ids.len(),
        dropped: ids.len() - means.len(),
        vectors: means.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_2x2x3() -> FeatureGrid {
        #[rustfmt::skip]
        let data = vec![
            1.0, 2.0, 3.0,   9.0, 9.0, 9.0,
            7.0, 7.0, 7.0,   3.0, 2.0, 1.0,
        ];
        FeatureGrid::new(2, 2, 3, data).unwrap()
    }

    #[test]
    fn hand_means() {
        let mask = SegmentMask::new(2, 2, vec![0, 1, 2, 0]).unwrap();
        let ids = BTreeSet::from([0, 1, 5]);
        let means = segment_mean_features(&grid_2x2x3(), &mask, &ids).unwrap();
        assert_eq!(means.len(), 2, "id 5 has no pixels and is omitted");
        assert_eq!(means[&0].0, vec![2.0, 2.0, 2.0]);
        assert_eq!(means[&1].0, vec![9.0, 9.0, 9.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let mask = SegmentMask::new(3, 2, vec![0; 6]).unwrap();
        assert!(matches!(
            segment_mean_features(&grid_2x2x3(), &mask, &BTreeSet::from([0])),
            Err(FeatureError::Dimensions(_))
        ));
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (FeatureGrid, SegmentMask) {
        let (h, w, d) = (rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..10));
        let k = rng.random_range(1..8u32);
        let data = (0..h * w * d).map(|_| rng.random_range(-5.0f32..5.0)).collect();
        let labels = (0..h * w).map(|_| rng.random_range(0..k)).collect();
        (FeatureGrid::new(h, w, d, data).unwrap(), SegmentMask::new(w, h, labels).unwrap())
    }

    #[test]
    fn mean_bounds_and_global_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (g, m) = random_case(&mut rng);
            let means = all_segment_means(&g, &m).unwrap();
            let areas = m.areas();
            for (id, mean) in means.iter().enumerate() {
                let Some(mean) = mean else { continue };
                for (k, &v) in mean.0.iter().enumerate() {
                    let vals = g
                        .cells()
                        .zip(m.labels())
                        .filter(|(_, &l)| l as usize == id)
                        .map(|(c, _)| c[k]);
                    let (lo, hi) = vals.fold((f32::MAX, f32::MIN), |(a, b), x| (a.min(x), b.max(x)));
                    assert!(v >= lo && v <= hi);
                }
            }
            // count-weighted means reconstruct the global mean
            for k in 0..g.dim() {
                let global: f64 = g.cells().map(|c| c[k] as f64).sum::<f64>() / (g.height() * g.width()) as f64;
                let weighted: f64 = means
                    .iter()
                    .zip(&areas)
                    .filter_map(|(m, &a)| m.as_ref().map(|m| m.0[k] as f64 * a as f64))
                    .sum::<f64>()
                    / (g.height() * g.width()) as f64;
                assert!((global - weighted).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (g, m) = random_case(&mut rng);
        let (h, w, d) = (g.height(), g.width(), g.dim());
        // Reverse the pixel order of both grid and mask.
        let rev_cells: Vec<f32> = g.cells().rev().flatten().copied().collect();
        let rev_labels: Vec<u32> = m.labels().iter().rev().copied().collect();
        let g2 = FeatureGrid::new(h, w, d, rev_cells).unwrap();
        let m2 = SegmentMask::new(w, h, rev_labels).unwrap();
        let a = all_segment_means(&g, &m).unwrap();
        let b = all_segment_means(&g2, &m2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            match (x, y) {
                (Some(x), Some(y)) => {
                    assert!(x.0.iter().zip(&y.0).all(|(p, q)| (p - q).abs() <= 1e-6))
                }
                (None, None) => {}
                _ => panic!("presence differs"),
            }
        }
    }

    #[test]
    fn path_features_empty_and_single() {
        let grid = FeatureGrid::new(2, 2, 3, grid_2x2x3().into_data()).unwrap();
        let full = SegmentMask::new(4, 4, (0..16).map(|i| ((i / 4) / 2 * 2 + (i % 4) / 2) as u32).collect())
            .unwrap();
        assert!(masked_path_features(&grid, &full, &[]).unwrap().vectors.is_empty());
        let out = masked_path_features(&grid, &full, &[PixelCoord::new(3.5, 0.5)]).unwrap();
        assert_eq!(out.vectors.len(), 1);
        let small = downscale_mask(&full, 2, 2).unwrap();
        let direct = segment_mean_features(&grid, &small, &BTreeSet::from([1])).unwrap();
        assert_eq!(out.vectors[0], (1, direct[&1].clone()));
    }

    #[test]
    fn sliver_segment_is_dropped() {
        // 8x8 image, 2x2 grid. Id 0 fills the left half, id 1 the right half
        // except a one-pixel-wide sliver (id 2) in column 0 of the bottom
        // rows, which the downscale never samples (it reads columns 2 and 6).
        let mut labels = vec![0u32; 64];
        for r in 0..8 {
            for c in 4..8 {
                labels[r * 8 + c] = 1;
            }
        }
        for r in 4..8 {
            labels[r * 8] = 2;
        }
        let full = SegmentMask::new(8, 8, labels).unwrap();
        let grid = grid_2x2x3();
        let path = [PixelCoord::new(0.5, 6.0), PixelCoord::new(1.5, 6.0), PixelCoord::new(6.5, 7.0)];
        let out = masked_path_features(&grid, &full, &path).unwrap();
        assert_eq!(out.traversed, 3);
        assert_eq!(out.dropped, 1);
        assert_eq!(out.vectors.iter().map(|v| v.0).collect::<Vec<_>>(), vec![0, 1]);
    }
}
