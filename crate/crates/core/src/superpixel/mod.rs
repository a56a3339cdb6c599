//! Superpixel segmentation and segment-mask utilities.

mod lab;
mod slic;

pub use lab::{rgb_to_lab, srgb_pixel_to_lab};
pub use slic::{slic_segment, slic_with_trace, SlicParams, SlicTrace};

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::geometry::PixelCoord;
use crate::raster::{self, PngPixels, RasterError};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("invalid SLIC parameters: {0}")]
    InvalidParams(String),
    #[error("image of {pixels} pixels is smaller than one cluster cell for {requested} superpixels")]
    ImageTooSmall { pixels: usize, requested: usize },
    #[error("invalid mask dimensions: {0}")]
    Dimensions(String),
    #[error("segment id {0} does not fit the 16-bit mask format")]
    IdOverflow(u32),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Per-pixel segment ids, row-major.
///
/// `num_segments` is the size of the id space. Masks produced by SLIC use
/// every id in `[0, num_segments)`; a downscaled mask keeps its parent's id
/// space and may be missing some ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMask {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    num_segments: usize,
}

impl SegmentMask {
    /// Wraps raw labels; the id space is `max(label) + 1`.
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self, SegmentError> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(SegmentError::Dimensions(format!(
                "{width}x{height} with {} labels",
                labels.len()
            )));
        }
        let num_segments = labels.iter().max().map_or(0, |&m| m as usize + 1);
        Ok(Self {
            width,
            height,
            labels,
            num_segments,
        })
    }

    pub(crate) fn with_id_space(mut self, num_segments: usize) -> Self {
        debug_assert!(self.num_segments <= num_segments);
        self.num_segments = num_segments;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn distinct_ids(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().collect()
    }

    /// Pixel count per id, indexed by id.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.num_segments];
        for &l in &self.labels {
            areas[l as usize] += 1;
        }
        areas
    }

    /// Reads a 16-bit (or 8-bit) grayscale PNG, or a binary PGM.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, SegmentError> {
        let path = path.as_ref();
        if has_extension(path, "pgm") {
            let (w, h, data) = raster::read_pgm(path)?;
            return Self::new(w, h, data.into_iter().map(u32::from).collect());
        }
        let png = raster::read_png(path)?;
        let labels = match png.pixels {
            PngPixels::Gray16(d) => d.into_iter().map(u32::from).collect(),
            PngPixels::Gray8(d) => d.into_iter().map(u32::from).collect(),
            _ => {
                return Err(RasterError::Unsupported("mask must be grayscale".into()).into());
            }
        };
        Self::new(png.width, png.height, labels)
    }

    /// Writes a 16-bit grayscale PNG, or a PGM when the extension is `.pgm`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), SegmentError> {
        let path = path.as_ref();
        let data = self
            .labels
            .iter()
            .map(|&l| u16::try_from(l).map_err(|_| SegmentError::IdOverflow(l)))
            .collect::<Result<Vec<_>, _>>()?;
        if has_extension(path, "pgm") {
            raster::write_pgm16(path, self.width, self.height, &data)?;
        } else {
            raster::write_png_gray16(path, self.width, self.height, &data)?;
        }
        Ok(())
    }
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Source index sampled by nearest-neighbor resizing from `src` to `dst`
/// samples: the floor of the scaled target-pixel center.
pub fn nearest_source_index(dst_index: usize, src_len: usize, dst_len: usize) -> usize {
    let idx = ((2 * dst_index + 1) * src_len) / (2 * dst_len);
    idx.min(src_len - 1)
}

/// Nearest-neighbor downscale of a segment mask. Ids are carried over
/// unchanged, so the output id set is a subset of the input's.
pub fn downscale_mask(
    mask: &SegmentMask,
    target_h: usize,
    target_w: usize,
) -> Result<SegmentMask, SegmentError> {
    if target_h == 0 || target_w == 0 {
        return Err(SegmentError::Dimensions("target dimensions must be positive".into()));
    }
    if target_h > mask.height || target_w > mask.width {
        return Err(SegmentError::Dimensions(format!(
            "cannot downscale {}x{} to larger {}x{}",
            mask.height, mask.width, target_h, target_w
        )));
    }
    let cols: Vec<usize> = (0..target_w)
        .map(|c| nearest_source_index(c, mask.width, target_w))
        .collect();
    let mut labels = Vec::with_capacity(target_h * target_w);
    for r in 0..target_h {
        let sr = nearest_source_index(r, mask.height, target_h);
        labels.extend(cols.iter().map(|&sc| mask.get(sr, sc)));
    }
    Ok(SegmentMask::new(target_w, target_h, labels)?.with_id_space(mask.num_segments))
}

/// Ids of segments containing at least one path pixel. Pixels outside the
/// mask are ignored.
pub fn traversed_segment_ids(mask: &SegmentMask, path_pixels: &[PixelCoord]) -> BTreeSet<u32> {
    path_pixels
        .iter()
        .filter_map(|px| {
            let (r, c) = px.pixel_index();
            let inside = r >= 0 && c >= 0 && (r as usize) < mask.height && (c as usize) < mask.width;
            inside.then(|| mask.get(r as usize, c as usize))
        })
        .collect()
}
