//! Depth unprojection and cost-annotated point clouds.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::costmap::CostMap;
use crate::features::{FeatureError, FeatureGrid};
use crate::geometry::{CameraIntrinsics, PixelCoord};
use crate::raster::{self, PngPixels, RasterError};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("depth must be positive and finite, got {0}")]
    InvalidDepth(f64),
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("PLY line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Depth along the optical axis in meters. Non-positive or non-finite
/// values mark invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self, CloudError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(CloudError::Dimensions(format!(
                "{width}x{height} depth image with {} values",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn is_valid(d: f32) -> bool {
        d.is_finite() && d > 0.0
    }

    /// Float grid file with `dim = 1` (invalid pixels stored as 0), or a
    /// 16-bit PNG in millimeters (by extension).
    pub fn read(path: impl AsRef<Path>) -> Result<Self, CloudError> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            let png = raster::read_png(path)?;
            let PngPixels::Gray16(mm) = png.pixels else {
                return Err(RasterError::Unsupported("depth PNG must be 16-bit grayscale".into()).into());
            };
            return Self::new(png.width, png.height, mm.iter().map(|&v| v as f32 / 1000.0).collect());
        }
        let grid = FeatureGrid::read(path)?;
        if grid.dim() != 1 {
            return Err(CloudError::Dimensions(format!("depth file has dim {}", grid.dim())));
        }
        Self::new(grid.width(), grid.height(), grid.into_data())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CloudError> {
        let path = path.as_ref();
        let clean: Vec<f32> = self
            .values
            .iter()
            .map(|&d| if Self::is_valid(d) { d } else { 0.0 })
            .collect();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            let mm: Vec<u16> = clean.iter().map(|d| (d * 1000.0).round().min(65535.0) as u16).collect();
            raster::write_png_gray16(path, self.width, self.height, &mm)?;
            return Ok(());
        }
        FeatureGrid::new(self.height, self.width, 1, clean)?.write(path)?;
        Ok(())
    }
}

/// Inverse pinhole projection of a pixel at the given depth.
pub fn unproject(px: &PixelCoord, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>, CloudError> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(CloudError::InvalidDepth(depth));
    }
    Ok(Vector3::new(
        (px.u - k.cx) * depth / k.fx,
        (px.v - k.cy) * depth / k.fy,
        depth,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub cost: f32,
}

impl CloudPoint {
    pub fn range(&self) -> f64 {
        let (x, y, z) = (self.x as f64, self.y as f64, self.z as f64);
        (x * x + y * y + z * z).sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostCloud {
    pub points: Vec<CloudPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudOptions {
    /// Points nearer than this to the camera are dropped.
    pub min_range: f64,
    /// Optional `cost * scale + offset` applied to the cost channel.
    pub remap: Option<(f32, f32)>,
}

impl Default for CloudOptions {
    fn default() -> Self {
        Self {
            min_range: crate::defaults::MIN_RANGE,
            remap: None,
        }
    }
}

/// One point per valid-depth pixel at range `>= min_range`, in row-major
/// pixel order. The cost map must already match the depth resolution.
/// Pixels are sampled at their integer coordinates.
pub fn build_cost_cloud(
    cost: &CostMap,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    options: &CloudOptions,
) -> Result<CostCloud, CloudError> {
    if cost.width() != depth.width || cost.height() != depth.height {
        return Err(CloudError::Dimensions(format!(
            "cost {}x{} vs depth {}x{}",
            cost.width(),
            cost.height(),
            depth.width,
            depth.height
        )));
    }
    let w = depth.width;
    let points = depth
        .values
        .par_chunks(w)
        .enumerate()
        .flat_map_iter(|(row, depths)| {
            depths.iter().enumerate().filter_map(move |(col, &d)| {
                if !DepthImage::is_valid(d) {
                    return None;
                }
                let p = unproject(&PixelCoord::new(col as f64, row as f64), d as f64, k).ok()?;
                if p.norm() < options.min_range {
                    return None;
                }
                let c = cost.get(row, col);
                let c = options.remap.map_or(c, |(s, o)| c * s + o);
                let point = CloudPoint {
                    x: p.x as f32,
                    y: p.y as f32,
                    z: p.z as f32,
                    cost: c,
                };
                // f32 rounding must not sneak a point under the range limit
                (point.range() >= options.min_range).then_some(point)
            })
        })
        .collect();
    Ok(CostCloud { points })
}

/// Writes ASCII PLY with float `x y z cost` vertices.
pub fn write_cloud(cloud: &CostCloud, path: impl AsRef<Path>) -> Result<(), CloudError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty float cost\nend_header\n",
        cloud.points.len()
    )?;
    for p in &cloud.points {
        writeln!(w, "{:.6e} {:.6e} {:.6e} {:.6e}", p.x, p.y, p.z, p.cost)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a cloud written by [`write_cloud`].
pub fn read_cloud(path: impl AsRef<Path>) -> Result<CostCloud, CloudError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let mut next = |expect: &str| -> Result<(usize, String), CloudError> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(CloudError::Parse {
                line: 0,
                msg: format!("unexpected end of file, wanted {expect}"),
            }),
        }
    };
    let perr = |line: usize, msg: String| CloudError::Parse { line, msg };

    let (i, magic) = next("magic")?;
    if magic.trim() != "ply" {
        return Err(perr(i, "missing 'ply' magic".into()));
    }
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let (i, line) = next("end_header")?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] | ["comment", ..] => {}
            ["format", ..] => return Err(perr(i, "only ascii PLY is supported".into())),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| perr(i, e.to_string()))?);
            }
            ["property", "float", name] => props.push(name.to_string()),
            ["end_header"] => break,
            _ => return Err(perr(i, format!("unexpected header line {line:?}"))),
        }
    }
    if props != ["x", "y", "z", "cost"] {
        return Err(perr(0, format!("unexpected vertex properties {props:?}")));
    }
    let count = count.ok_or_else(|| perr(0, "missing vertex element".into()))?;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let (i, line) = next("vertex")?;
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| perr(i, e.to_string()))?;
        let [x, y, z, cost] = vals[..] else {
            return Err(perr(i, format!("expected 4 values, got {}", vals.len())));
        };
        points.push(CloudPoint { x, y, z, cost });
    }
    Ok(CostCloud { points })
}
