//! Synthetic walks over procedural terrain: poses, rendered class and depth
//! images, ground truth, and class-conditioned feature grids.

mod render;
mod scene;
mod spline;

pub use render::{render_view, render_views, RenderedView};
pub use scene::{FeatureParams, Scene};
pub use spline::{walk_spline, SplinePath};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::ConfigError;
use crate::features::{FeatureError, FeatureGrid};
use crate::geometry::{GeometryError, Pose};
use crate::superpixel::nearest_source_index;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid heightfield: {0}")]
    Field(String),
    #[error("invalid class table: {0}")]
    Classes(String),
    #[error("invalid spline: {0}")]
    Spline(String),
    #[error("spline leaves the field at ({x:.3}, {y:.3})")]
    OutsideField { x: f64, y: f64 },
    #[error("class id {0} has no feature mean")]
    UnknownClass(u8),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassKind {
    Traversable,
    NonTraversable,
    /// Rays that miss the terrain.
    Sky,
}

impl ClassKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "traversable" => Some(ClassKind::Traversable),
            "obstacle" | "non-traversable" => Some(ClassKind::NonTraversable),
            "sky" => Some(ClassKind::Sky),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainClass {
    pub name: String,
    pub kind: ClassKind,
    pub color: [u8; 3],
}

/// Terrain classes indexed by id. Exactly one entry is [`ClassKind::Sky`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    classes: Vec<TerrainClass>,
    sky: u8,
}

impl ClassTable {
    pub fn new(classes: Vec<TerrainClass>) -> Result<Self, SynthError> {
        if classes.len() > u8::MAX as usize {
            return Err(SynthError::Classes("too many classes".into()));
        }
        let skies: Vec<usize> = (0..classes.len())
            .filter(|&i| classes[i].kind == ClassKind::Sky)
            .collect();
        if skies.len() != 1 {
            return Err(SynthError::Classes(format!("need exactly one sky class, found {}", skies.len())));
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].iter().any(|o| o.name == c.name) {
                return Err(SynthError::Classes(format!("duplicate class name {:?}", c.name)));
            }
        }
        Ok(Self {
            sky: skies[0] as u8,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn sky(&self) -> u8 {
        self.sky
    }

    pub fn get(&self, id: u8) -> Option<&TerrainClass> {
        self.classes.get(id as usize)
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.classes.iter().position(|c| c.name == name).map(|i| i as u8)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TerrainClass> {
        self.classes.iter()
    }
}

/// Elevations on a regular node lattice, bilinear inside each cell, plus one
/// class id per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    cells_x: usize,
    cells_y: usize,
    cell_size: f64,
    origin: [f64; 2],
    /// `(cells_y + 1) x (cells_x + 1)` node elevations, row-major in y.
    elevations: Vec<f64>,
    /// `cells_y x cells_x` class ids.
    classes: Vec<u8>,
    table: ClassTable,
    /// Lowest and highest node elevation.
    z_range: (f64, f64),
}

impl Heightfield {
    pub fn new(
        cells_x: usize,
        cells_y: usize,
        cell_size: f64,
        origin: [f64; 2],
        elevations: Vec<f64>,
        classes: Vec<u8>,
        table: ClassTable,
    ) -> Result<Self, SynthError> {
        if cells_x == 0 || cells_y == 0 || !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(SynthError::Field("cell counts and size must be positive".into()));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(SynthError::Field("origin must be finite".into()));
        }
        if elevations.len() != (cells_x + 1) * (cells_y + 1) {
            return Err(SynthError::Field(format!(
                "expected {} node elevations, got {}",
                (cells_x + 1) * (cells_y + 1),
                elevations.len()
            )));
        }
        if let Some(bad) = elevations.iter().find(|v| !v.is_finite()) {
            return Err(SynthError::Field(format!("non-finite elevation {bad}")));
        }
        if classes.len() != cells_x * cells_y {
            return Err(SynthError::Field(format!(
                "expected {} cell classes, got {}",
                cells_x * cells_y,
                classes.len()
            )));
        }
        if let Some(&bad) = classes
            .iter()
            .find(|&&c| c as usize >= table.len() || c == table.sky())
        {
            return Err(SynthError::Field(format!("cell class id {bad} is not a terrain class")));
        }
        let z_range = elevations
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Ok(Self {
            cells_x,
            cells_y,
            cell_size,
            origin,
            elevations,
            classes,
            table,
            z_range,
        })
    }

    /// Flat field of one class.
    pub fn flat(cells_x: usize, cells_y: usize, cell_size: f64, origin: [f64; 2], class: u8, table: ClassTable) -> Result<Self, SynthError> {
        Self::from_fn(cells_x, cells_y, cell_size, origin, |_, _| 0.0, |_, _| class, table)
    }

    /// Builds a field from a node elevation function `(x, y) -> z` and a
    /// cell class function evaluated at cell centers.
    pub fn from_fn(
        cells_x: usize,
        cells_y: usize,
        cell_size: f64,
        origin: [f64; 2],
        elevation: impl Fn(f64, f64) -> f64,
        class: impl Fn(f64, f64) -> u8,
        table: ClassTable,
    ) -> Result<Self, SynthError> {
        let mut elevations = Vec::with_capacity((cells_x + 1) * (cells_y + 1));
        for iy in 0..=cells_y {
            for ix in 0..=cells_x {
                elevations.push(elevation(origin[0] + ix as f64 * cell_size, origin[1] + iy as f64 * cell_size));
            }
        }
        let mut classes = Vec::with_capacity(cells_x * cells_y);
        for iy in 0..cells_y {
            for ix in 0..cells_x {
                classes.push(class(
                    origin[0] + (ix as f64 + 0.5) * cell_size,
                    origin[1] + (iy as f64 + 0.5) * cell_size,
                ));
            }
        }
        Self::new(cells_x, cells_y, cell_size, origin, elevations, classes, table)
    }

    pub fn cells(&self) -> (usize, usize) {
        (self.cells_x, self.cells_y)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn table(&self) -> &ClassTable {
        &self.table
    }

    /// `(min, max)` corners of the field in world XY.
    pub fn extent(&self) -> ([f64; 2], [f64; 2]) {
        (
            self.origin,
            [
                self.origin[0] + self.cells_x as f64 * self.cell_size,
                self.origin[1] + self.cells_y as f64 * self.cell_size,
            ],
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (lo, hi) = self.extent();
        x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1]
    }

    pub fn node(&self, ix: usize, iy: usize) -> f64 {
        self.elevations[iy * (self.cells_x + 1) + ix]
    }

    pub fn cell_class(&self, ix: usize, iy: usize) -> u8 {
        self.classes[iy * self.cells_x + ix]
    }

    pub fn elevation_range(&self) -> (f64, f64) {
        self.z_range
    }

    /// Cell containing `(x, y)` and the local coordinates inside it.
    fn locate(&self, x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
        if !self.contains(x, y) {
            return None;
        }
        let gx = (x - self.origin[0]) / self.cell_size;
        let gy = (y - self.origin[1]) / self.cell_size;
        let ix = (gx.floor() as usize).min(self.cells_x - 1);
        let iy = (gy.floor() as usize).min(self.cells_y - 1);
        Some((ix, iy, gx - ix as f64, gy - iy as f64))
    }

    /// Bilinear terrain elevation, `None` outside the field.
    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        let (ix, iy, fx, fy) = self.locate(x, y)?;
        let (h00, h10, h01, h11) = self.corners(ix, iy);
        Some(h00 * (1.0 - fx) * (1.0 - fy) + h10 * fx * (1.0 - fy) + h01 * (1.0 - fx) * fy + h11 * fx * fy)
    }

    pub fn class_at(&self, x: f64, y: f64) -> Option<u8> {
        let (ix, iy, _, _) = self.locate(x, y)?;
        Some(self.cell_class(ix, iy))
    }

    fn corners(&self, ix: usize, iy: usize) -> (f64, f64, f64, f64) {
        (
            self.node(ix, iy),
            self.node(ix + 1, iy),
            self.node(ix, iy + 1),
            self.node(ix + 1, iy + 1),
        )
    }
}

/// Camera mounted on the walker, pitched down by `pitch` radians about the
/// body's right axis.
pub fn pitched_camera(pitch: f64) -> Pose {
    let (s, c) = pitch.sin_cos();
    let rotation = Matrix3::from_columns(&[
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, c, -s),
        Vector3::new(0.0, s, c),
    ]);
    Pose::new(rotation, Vector3::zeros(), 0.0).expect("rotation about a principal axis")
}

/// Per-pixel class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassImage {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u8>,
}

impl ClassImage {
    /// Nearest-neighbor downscale with the same index mapping used for
    /// segment masks.
    pub fn downscale(&self, height: usize, width: usize) -> ClassImage {
        let cols: Vec<usize> = (0..width)
            .map(|c| nearest_source_index(c, self.width, width))
            .collect();
        let mut ids = Vec::with_capacity(width * height);
        for r in 0..height {
            let sr = nearest_source_index(r, self.height, height);
            ids.extend(cols.iter().map(|&sc| self.ids[sr * self.width + sc]));
        }
        ClassImage { width, height, ids }
    }
}

/// Gaussian stand-in for backbone embeddings: every class has a mean
/// vector and pixels scatter around it isotropically.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFeatureModel {
    means: Vec<Vec<f32>>,
    noise: f32,
}

impl ClassFeatureModel {
    pub fn new(means: Vec<Vec<f32>>, noise: f32) -> Result<Self, SynthError> {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(SynthError::Scene(format!("noise scale must be >= 0, got {noise}")));
        }
        let dim = means.first().map_or(0, Vec::len);
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(SynthError::Scene("class means must share a positive dimension".into()));
        }
        for i in 0..means.len() {
            if means[..i].contains(&means[i]) {
                return Err(SynthError::Scene(format!("class {i} repeats another class mean")));
            }
        }
        Ok(Self { means, noise })
    }

    /// Means drawn from `N(0, scale^2)` per dimension, redrawn until every
    /// pair of classes differs by at least `min_separation` in some
    /// dimension.
    pub fn random(classes: usize, dim: usize, scale: f32, noise: f32, min_separation: f32, seed: u64) -> Result<Self, SynthError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let means: Vec<Vec<f32>> = (0..classes)
                .map(|_| (0..dim).map(|_| scale * rng.sample::<f32, _>(StandardNormal)).collect())
                .collect();
            let model = Self::new(means, noise)?;
            if model.min_separation() >= min_separation {
                return Ok(model);
            }
        }
        Err(SynthError::Scene(format!(
            "could not draw class means separated by {min_separation}"
        )))
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn noise(&self) -> f32 {
        self.noise
    }

    pub fn mean(&self, class: u8) -> Option<&[f32]> {
        self.means.get(class as usize).map(Vec::as_slice)
    }

    /// Smallest L-infinity distance between two class means.
    pub fn min_separation(&self) -> f32 {
        let mut best = f32::INFINITY;
        for i in 0..self.means.len() {
            for j in 0..i {
                let d = self.means[i]
                    .iter()
                    .zip(&self.means[j])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f32, f32::max);
                best = best.min(d);
            }
        }
        best
    }
}

/// Feature grid with one vector per class-image pixel: the class mean plus
/// seeded Gaussian noise.
pub fn synth_features(image: &ClassImage, model: &ClassFeatureModel, seed: u64) -> Result<FeatureGrid, SynthError> {
    let dim = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(image.ids.len() * dim);
    for &id in &image.ids {
        let mean = model.mean(id).ok_or(SynthError::UnknownClass(id))?;
        data.extend(mean.iter().map(|&m| m + model.noise * rng.sample::<f32, _>(StandardNormal)));
    }
    Ok(FeatureGrid::new(image.height, image.width, dim, data)?)
}
