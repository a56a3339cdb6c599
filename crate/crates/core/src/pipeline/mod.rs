//! Directory-level pipeline stages over the shared file formats.
//!
//! A dataset directory holds the inputs of a recording; a work directory
//! collects everything derived from it:
//!
//! ```text
//! dataset/                       work/
//!   trajectory.txt  TUM poses      paths/<frame>.txt       projected path pixels
//!   intrinsics.txt                 masks/<frame>.png       full-resolution segments
//!   rig.txt         optional       masks_small/<frame>.png segments at grid size
//!   frames.txt      `ts name`      vectors.bin             training vectors
//!   images/<frame>.png             model.bin, loss.csv
//!   features/<frame>.bin           costs/<frame>.<mode>.bin|png
//!   depth/<frame>.bin  optional    report.csv
//!   gt/<frame>.png     optional    clouds/<frame>.ply
//! ```

mod config;
mod stages;

pub use config::{read_rig, write_rig, PipelineConfig};
pub use stages::{
    evaluate, export_cloud, extract, infer, load_work_model, project, read_path_pixels, read_report, read_vectors, segment, synth, train_model,
    write_path_pixels, write_report, write_vectors, EvaluateSummary, ExtractSummary, InferSummary, ProjectSummary,
    SegmentSummary, SynthSummary,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autoencoder::ModelError;
use crate::cloud::CloudError;
use crate::config::ConfigError;
use crate::costmap::{CostError, Resolution};
use crate::features::FeatureError;
use crate::geometry::{self, CameraIntrinsics, GeometryError, Pose, RigConfig};
use crate::raster::RasterError;
use crate::superpixel::SegmentError;
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing input {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("frame list line {line}: {msg}")]
    FrameList { line: usize, msg: String },
    #[error("path pixel file {path} line {line}: {msg}")]
    PathFile { path: PathBuf, line: usize, msg: String },
    #[error("nothing to do: {0}")]
    Empty(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// `path` itself if it exists, a [`PipelineError::Missing`] otherwise.
pub fn require_file(path: &Path) -> Result<&Path> {
    require(path)
}

pub(crate) fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::Missing(path.to_path_buf()))
    }
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Creates the parent directory of `path` if needed.
pub fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// A camera frame: capture time and file stem.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub name: String,
}

pub fn parse_frames(text: &str) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| PipelineError::FrameList {
            line: i + 1,
            msg: msg.into(),
        };
        let mut parts = line.split_whitespace();
        let ts = parts
            .next()
            .and_then(|t| t.parse::<f64>().ok())
            .filter(|t| t.is_finite())
            .ok_or_else(|| err("expected a timestamp"))?;
        let name = parts.next().ok_or_else(|| err("expected a frame name"))?;
        if parts.next().is_some() {
            return Err(err("expected `timestamp name`"));
        }
        frames.push(Frame {
            timestamp: ts,
            name: name.to_string(),
        });
    }
    Ok(frames)
}

pub fn write_frames(path: &Path, frames: &[Frame]) -> Result<()> {
    let mut text = String::from("# timestamp name\n");
    for f in frames {
        text.push_str(&format!("{:.6} {}\n", f.timestamp, f.name));
    }
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// File locations inside a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn trajectory(&self) -> PathBuf {
        self.root.join("trajectory.txt")
    }
    pub fn intrinsics(&self) -> PathBuf {
        self.root.join("intrinsics.txt")
    }
    pub fn rig(&self) -> PathBuf {
        self.root.join("rig.txt")
    }
    pub fn frames(&self) -> PathBuf {
        self.root.join("frames.txt")
    }
    pub fn image(&self, name: &str) -> PathBuf {
        self.root.join("images").join(format!("{name}.png"))
    }
    pub fn features(&self, name: &str) -> PathBuf {
        self.root.join("features").join(format!("{name}.bin"))
    }
    pub fn depth(&self, name: &str) -> PathBuf {
        self.root.join("depth").join(format!("{name}.bin"))
    }
    pub fn ground_truth(&self, name: &str) -> PathBuf {
        self.root.join("gt").join(format!("{name}.png"))
    }
}

/// File locations inside a work directory.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkLayout {
    pub root: PathBuf,
}

impl WorkLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn path_pixels(&self, name: &str) -> PathBuf {
        self.root.join("paths").join(format!("{name}.txt"))
    }
    pub fn mask(&self, name: &str) -> PathBuf {
        self.root.join("masks").join(format!("{name}.png"))
    }
    pub fn small_mask(&self, name: &str) -> PathBuf {
        self.root.join("masks_small").join(format!("{name}.png"))
    }
    pub fn vectors(&self) -> PathBuf {
        self.root.join("vectors.bin")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.bin")
    }
    pub fn loss_history(&self) -> PathBuf {
        self.root.join("loss.csv")
    }
    pub fn cost(&self, name: &str, mode: Resolution) -> PathBuf {
        self.root.join("costs").join(format!("{name}.{}.bin", mode.name()))
    }
    pub fn cost_png(&self, name: &str, mode: Resolution) -> PathBuf {
        self.root.join("costs").join(format!("{name}.{}.png", mode.name()))
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.csv")
    }
    pub fn cloud(&self, name: &str) -> PathBuf {
        self.root.join("clouds").join(format!("{name}.ply"))
    }
}

/// Trajectory, intrinsics, rig and frame list of a dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub layout: DatasetLayout,
    pub trajectory: Vec<Pose>,
    pub intrinsics: CameraIntrinsics,
    /// From `rig.txt` when present, defaults otherwise.
    pub rig: RigConfig,
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let layout = DatasetLayout::new(root);
        let trajectory = geometry::read_tum(require(&layout.trajectory())?)?;
        let intrinsics = geometry::read_intrinsics(require(&layout.intrinsics())?)?;
        let rig = if layout.rig().exists() {
            read_rig(&layout.rig())?
        } else {
            RigConfig::default()
        };
        let frames_path = layout.frames();
        let text = std::fs::read_to_string(require(&frames_path)?).map_err(|source| PipelineError::Io {
            path: frames_path.clone(),
            source,
        })?;
        let frames = parse_frames(&text)?;
        Ok(Self {
            layout,
            trajectory,
            intrinsics,
            rig,
            frames,
        })
    }
}

/// Coarse failure classes, stable enough to map to process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// A required input file does not exist.
    Missing,
    /// Reading or writing failed.
    Io,
    /// An input file is malformed.
    Format,
    /// Inputs disagree on a size or dimension.
    Dimension,
    /// A parameter or input value violates its constraints.
    Invalid,
    /// Nothing to work on.
    Empty,
}

impl ErrorKind {
    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Missing => "missing",
            ErrorKind::Io => "io",
            ErrorKind::Format => "format",
            ErrorKind::Dimension => "dimension",
            ErrorKind::Invalid => "invalid",
            ErrorKind::Empty => "empty",
        }
    }
}

fn io_kind(e: &std::io::Error) -> ErrorKind {
    match e.kind() {
        std::io::ErrorKind::NotFound => ErrorKind::Missing,
        std::io::ErrorKind::InvalidData | std::io::ErrorKind::UnexpectedEof => ErrorKind::Format,
        _ => ErrorKind::Io,
    }
}

fn raster_kind(e: &RasterError) -> ErrorKind {
    match e {
        RasterError::Io(e) => io_kind(e),
        RasterError::Encode(_) => ErrorKind::Io,
        RasterError::Decode(_) | RasterError::Unsupported(_) | RasterError::Malformed(_) => ErrorKind::Format,
    }
}

fn segment_kind(e: &SegmentError) -> ErrorKind {
    match e {
        SegmentError::InvalidParams(_) | SegmentError::ImageTooSmall { .. } => ErrorKind::Invalid,
        SegmentError::Dimensions(_) => ErrorKind::Dimension,
        SegmentError::IdOverflow(_) => ErrorKind::Format,
        SegmentError::Raster(e) => raster_kind(e),
    }
}

fn feature_kind(e: &FeatureError) -> ErrorKind {
    match e {
        FeatureError::Dimensions(_) => ErrorKind::Dimension,
        FeatureError::Segment(e) => segment_kind(e),
        FeatureError::Io(e) => io_kind(e),
        _ => ErrorKind::Format,
    }
}

fn model_kind(e: &ModelError) -> ErrorKind {
    match e {
        ModelError::Dimension { .. } | ModelError::Shape(_) => ErrorKind::Dimension,
        ModelError::EmptyDataset => ErrorKind::Empty,
        ModelError::InvalidConfig(_) | ModelError::NonFiniteLoss { .. } => ErrorKind::Invalid,
        ModelError::Io(e) => io_kind(e),
        _ => ErrorKind::Format,
    }
}

fn geometry_kind(e: &GeometryError) -> ErrorKind {
    match e {
        GeometryError::Parse { .. } => ErrorKind::Format,
        GeometryError::Io(e) => io_kind(e),
        _ => ErrorKind::Invalid,
    }
}

fn config_kind(e: &ConfigError) -> ErrorKind {
    match e {
        ConfigError::Io(e) => io_kind(e),
        _ => ErrorKind::Invalid,
    }
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PipelineError::Missing(_) => ErrorKind::Missing,
            PipelineError::Io { source, .. } => io_kind(source),
            PipelineError::FrameList { .. } | PipelineError::PathFile { .. } => ErrorKind::Format,
            PipelineError::Empty(_) => ErrorKind::Empty,
            PipelineError::Invalid(_) => ErrorKind::Invalid,
            PipelineError::Config(e) => config_kind(e),
            PipelineError::Geometry(e) => geometry_kind(e),
            PipelineError::Segment(e) => segment_kind(e),
            PipelineError::Feature(e) => feature_kind(e),
            PipelineError::Model(e) => model_kind(e),
            PipelineError::Raster(e) => raster_kind(e),
            PipelineError::Cost(e) => match e {
                CostError::Dimensions(_) | CostError::Unpaired { .. } => ErrorKind::Dimension,
                CostError::NoLabeledPixels | CostError::EmptyCandidates => ErrorKind::Empty,
                CostError::InvalidValue(_) | CostError::InvalidLabel(_) => ErrorKind::Format,
                CostError::Model(e) => model_kind(e),
                CostError::Feature(e) => feature_kind(e),
                CostError::Raster(e) => raster_kind(e),
                _ => ErrorKind::Invalid,
            },
            PipelineError::Cloud(e) => match e {
                CloudError::InvalidDepth(_) => ErrorKind::Invalid,
                CloudError::Dimensions(_) => ErrorKind::Dimension,
                CloudError::Parse { .. } => ErrorKind::Format,
                CloudError::Io(e) => io_kind(e),
                CloudError::Feature(e) => feature_kind(e),
                CloudError::Raster(e) => raster_kind(e),
            },
            PipelineError::Synth(e) => match e {
                SynthError::Config(e) => config_kind(e),
                SynthError::Geometry(e) => geometry_kind(e),
                SynthError::Feature(e) => feature_kind(e),
                SynthError::Io(e) => io_kind(e),
                _ => ErrorKind::Invalid,
            },
        }
    }
}
