use std::path::Path;

use nalgebra::Vector3;

use super::{PipelineError, Result};
use crate::autoencoder::{Optimizer, TrainConfig};
use crate::config::KeyValues;
use crate::defaults;
use crate::geometry::{Pose, RigConfig};
use crate::superpixel::SlicParams;

/// Every tunable of the pipeline. Built from defaults, then a config file,
/// then command-line overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Single source of randomness for every stage.
    pub seed: u64,
    /// Worker thread cap; `None` uses all cores.
    pub threads: Option<usize>,
    pub horizon: usize,
    /// Overrides the dataset rig height when set.
    pub height: Option<f64>,
    pub min_forward_depth: f64,
    pub association_tolerance: f64,
    pub slic: SlicParams,
    pub train: TrainConfig,
    pub cap: f64,
    pub threshold: f64,
    pub min_range: f64,
    /// Optional `(scale, offset)` applied to cloud costs.
    pub remap: Option<(f32, f32)>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            horizon: defaults::HORIZON_POSES,
            height: None,
            min_forward_depth: defaults::MIN_FORWARD_DEPTH,
            association_tolerance: defaults::ASSOCIATION_TOLERANCE,
            slic: SlicParams::default(),
            train: TrainConfig::default(),
            cap: defaults::LOSS_CAP,
            threshold: defaults::THRESHOLD,
            min_range: defaults::MIN_RANGE,
            remap: None,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "threads",
    "horizon",
    "height",
    "min_forward_depth",
    "association_tolerance",
    "superpixels",
    "compactness",
    "slic_iterations",
    "learning_rate",
    "epochs",
    "batch_size",
    "optimizer",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "validation_fraction",
    "standardize",
    "cap",
    "threshold",
    "min_range",
    "remap",
];

impl PipelineConfig {
    /// Defaults overridden by the keys present in `kv`.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.check_known(CONFIG_KEYS)?;
        let d = Self::default();
        let mut c = Self {
            seed: kv.get_or("seed", d.seed)?,
            threads: kv.get("threads")?,
            horizon: kv.get_or("horizon", d.horizon)?,
            height: kv.get("height")?,
            min_forward_depth: kv.get_or("min_forward_depth", d.min_forward_depth)?,
            association_tolerance: kv.get_or("association_tolerance", d.association_tolerance)?,
            cap: kv.get_or("cap", d.cap)?,
            threshold: kv.get_or("threshold", d.threshold)?,
            min_range: kv.get_or("min_range", d.min_range)?,
            ..d
        };
        c.slic.num_superpixels = kv.get_or("superpixels", c.slic.num_superpixels)?;
        c.slic.compactness = kv.get_or("compactness", c.slic.compactness)?;
        c.slic.max_iterations = kv.get_or("slic_iterations", c.slic.max_iterations)?;
        let t = &mut c.train;
        t.learning_rate = kv.get_or("learning_rate", t.learning_rate)?;
        t.epochs = kv.get_or("epochs", t.epochs)?;
        t.batch_size = kv.get_or("batch_size", t.batch_size)?;
        t.validation_fraction = kv.get_or("validation_fraction", t.validation_fraction)?;
        t.standardize = kv.get_or("standardize", t.standardize)?;
        match kv.raw("optimizer") {
            None | Some("adam") => {
                t.optimizer = Optimizer::Adam {
                    beta1: kv.get_or("adam_beta1", defaults::ADAM_BETA1)?,
                    beta2: kv.get_or("adam_beta2", defaults::ADAM_BETA2)?,
                    epsilon: kv.get_or("adam_epsilon", defaults::ADAM_EPSILON)?,
                }
            }
            Some("sgd") => t.optimizer = Optimizer::Sgd,
            Some(other) => return Err(PipelineError::Invalid(format!("unknown optimizer {other:?}"))),
        }
        if let Some(v) = kv.list::<f32>("remap")? {
            match v[..] {
                [scale, offset] => c.remap = Some((scale, offset)),
                _ => return Err(PipelineError::Invalid("remap must be `scale, offset`".into())),
            }
        }
        c.set_seed(c.seed);
        Ok(c)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.slic.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::Invalid(m.into()));
        if self.horizon < 1 {
            return bad("horizon must be >= 1");
        }
        if self.height.is_some_and(|h| !(h > 0.0)) {
            return bad("height must be > 0");
        }
        if !(self.min_forward_depth > 0.0) {
            return bad("min_forward_depth must be > 0");
        }
        if !(self.association_tolerance >= 0.0) {
            return bad("association_tolerance must be >= 0");
        }
        if !(self.cap > 0.0 && self.cap.is_finite()) {
            return bad("cap must be > 0");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        if !(self.min_range >= 0.0 && self.min_range.is_finite()) {
            return bad("min_range must be >= 0");
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1");
        }
        self.slic.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// The dataset's rig with this configuration's overrides applied.
    pub fn rig(&self, base: &RigConfig) -> RigConfig {
        RigConfig {
            height_above_ground: self.height.unwrap_or(base.height_above_ground),
            horizon_poses: self.horizon,
            min_forward_depth: self.min_forward_depth,
            camera_in_body: base.camera_in_body,
        }
    }
}

/// Rig file keys: `height`, `horizon`, `min_forward_depth`, and
/// `camera_in_body = tx ty tz qx qy qz qw`.
pub fn read_rig(path: &Path) -> Result<RigConfig> {
    let kv = KeyValues::read(path)?;
    kv.check_known(&["height", "horizon", "min_forward_depth", "camera_in_body"])?;
    let d = RigConfig::default();
    let camera_in_body = match kv.raw("camera_in_body") {
        None => d.camera_in_body,
        Some(text) => {
            let v: Vec<f64> = text
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| PipelineError::Invalid(format!("camera_in_body: cannot parse {text:?}")))?;
            let [tx, ty, tz, qx, qy, qz, qw] = v[..] else {
                return Err(PipelineError::Invalid("camera_in_body needs `tx ty tz qx qy qz qw`".into()));
            };
            Pose::from_quaternion(0.0, Vector3::new(tx, ty, tz), [qx, qy, qz, qw])?
        }
    };
    let rig = RigConfig {
        height_above_ground: kv.get_or("height", d.height_above_ground)?,
        horizon_poses: kv.get_or("horizon", d.horizon_poses)?,
        min_forward_depth: kv.get_or("min_forward_depth", d.min_forward_depth)?,
        camera_in_body,
    };
    rig.validate()?;
    Ok(rig)
}

pub fn write_rig(path: &Path, rig: &RigConfig) -> Result<()> {
    let t = rig.camera_in_body.translation();
    let q = rig.camera_in_body.quaternion();
    let text = format!(
        "height = {:?}\nhorizon = {}\nmin_forward_depth = {:?}\ncamera_in_body = {:?} {:?} {:?} {:?} {:?} {:?} {:?}\n",
        rig.height_above_ground, rig.horizon_poses, rig.min_forward_depth, t.x, t.y, t.z, q.i, q.j, q.k, q.w
    );
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}
