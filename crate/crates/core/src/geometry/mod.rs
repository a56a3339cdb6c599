//! Rigid poses, pinhole intrinsics and the future-path projection.
//!
//! Frame conventions: the world frame is gravity aligned with `+z` up. A
//! pose's rotation has the device axes as its columns, expressed in world
//! coordinates. The camera (device) frame is `x` right, `y` down, `z` forward.

mod io;

pub use io::{
    associate_frame, parse_intrinsics, parse_tum, read_intrinsics, read_tum, write_intrinsics,
    write_tum,
};

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::defaults;

/// Tolerance used when validating rotation matrices.
const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (max deviation {0:e})")]
    NonOrthonormal(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rig configuration: {0}")]
    InvalidRig(String),
    #[error("frame index {index} out of range for trajectory of {len} poses")]
    FrameOutOfRange { index: usize, len: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A rigid transform of the rig in the world frame, stamped in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    timestamp: f64,
}

impl Pose {
    /// Builds a pose, rejecting rotations that are not proper orthonormal
    /// matrices.
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        timestamp: f64,
    ) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        let dev = gram.amax().max((rotation.determinant() - 1.0).abs());
        if !dev.is_finite() || dev > ORTHONORMAL_TOL || !translation.iter().all(|v| v.is_finite())
        {
            return Err(GeometryError::NonOrthonormal(dev));
        }
        Ok(Self {
            rotation,
            translation,
            timestamp,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            timestamp: 0.0,
        }
    }

    /// Builds a pose from a quaternion in `(qx, qy, qz, qw)` order. The
    /// quaternion is normalized first.
    pub fn from_quaternion(
        timestamp: f64,
        translation: Vector3<f64>,
        q: [f64; 4],
    ) -> Result<Self, GeometryError> {
        let raw = Quaternion::new(q[3], q[0], q[1], q[2]);
        if !(raw.norm() > 0.0) || !raw.norm().is_finite() {
            return Err(GeometryError::NonOrthonormal(f64::NAN));
        }
        let unit = UnitQuaternion::from_quaternion(raw);
        Self::new(unit.to_rotation_matrix().into_inner(), translation, timestamp)
    }

    /// Pose of a level walker at `position` facing `yaw` radians about world
    /// `+z` (zero roll and pitch). The optical axis points along the heading.
    pub fn level_facing(position: Vector3<f64>, yaw: f64, timestamp: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let right = Vector3::new(s, -c, 0.0);
        let down = Vector3::new(0.0, 0.0, -1.0);
        let forward = Vector3::new(c, s, 0.0);
        Self {
            rotation: Matrix3::from_columns(&[right, down, forward]),
            translation: position,
            timestamp,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn with_timestamp(mut self, timestamp: f64) -> Self {
        self.timestamp = timestamp;
        self
    }

    /// Unit quaternion of the rotation.
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// `self * other`; the result keeps `self`'s timestamp.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            timestamp: self.timestamp,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
            timestamp: self.timestamp,
        }
    }

    /// Maps a world point into this pose's device frame: `Rᵀ (X − t)`.
    pub fn world_to_device(&self, point_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (point_world - self.translation)
    }

    pub fn device_to_world(&self, point_device: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point_device + self.translation
    }
}

/// Free-function form of [`Pose::world_to_device`].
pub fn world_to_device(pose: &Pose, point_world: &Vector3<f64>) -> Vector3<f64> {
    pose.world_to_device(point_world)
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fx.is_finite()) || !(self.fy > 0.0 && self.fy.is_finite()) {
            return bad("focal lengths must be positive and finite");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be positive");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad("cx must lie in [0, width)");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("cy must lie in [0, height)");
        }
        Ok(())
    }

    pub fn contains(&self, px: &PixelCoord) -> bool {
        px.u >= 0.0 && px.v >= 0.0 && px.u < self.width as f64 && px.v < self.height as f64
    }
}

/// Sub-pixel image coordinate: `u` is the column, `v` the row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Integer `(row, col)` of the pixel containing this coordinate.
    pub fn pixel_index(&self) -> (i64, i64) {
        (self.v.floor() as i64, self.u.floor() as i64)
    }
}

/// Outcome of projecting a device-frame point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    InView(PixelCoord),
    /// A valid projection that lands outside the image.
    OutOfBounds(PixelCoord),
    BehindCamera,
}

/// Walker rig parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigConfig {
    /// Height of the device above the ground, meters.
    pub height_above_ground: f64,
    /// Number of future poses projected per frame.
    pub horizon_poses: usize,
    /// Points with device-frame depth at or below this are not projected.
    pub min_forward_depth: f64,
    /// Camera pose expressed in the body frame.
    pub camera_in_body: Pose,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            height_above_ground: defaults::WALKER_HEIGHT,
            horizon_poses: defaults::HORIZON_POSES,
            min_forward_depth: defaults::MIN_FORWARD_DEPTH,
            camera_in_body: Pose::identity(),
        }
    }
}

impl RigConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.height_above_ground > 0.0) {
            return Err(GeometryError::InvalidRig("height_above_ground must be > 0".into()));
        }
        if self.horizon_poses < 1 {
            return Err(GeometryError::InvalidRig("horizon_poses must be >= 1".into()));
        }
        if !(self.min_forward_depth > 0.0) {
            return Err(GeometryError::InvalidRig("min_forward_depth must be > 0".into()));
        }
        Ok(())
    }
}

/// Drops a world point onto the ground below it by subtracting the rig
/// height from the gravity-aligned `z`.
pub fn ground_project(point_world: &Vector3<f64>, rig: &RigConfig) -> Vector3<f64> {
    Vector3::new(
        point_world.x,
        point_world.y,
        point_world.z - rig.height_above_ground,
    )
}

/// Pinhole projection of a device-frame point.
pub fn project_to_pixel(
    point_device: &Vector3<f64>,
    k: &CameraIntrinsics,
    min_forward_depth: f64,
) -> Projection {
    let z = point_device.z;
    if !(z > min_forward_depth.max(0.0)) {
        return Projection::BehindCamera;
    }
    let px = PixelCoord::new(
        k.fx * point_device.x / z + k.cx,
        k.fy * point_device.y / z + k.cy,
    );
    if k.contains(&px) {
        Projection::InView(px)
    } else {
        Projection::OutOfBounds(px)
    }
}

/// Projects the ground points under the next `rig.horizon_poses` poses into
/// the image of frame `frame_index`. Only in-view points are kept, in
/// trajectory order.
pub fn project_future_path(
    trajectory: &[Pose],
    frame_index: usize,
    k: &CameraIntrinsics,
    rig: &RigConfig,
) -> Result<Vec<PixelCoord>, GeometryError> {
    if frame_index >= trajectory.len() {
        return Err(GeometryError::FrameOutOfRange {
            index: frame_index,
            len: trajectory.len(),
        });
    }
    let camera = trajectory[frame_index].compose(&rig.camera_in_body);
    let last = (frame_index + rig.horizon_poses).min(trajectory.len() - 1);
    let pixels = trajectory[frame_index + 1..=last]
        .iter()
        .filter_map(|future| {
            let ground = ground_project(future.translation(), rig);
            let device = camera.world_to_device(&ground);
            match project_to_pixel(&device, k, rig.min_forward_depth) {
                Projection::InView(px) => Some(px),
                _ => None,
            }
        })
        .collect();
    Ok(pixels)
}
