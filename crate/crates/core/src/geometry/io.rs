use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{CameraIntrinsics, GeometryError, Pose};

/// Parses TUM trajectory text: `timestamp tx ty tz qx qy qz qw` per line.
/// Blank lines and `#` comments are skipped.
pub fn parse_tum(text: &str) -> Result<Vec<Pose>, GeometryError> {
    let mut poses = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| GeometryError::Parse { line: idx + 1, msg };
        let vals = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|e| err(format!("{tok:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if vals.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        let pose = Pose::from_quaternion(
            vals[0],
            Vector3::new(vals[1], vals[2], vals[3]),
            [vals[4], vals[5], vals[6], vals[7]],
        )
        .map_err(|e| err(e.to_string()))?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn read_tum(path: impl AsRef<Path>) -> Result<Vec<Pose>, GeometryError> {
    parse_tum(&std::fs::read_to_string(path)?)
}

pub fn write_tum(path: impl AsRef<Path>, poses: &[Pose]) -> Result<(), GeometryError> {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in poses {
        let q = p.quaternion();
        let t = p.translation();
        writeln!(
            out,
            "{:.6} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            p.timestamp(),
            t.x,
            t.y,
            t.z,
            q.i,
            q.j,
            q.k,
            q.w
        )
        .expect("writing to a String cannot fail");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parses `key value` (or `key = value`) lines with keys `fx fy cx cy width height`.
pub fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics, GeometryError> {
    let mut vals: [Option<f64>; 6] = [None; 6];
    const KEYS: [&str; 6] = ["fx", "fy", "cx", "cy", "width", "height"];
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| GeometryError::Parse { line: idx + 1, msg };
        let (key, value) = line
            .split_once('=')
            .or_else(|| line.split_once(char::is_whitespace))
            .ok_or_else(|| err("expected `key value`".into()))?;
        let key = key.trim();
        let slot = KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| err(format!("unknown key {key:?}")))?;
        let v = value
            .trim()
            .parse::<f64>()
            .map_err(|e| err(format!("{key}: {e}")))?;
        vals[slot] = Some(v);
    }
    let get = |i: usize| {
        vals[i].ok_or_else(|| GeometryError::InvalidIntrinsics(format!("missing key {}", KEYS[i])))
    };
    let dim = |i: usize| -> Result<u32, GeometryError> {
        let v = get(i)?;
        if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "{} must be a positive integer",
                KEYS[i]
            )));
        }
        Ok(v as u32)
    };
    CameraIntrinsics::new(get(0)?, get(1)?, get(2)?, get(3)?, dim(4)?, dim(5)?)
}

pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics, GeometryError> {
    parse_intrinsics(&std::fs::read_to_string(path)?)
}

pub fn write_intrinsics(path: impl AsRef<Path>, k: &CameraIntrinsics) -> Result<(), GeometryError> {
    let text = format!(
        "fx {:?}\nfy {:?}\ncx {:?}\ncy {:?}\nwidth {}\nheight {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    );
    std::fs::write(path, text)?;
    Ok(())
}

/// Index of the pose nearest in time to `timestamp`, if within `tolerance`
/// seconds. `trajectory` must be sorted by timestamp.
pub fn associate_frame(trajectory: &[Pose], timestamp: f64, tolerance: f64) -> Option<usize> {
    let idx = trajectory.partition_point(|p| p.timestamp() < timestamp);
    let candidates = [idx.checked_sub(1), Some(idx)];
    candidates
        .into_iter()
        .flatten()
        .filter(|&i| i < trajectory.len())
        .map(|i| (i, (trajectory[i].timestamp() - timestamp).abs()))
        .filter(|&(_, dt)| dt <= tolerance)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}
