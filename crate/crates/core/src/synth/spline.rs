use nalgebra::Vector3;

use super::{Heightfield, SynthError};
use crate::geometry::Pose;

/// Samples per Catmull-Rom segment when measuring arc length.
const DENSE_SAMPLES: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct SplinePath {
    /// Control points in world XY.
    pub control: Vec<[f64; 2]>,
    /// Arc-length spacing between consecutive poses, meters.
    pub spacing: f64,
    /// Walker height above the terrain, meters.
    pub height: f64,
    /// Walking speed used for timestamps, meters per second.
    pub speed: f64,
    pub start_time: f64,
}

impl SplinePath {
    pub fn new(control: Vec<[f64; 2]>, spacing: f64, height: f64) -> Self {
        Self {
            control,
            spacing,
            height,
            speed: 1.0,
            start_time: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.control.len() < 2 {
            return Err(SynthError::Spline("need at least 2 control points".into()));
        }
        if !self.control.iter().flatten().all(|v| v.is_finite()) {
            return Err(SynthError::Spline("control points must be finite".into()));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(SynthError::Spline("spacing must be > 0".into()));
        }
        if !(self.height > 0.0 && self.height.is_finite()) {
            return Err(SynthError::Spline("walker height must be > 0".into()));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(SynthError::Spline("speed must be > 0".into()));
        }
        Ok(())
    }

    /// Dense polyline along the Catmull-Rom curve through every control
    /// point (end points duplicated as phantom neighbors).
    pub fn dense(&self) -> Vec<[f64; 2]> {
        let p = &self.control;
        let n = p.len();
        let at = |i: isize| p[i.clamp(0, n as isize - 1) as usize];
        let mut out = Vec::with_capacity((n - 1) * DENSE_SAMPLES + 1);
        for seg in 0..n - 1 {
            let i = seg as isize;
            let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
            for s in 0..DENSE_SAMPLES {
                let t = s as f64 / DENSE_SAMPLES as f64;
                out.push(catmull_rom(p0, p1, p2, p3, t));
            }
        }
        out.push(p[n - 1]);
        out
    }

    pub fn length(&self) -> f64 {
        cumulative(&self.dense()).last().copied().unwrap_or(0.0)
    }

    /// Points spaced `spacing` apart in arc length, starting at the first
    /// control point.
    pub fn samples(&self) -> Vec<[f64; 2]> {
        let dense = self.dense();
        let cum = cumulative(&dense);
        let total = *cum.last().expect("non-empty");
        let count = (total / self.spacing).floor() as usize + 1;
        let mut out = Vec::with_capacity(count);
        let mut j = 0;
        for k in 0..count {
            let s = k as f64 * self.spacing;
            while j + 2 < cum.len() && cum[j + 1] < s {
                j += 1;
            }
            let span = cum[j + 1] - cum[j];
            let f = if span > 0.0 { ((s - cum[j]) / span).clamp(0.0, 1.0) } else { 0.0 };
            out.push([
                dense[j][0] + f * (dense[j + 1][0] - dense[j][0]),
                dense[j][1] + f * (dense[j + 1][1] - dense[j][1]),
            ]);
        }
        out
    }
}

fn catmull_rom(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], t: f64) -> [f64; 2] {
    let t2 = t * t;
    let t3 = t2 * t;
    let f = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * (2.0 * b + (c - a) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (3.0 * b - a - 3.0 * c + d) * t3)
    };
    [f(p0[0], p1[0], p2[0], p3[0]), f(p0[1], p1[1], p2[1], p3[1])]
}

fn cumulative(points: &[[f64; 2]]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in points.windows(2) {
        acc += (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        cum.push(acc);
    }
    cum
}

/// Level walker poses along the spline: `z` sits `height` above the
/// terrain, yaw faces the next sample, timestamps advance at constant
/// speed.
pub fn walk_spline(field: &Heightfield, spline: &SplinePath) -> Result<Vec<Pose>, SynthError> {
    spline.validate()?;
    if let Some(p) = spline.dense().into_iter().find(|p| !field.contains(p[0], p[1])) {
        return Err(SynthError::OutsideField { x: p[0], y: p[1] });
    }
    let samples = spline.samples();
    let mut poses = Vec::with_capacity(samples.len());
    let mut yaw = 0.0;
    for (k, s) in samples.iter().enumerate() {
        if let Some(next) = samples.get(k + 1) {
            yaw = (next[1] - s[1]).atan2(next[0] - s[0]);
        }
        let ground = field
            .height_at(s[0], s[1])
            .ok_or(SynthError::OutsideField { x: s[0], y: s[1] })?;
        let t = spline.start_time + k as f64 * spline.spacing / spline.speed;
        poses.push(Pose::level_facing(Vector3::new(s[0], s[1], ground + spline.height), yaw, t));
    }
    Ok(poses)
}
