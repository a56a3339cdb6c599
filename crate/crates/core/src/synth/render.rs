use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ClassImage, ClassKind, ClassTable, Heightfield};
use crate::cloud::DepthImage;
use crate::costmap::{GroundTruthMask, GtLabel};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::raster::RgbImage;

/// One rendered camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub classes: ClassImage,
    /// Depth along the optical axis; 0 where the ray misses the terrain.
    pub depth: DepthImage,
}

impl RenderedView {
    pub fn ground_truth(&self, table: &ClassTable) -> GroundTruthMask {
        let labels = self
            .classes
            .ids
            .iter()
            .map(|&id| match table.get(id).map(|c| c.kind) {
                Some(ClassKind::Traversable) => GtLabel::Traversable,
                Some(ClassKind::NonTraversable) => GtLabel::NonTraversable,
                _ => GtLabel::Unlabeled,
            })
            .collect();
        GroundTruthMask::new(self.classes.width, self.classes.height, labels).expect("same dimensions")
    }

    /// Class colors with seeded per-pixel jitter of up to `jitter` levels.
    pub fn rgb(&self, table: &ClassTable, jitter: u8, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = jitter as i16;
        let w = self.classes.width;
        RgbImage::from_fn(w, self.classes.height, |r, c| {
            let base = table.get(self.classes.ids[r * w + c]).map_or([0, 0, 0], |k| k.color);
            base.map(|v| {
                let d = if j > 0 { rng.random_range(-j..=j) } else { 0 };
                (v as i16 + d).clamp(0, 255) as u8
            })
        })
    }
}

/// First intersection of `origin + t * dir` with the terrain for
/// `t >= t_min`, as `(t, class)`.
fn cast_ray(field: &Heightfield, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64) -> Option<(f64, u8)> {
    let (lo, hi) = field.extent();
    let (zmin, zmax) = field.elevation_range();
    let mut t0 = t_min;
    let mut t1 = f64::INFINITY;
    for a in 0..2 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
        } else {
            let ta = (lo[a] - origin[a]) / dir[a];
            let tb = (hi[a] - origin[a]) / dir[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    // only the slab of heights the terrain occupies can produce a hit
    if dir.z < 0.0 {
        t0 = t0.max((zmax - origin.z) / dir.z);
        t1 = t1.min((zmin - origin.z) / dir.z);
    } else if dir.z > 0.0 {
        t1 = t1.min((zmax - origin.z) / dir.z);
    } else if origin.z > zmax {
        return None;
    }
    if !(t0 <= t1) || !t1.is_finite() {
        return None;
    }

    let s = field.cell_size();
    let (cx, cy) = field.cells();
    let o = field.origin();
    let start = origin + dir * t0;
    let mut ix = (((start.x - o[0]) / s).floor().max(0.0) as usize).min(cx - 1);
    let mut iy = (((start.y - o[1]) / s).floor().max(0.0) as usize).min(cy - 1);
    let step_x: isize = if dir.x > 0.0 { 1 } else { -1 };
    let step_y: isize = if dir.y > 0.0 { 1 } else { -1 };
    let next_boundary = |i: usize, a: usize, step: isize| -> f64 {
        if dir[a] == 0.0 {
            return f64::INFINITY;
        }
        let edge = o[a] + (i as f64 + if step > 0 { 1.0 } else { 0.0 }) * s;
        (edge - origin[a]) / dir[a]
    };

    let mut t = t0;
    loop {
        let tx = next_boundary(ix, 0, step_x);
        let ty = next_boundary(iy, 1, step_y);
        let t_next = tx.min(ty).min(t1);
        if let Some(hit) = hit_in_cell(field, ix, iy, origin, dir, t, t_next) {
            return Some((hit, field.cell_class(ix, iy)));
        }
        if t_next >= t1 {
            return None;
        }
        if tx <= ty {
            let n = ix as isize + step_x;
            if n < 0 || n >= cx as isize {
                return None;
            }
            ix = n as usize;
        } else {
            let n = iy as isize + step_y;
            if n < 0 || n >= cy as isize {
                return None;
            }
            iy = n as usize;
        }
        t = t_next;
    }
}

/// Smallest `t` in `[t0, t1]` where the ray is at or below the bilinear
/// patch of cell `(ix, iy)`. Along the ray the patch height is quadratic in
/// `t`, so the crossing is a quadratic root.
fn hit_in_cell(
    field: &Heightfield,
    ix: usize,
    iy: usize,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    t0: f64,
    t1: f64,
) -> Option<f64> {
    let s = field.cell_size();
    let o = field.origin();
    let (h00, h10, h01, h11) = field.corners(ix, iy);
    let (a, b, c, e) = (h00, h10 - h00, h01 - h00, h00 - h10 - h01 + h11);
    // local cell coordinates fx = px + qx t, fy = py + qy t
    let px = (origin.x - (o[0] + ix as f64 * s)) / s;
    let py = (origin.y - (o[1] + iy as f64 * s)) / s;
    let (qx, qy) = (dir.x / s, dir.y / s);
    let qa = -e * qx * qy;
    let qb = dir.z - (b * qx + c * qy + e * (px * qy + py * qx));
    let qc = origin.z - (a + b * px + c * py + e * px * py);
    let f = |t: f64| (qa * t + qb) * t + qc;

    if f(t0) <= 0.0 {
        return Some(t0);
    }
    let scale = qa.abs().max(qb.abs()).max(qc.abs());
    let mut roots = [f64::NAN; 2];
    if qa.abs() <= 1e-12 * scale {
        if qb != 0.0 {
            roots[0] = -qc / qb;
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let q = -0.5 * (qb + qb.signum() * disc.sqrt());
            roots = [q / qa, if q != 0.0 { qc / q } else { f64::NAN }];
        }
    }
    let best = roots
        .iter()
        .copied()
        .filter(|r| r.is_finite() && *r >= t0 && *r <= t1)
        .fold(f64::INFINITY, f64::min);
    if best.is_finite() {
        return Some(best);
    }
    (f(t1) <= 0.0).then_some(t1)
}

/// Ray casts every pixel (at integer pixel coordinates) of a camera at
/// `camera` over the field.
pub fn render_view(field: &Heightfield, camera: &Pose, k: &CameraIntrinsics) -> RenderedView {
    let (w, h) = (k.width as usize, k.height as usize);
    let sky = field.table().sky();
    let origin = *camera.translation();
    let rows: Vec<(Vec<u8>, Vec<f32>)> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut ids = Vec::with_capacity(w);
            let mut depth = Vec::with_capacity(w);
            for c in 0..w {
                let ray_cam = Vector3::new((c as f64 - k.cx) / k.fx, (r as f64 - k.cy) / k.fy, 1.0);
                let dir = camera.rotation() * ray_cam;
                // t is the depth along the optical axis since ray_cam.z = 1
                match cast_ray(field, &origin, &dir, 1e-6) {
                    Some((t, class)) => {
                        ids.push(class);
                        depth.push(t as f32);
                    }
                    None => {
                        ids.push(sky);
                        depth.push(0.0);
                    }
                }
            }
            (ids, depth)
        })
        .collect();
    let mut ids = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    for (i, d) in rows {
        ids.extend(i);
        depth.extend(d);
    }
    RenderedView {
        classes: ClassImage { width: w, height: h, ids },
        depth: DepthImage::new(w, h, depth).expect("sized from intrinsics"),
    }
}

/// Renders the camera of every body pose.
pub fn render_views(field: &Heightfield, poses: &[Pose], k: &CameraIntrinsics, camera_in_body: &Pose) -> Vec<RenderedView> {
    poses
        .par_iter()
        .map(|p| render_view(field, &p.compose(camera_in_body), k))
        .collect()
}
