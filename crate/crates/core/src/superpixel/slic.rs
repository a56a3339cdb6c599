//! SLIC: localized k-means in joint CIELAB + image-plane space.
//!
//! Cluster centers start on a regular grid with spacing
//! `S = sqrt(N / K)`. Each iteration assigns pixels to the nearest center
//! searched within the `2S x 2S` window around every center, using
//! `D² = d_lab² + (m / S)² d_xy²`, then moves each center to the mean of its
//! pixels. A pixel always keeps its current center as a candidate, so the
//! summed `D²` over all pixels never increases from one assignment to the
//! next. Iteration stops after `max_iterations` or once no center moves more
//! than `1e-3 S`. Finally every segment is made 4-connected.

use crate::defaults;
use crate::raster::RgbImage;

use super::lab::rgb_to_lab;
use super::{SegmentError, SegmentMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    pub num_superpixels: usize,
    pub compactness: f64,
    pub max_iterations: usize,
    /// Reserved for seed perturbation; the grid initialization is
    /// deterministic, so results currently do not depend on it.
    pub seed: u64,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            num_superpixels: defaults::SUPERPIXELS,
            compactness: defaults::COMPACTNESS,
            max_iterations: defaults::SLIC_MAX_ITERATIONS,
            seed: 0,
        }
    }
}

impl SlicParams {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.num_superpixels < 1 {
            return Err(SegmentError::InvalidParams("num_superpixels must be >= 1".into()));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(SegmentError::InvalidParams("compactness must be > 0".into()));
        }
        if self.max_iterations < 1 {
            return Err(SegmentError::InvalidParams("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Segmentation plus diagnostics of the clustering run.
#[derive(Debug, Clone)]
pub struct SlicTrace {
    pub mask: SegmentMask,
    /// Summed squared assignment distance after each assignment step.
    pub energy: Vec<f64>,
    pub iterations: usize,
    /// Segment count before connectivity enforcement.
    pub clusters: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Center {
    lab: [f64; 3],
    y: f64,
    x: f64,
}

pub fn slic_segment(image: &RgbImage, params: &SlicParams) -> Result<SegmentMask, SegmentError> {
    slic_with_trace(image, params).map(|t| t.mask)
}

pub fn slic_with_trace(image: &RgbImage, params: &SlicParams) -> Result<SlicTrace, SegmentError> {
    params.validate()?;
    let (w, h) = (image.width(), image.height());
    let n = w * h;
    if n == 0 || n < params.num_superpixels {
        return Err(SegmentError::ImageTooSmall {
            pixels: n,
            requested: params.num_superpixels,
        });
    }
    let lab = rgb_to_lab(image);
    let s = (n as f64 / params.num_superpixels as f64).sqrt();
    let spatial = (params.compactness / s).powi(2);

    let mut centers = grid_centers(&lab, w, h, s);
    let mut labels = vec![u32::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    let mut energy = Vec::with_capacity(params.max_iterations);
    let mut iterations = 0;

    let d2 = |c: &Center, p: usize| -> f64 {
        let (py, px) = ((p / w) as f64, (p % w) as f64);
        let l = &lab[p];
        let dl = [l[0] - c.lab[0], l[1] - c.lab[1], l[2] - c.lab[2]];
        let (dy, dx) = (py - c.y, px - c.x);
        dl[0] * dl[0] + dl[1] * dl[1] + dl[2] * dl[2] + spatial * (dy * dy + dx * dx)
    };

    for _ in 0..params.max_iterations {
        iterations += 1;
        // Current assignment stays a candidate.
        for p in 0..n {
            dist[p] = match labels[p] {
                u32::MAX => f64::INFINITY,
                k => d2(&centers[k as usize], p),
            };
        }
        for (k, c) in centers.iter().enumerate() {
            let y0 = (c.y - s).floor().max(0.0) as usize;
            let y1 = ((c.y + s).ceil() as usize).min(h);
            let x0 = (c.x - s).floor().max(0.0) as usize;
            let x1 = ((c.x + s).ceil() as usize).min(w);
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = y * w + x;
                    let d = d2(c, p);
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = k as u32;
                    }
                }
            }
        }
        // Windows tile the image, but fall back to an exhaustive search
        // rather than leave a pixel unassigned.
        for p in 0..n {
            if labels[p] == u32::MAX {
                let (k, d) = centers
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (k, d2(c, p)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("at least one center");
                labels[p] = k as u32;
                dist[p] = d;
            }
        }
        energy.push(dist.iter().sum());

        let moved = update_centers(&mut centers, &labels, &lab, w);
        if moved < 1e-3 * s {
            break;
        }
    }

    let clusters = centers.len();
    let mask = enforce_connectivity(&labels, w, h, (n / params.num_superpixels / 4).max(1));
    Ok(SlicTrace {
        mask,
        energy,
        iterations,
        clusters,
    })
}

fn grid_centers(lab: &[[f64; 3]], w: usize, h: usize, s: f64) -> Vec<Center> {
    let rows = ((h as f64 / s).round() as usize).max(1);
    let cols = ((w as f64 / s).round() as usize).max(1);
    let (step_y, step_x) = (h as f64 / rows as f64, w as f64 / cols as f64);
    let mut centers = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let y = (r as f64 + 0.5) * step_y;
            let x = (c as f64 + 0.5) * step_x;
            let p = (y as usize).min(h - 1) * w + (x as usize).min(w - 1);
            centers.push(Center { lab: lab[p], y, x });
        }
    }
    centers
}

/// Moves every center to its members' mean; returns the largest spatial shift.
fn update_centers(centers: &mut [Center], labels: &[u32], lab: &[[f64; 3]], w: usize) -> f64 {
    let mut sums = vec![[0.0f64; 5]; centers.len()];
    let mut counts = vec![0usize; centers.len()];
    for (p, &k) in labels.iter().enumerate() {
        let acc = &mut sums[k as usize];
        let l = &lab[p];
        acc[0] += l[0];
        acc[1] += l[1];
        acc[2] += l[2];
        acc[3] += (p / w) as f64;
        acc[4] += (p % w) as f64;
        counts[k as usize] += 1;
    }
    let mut moved = 0.0f64;
    for ((c, acc), &cnt) in centers.iter_mut().zip(&sums).zip(&counts) {
        if cnt == 0 {
            continue;
        }
        let inv = 1.0 / cnt as f64;
        let next = Center {
            lab: [acc[0] * inv, acc[1] * inv, acc[2] * inv],
            y: acc[3] * inv,
            x: acc[4] * inv,
        };
        moved = moved.max((next.y - c.y).hypot(next.x - c.x));
        *c = next;
    }
    moved
}

/// Relabels 4-connected components densely in raster order. Components
/// smaller than `min_size` are absorbed by the segment of the neighbor that
/// the raster scan visited just before them (left, else above).
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_size: usize) -> SegmentMask {
    let n = w * h;
    let mut out = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..n {
        if out[start] != u32::MAX {
            continue;
        }
        let original = labels[start];
        component.clear();
        stack.push(start);
        out[start] = next;
        while let Some(p) = stack.pop() {
            component.push(p);
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if out[q] == u32::MAX && labels[q] == original {
                    out[q] = next;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        let (y, x) = (start / w, start % w);
        let previous = if x > 0 {
            Some(out[start - 1])
        } else if y > 0 {
            Some(out[start - w])
        } else {
            None
        };
        match previous {
            Some(adj) if component.len() < min_size => {
                for &p in &component {
                    out[p] = adj;
                }
            }
            _ => next += 1,
        }
    }
    SegmentMask::new(w, h, out).expect("dimensions checked by caller")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn params(k: usize) -> SlicParams {
        SlicParams {
            num_superpixels: k,
            ..SlicParams::default()
        }
    }

    /// Brute-force 4-connectivity check of every id's pixel set.
    fn all_segments_connected(mask: &SegmentMask) -> bool {
        let (w, h) = (mask.width(), mask.height());
        let areas = mask.areas();
        let mut seen = vec![false; w * h];
        let mut reached = vec![0usize; areas.len()];
        let mut first_seen = vec![false; areas.len()];
        for start in 0..w * h {
            let id = mask.labels()[start] as usize;
            if first_seen[id] {
                continue;
            }
            first_seen[id] = true;
            let mut q = VecDeque::from([start]);
            seen[start] = true;
            while let Some(p) = q.pop_front() {
                reached[id] += 1;
                let (y, x) = (p / w, p % w);
                let nbrs = [
                    (x > 0).then(|| p - 1),
                    (x + 1 < w).then(|| p + 1),
                    (y > 0).then(|| p - w),
                    (y + 1 < h).then(|| p + w),
                ];
                for nb in nbrs.into_iter().flatten() {
                    if !seen[nb] && mask.labels()[nb] as usize == id {
                        seen[nb] = true;
                        q.push_back(nb);
                    }
                }
            }
        }
        reached == areas
    }

    fn blobs(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |r, c| {
            let a = ((r as f64 / 9.0).sin() + (c as f64 / 13.0).cos()) * 60.0 + 128.0;
            let b = if (r / 17 + c / 23) % 3 == 0 { 200 } else { 40 };
            [a as u8, b, ((r * c) % 50) as u8 + 100]
        })
    }

    #[test]
    fn uniform_image_tiles_regularly() {
        let img = RgbImage::from_fn(100, 100, |_, _| [90, 140, 60]);
        let trace = slic_with_trace(&img, &params(16)).unwrap();
        let mask = &trace.mask;
        assert_eq!(mask.num_segments(), 16);
        let nominal = 100.0 * 100.0 / 16.0;
        for a in mask.areas() {
            assert!(a as f64 > nominal / 2.0 && (a as f64) < nominal * 2.0, "area {a}");
        }
        // 4x4 tiling: the centre of each 25x25 tile carries a distinct id.
        let ids: std::collections::BTreeSet<u32> = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| mask.get(r * 25 + 12, c * 25 + 12))
            .collect();
        assert_eq!(ids.len(), 16);
    }

    #[test]
    fn covers_connects_and_repeats() {
        let img = blobs(120, 90);
        let a = slic_with_trace(&img, &params(60)).unwrap();
        let b = slic_with_trace(&img, &params(60)).unwrap();
        assert_eq!(a.mask, b.mask);
        assert!(a.mask.labels().iter().all(|&l| (l as usize) < a.mask.num_segments()));
        assert!(a.mask.areas().iter().all(|&n| n > 0), "ids must be dense");
        assert!(all_segments_connected(&a.mask));
    }

    #[test]
    fn energy_never_increases() {
        for (w, h, k, m) in [(120, 90, 60, 15.0), (64, 64, 30, 1.0), (80, 50, 7, 40.0)] {
            let p = SlicParams {
                num_superpixels: k,
                compactness: m,
                max_iterations: 25,
                seed: 0,
            };
            let t = slic_with_trace(&blobs(w, h), &p).unwrap();
            assert!(t.energy.len() >= 2);
            for pair in t.energy.windows(2) {
                assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "{:?}", t.energy);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let img = RgbImage::from_fn(4, 4, |_, _| [0, 0, 0]);
        assert!(matches!(
            slic_segment(&img, &params(17)),
            Err(SegmentError::ImageTooSmall { .. })
        ));
        let bad = SlicParams {
            compactness: 0.0,
            ..params(4)
        };
        assert!(matches!(slic_segment(&img, &bad), Err(SegmentError::InvalidParams(_))));
        assert!(slic_segment(&img, &params(16)).is_ok());
    }

    #[test]
    fn small_orphans_are_absorbed() {
        // Label 1 is split into a large block and a single stray pixel.
        let (w, h) = (6, 4);
        let mut labels = vec![0u32; w * h];
        for y in 0..4 {
            for x in 3..6 {
                labels[y * w + x] = 1;
            }
        }
        labels[3 * w] = 1; // bottom-left stray
        let mask = enforce_connectivity(&labels, w, h, 2);
        assert_eq!(mask.num_segments(), 2);
        assert_eq!(mask.get(3, 0), mask.get(2, 0));
        assert!(all_segments_connected(&mask));
    }

    #[test]
    fn orphans_join_the_previously_visited_neighbor() {
        // a 1-pixel island of label 2 joins the segment to its left even
        // though a larger one lies to its right
        let labels = vec![
            0, 0, 2, 1, 1, 1, //
            3, 3, 3, 1, 1, 1,
        ];
        let mask = enforce_connectivity(&labels, 6, 2, 2);
        assert_eq!(mask.get(0, 2), mask.get(0, 1));
        assert_ne!(mask.get(0, 2), mask.get(0, 3));
        assert_eq!(mask.num_segments(), 3);
        assert!(all_segments_connected(&mask));
    }
}
