//! Scene description files. See `scenes/README.md` for the key reference.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{pitched_camera, ClassFeatureModel, ClassKind, ClassTable, Heightfield, SplinePath, SynthError, TerrainClass};
use crate::config::KeyValues;
use crate::defaults;
use crate::geometry::{CameraIntrinsics, RigConfig};

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "field.",
    "class.",
    "terrain.",
    "obstacles.",
    "spline.",
    "rig.",
    "camera.",
    "frames.",
    "image.",
    "features.",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    pub dim: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    pub noise: f32,
    /// Standard deviation of the class mean entries.
    pub mean_scale: f32,
    /// Required L-infinity gap between any two class means.
    pub min_separation: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub field: Heightfield,
    pub spline: SplinePath,
    pub intrinsics: CameraIntrinsics,
    /// Downward camera pitch, radians.
    pub camera_pitch: f64,
    pub horizon_poses: usize,
    /// A camera frame is emitted every `frame_stride` poses.
    pub frame_stride: usize,
    /// RGB jitter amplitude, levels.
    pub color_jitter: u8,
    pub features: FeatureParams,
}

struct Obstacle {
    center: [f64; 2],
    radius: f64,
    height: f64,
    class: u8,
}

fn bad(msg: impl Into<String>) -> SynthError {
    SynthError::Scene(msg.into())
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn polyline_distance(p: [f64; 2], line: &[[f64; 2]]) -> f64 {
    if line.len() == 1 {
        return (p[0] - line[0][0]).hypot(p[1] - line[0][1]);
    }
    line.windows(2)
        .map(|w| segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

fn pair(kv: &KeyValues, key: &str, default: [f64; 2]) -> Result<[f64; 2], SynthError> {
    match kv.list::<f64>(key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 && v[0] <= v[1] => Ok([v[0], v[1]]),
        Some(_) => Err(bad(format!("{key} must be `min, max`"))),
    }
}

fn parse_classes(kv: &KeyValues) -> Result<ClassTable, SynthError> {
    let mut entries: Vec<(usize, TerrainClass)> = Vec::new();
    for (id, value) in kv.with_prefix("class.") {
        let id: usize = id.parse().map_err(|_| bad(format!("class id {id:?} is not an integer")))?;
        let parts: Vec<&str> = value.split(',').map(str::trim).collect();
        let [name, kind, r, g, b] = parts[..] else {
            return Err(bad(format!("class.{id} must be `name, kind, r, g, b`")));
        };
        let kind = ClassKind::parse(kind).ok_or_else(|| bad(format!("class.{id}: unknown kind {kind:?}")))?;
        let channel = |s: &str| s.parse::<u8>().map_err(|_| bad(format!("class.{id}: bad color {s:?}")));
        entries.push((
            id,
            TerrainClass {
                name: name.to_string(),
                kind,
                color: [channel(r)?, channel(g)?, channel(b)?],
            },
        ));
    }
    entries.sort_by_key(|e| e.0);
    if entries.iter().enumerate().any(|(i, e)| e.0 != i) {
        return Err(bad("class ids must be 0, 1, ..., n-1"));
    }
    ClassTable::new(entries.into_iter().map(|e| e.1).collect())
}

fn class_id(table: &ClassTable, name: &str) -> Result<u8, SynthError> {
    let id = table
        .id_of(name)
        .or_else(|| name.parse::<u8>().ok().filter(|&i| (i as usize) < table.len()))
        .ok_or_else(|| bad(format!("unknown class {name:?}")))?;
    if id == table.sky() {
        return Err(bad("terrain cells cannot use the sky class"));
    }
    Ok(id)
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>, SynthError> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
        .collect())
}

fn parse_spline_points(text: &str) -> Result<Vec<[f64; 2]>, SynthError> {
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| {
            let v: Vec<f64> = p
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| bad(format!("bad spline point {p:?}")))?;
            match v[..] {
                [x, y] => Ok([x, y]),
                _ => Err(bad(format!("spline point {p:?} needs two coordinates"))),
            }
        })
        .collect()
}

impl Scene {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses a scene; relative CSV paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, SynthError> {
        let kv = KeyValues::parse(text)?;
        kv.check_known(KNOWN_KEYS)?;
        let seed = kv.get_or("seed", 0u64)?;
        let table = parse_classes(&kv)?;

        let spacing = kv.get_or("spline.spacing", 0.25)?;
        let mut spline = SplinePath::new(
            parse_spline_points(kv.raw("spline.points").ok_or_else(|| bad("missing spline.points"))?)?,
            spacing,
            kv.get_or("rig.height", defaults::WALKER_HEIGHT)?,
        );
        spline.speed = kv.get_or("spline.speed", 1.0)?;
        spline.validate()?;

        let cells_x: usize = kv.require("field.cells_x")?;
        let cells_y: usize = kv.require("field.cells_y")?;
        let cell_size: f64 = kv.require("field.cell_size")?;
        let origin = [kv.get_or("field.origin_x", 0.0)?, kv.get_or("field.origin_y", 0.0)?];

        let field = match (kv.raw("terrain.heightfield"), kv.raw("terrain.classmap")) {
            (Some(h), Some(c)) => {
                let heights = read_csv_rows(&base_dir.join(h))?;
                if heights.len() != cells_y + 1 || heights.iter().any(|r| r.len() != cells_x + 1) {
                    return Err(bad(format!("heightfield CSV must be {} rows of {} values", cells_y + 1, cells_x + 1)));
                }
                let elevations = heights
                    .iter()
                    .flatten()
                    .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad elevation {s:?}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                let classes = read_csv_rows(&base_dir.join(c))?;
                if classes.len() != cells_y || classes.iter().any(|r| r.len() != cells_x) {
                    return Err(bad(format!("class map CSV must be {cells_y} rows of {cells_x} values")));
                }
                let classes = classes
                    .iter()
                    .flatten()
                    .map(|s| class_id(&table, s))
                    .collect::<Result<Vec<_>, _>>()?;
                Heightfield::new(cells_x, cells_y, cell_size, origin, elevations, classes, table)?
            }
            (None, None) => procedural_field(&kv, cells_x, cells_y, cell_size, origin, table, &spline, seed)?,
            _ => return Err(bad("terrain.heightfield and terrain.classmap must be given together")),
        };

        let width: u32 = kv.get_or("camera.width", 280)?;
        let height: u32 = kv.get_or("camera.height", 280)?;
        let intrinsics = CameraIntrinsics::new(
            kv.get_or("camera.fx", 200.0)?,
            kv.get_or("camera.fy", 200.0)?,
            kv.get_or("camera.cx", width as f64 / 2.0)?,
            kv.get_or("camera.cy", height as f64 / 2.0)?,
            width,
            height,
        )?;

        let features = FeatureParams {
            dim: kv.get_or("features.dim", defaults::FEATURE_DIM)?,
            grid_height: kv.get_or("features.height", defaults::GRID_HEIGHT)?,
            grid_width: kv.get_or("features.width", defaults::GRID_WIDTH)?,
            noise: kv.get_or("features.noise", 0.1)?,
            mean_scale: kv.get_or("features.mean_scale", 1.0)?,
            min_separation: kv.get_or("features.min_separation", 1.0)?,
        };
        if features.dim == 0 || features.grid_height == 0 || features.grid_width == 0 {
            return Err(bad("feature dimensions must be positive"));
        }
        let frame_stride = kv.get_or("frames.stride", 4usize)?;
        if frame_stride == 0 {
            return Err(bad("frames.stride must be >= 1"));
        }
        Ok(Self {
            seed,
            field,
            spline,
            intrinsics,
            camera_pitch: kv.get_or("rig.pitch_deg", 0.0f64)?.to_radians(),
            horizon_poses: kv.get_or("rig.horizon", defaults::HORIZON_POSES)?,
            frame_stride,
            color_jitter: kv.get_or("image.jitter", 6u8)?,
            features,
        })
    }

    pub fn rig(&self) -> RigConfig {
        RigConfig {
            height_above_ground: self.spline.height,
            horizon_poses: self.horizon_poses,
            camera_in_body: pitched_camera(self.camera_pitch),
            ..RigConfig::default()
        }
    }

    /// Class-conditioned feature model drawn from the scene seed.
    pub fn feature_model(&self) -> Result<ClassFeatureModel, SynthError> {
        let f = &self.features;
        ClassFeatureModel::random(
            self.field.table().len(),
            f.dim,
            f.mean_scale,
            f.noise,
            f.min_separation,
            self.seed ^ 0x5eed_f00d,
        )
    }
}

/// Rolling hills with a path corridor along the first part of the spline
/// and round obstacles scattered beside it.
#[allow(clippy::too_many_arguments)]
fn procedural_field(
    kv: &KeyValues,
    cells_x: usize,
    cells_y: usize,
    cell_size: f64,
    origin: [f64; 2],
    table: ClassTable,
    spline: &SplinePath,
    seed: u64,
) -> Result<Heightfield, SynthError> {
    let base = class_id(&table, kv.raw("terrain.base_class").ok_or_else(|| bad("missing terrain.base_class"))?)?;
    let path_class = kv.raw("terrain.path_class").map(|n| class_id(&table, n)).transpose()?;
    let relief: f64 = kv.get_or("terrain.relief", 0.0)?;
    let wavelength: f64 = kv.get_or("terrain.wavelength", 20.0)?;
    let path_width: f64 = kv.get_or("terrain.path_width", 1.5)?;
    let path_fraction: f64 = kv.get_or("terrain.path_fraction", 1.0)?;
    if !(wavelength > 0.0) || !(0.0..=1.0).contains(&path_fraction) || !(path_width >= 0.0) {
        return Err(bad("terrain.wavelength > 0, terrain.path_width >= 0, terrain.path_fraction in [0, 1]"));
    }

    let line = spline.samples();
    let path_len = ((line.len() as f64 * path_fraction).ceil() as usize).min(line.len());
    let path_line = &line[..path_len];

    let obstacle_classes: Vec<u8> = match kv.raw("obstacles.classes") {
        None => Vec::new(),
        Some(list) => list.split(',').map(|n| class_id(&table, n.trim())).collect::<Result<_, _>>()?,
    };
    let count: usize = kv.get_or("obstacles.count", 0)?;
    if count > 0 && obstacle_classes.is_empty() {
        return Err(bad("obstacles.count needs obstacles.classes"));
    }
    let radius = pair(kv, "obstacles.radius", [0.5, 1.2])?;
    let height = pair(kv, "obstacles.height", [0.5, 1.5])?;
    let clearance: f64 = kv.get_or("obstacles.clearance", 1.0)?;
    let max_distance: f64 = kv.get_or("obstacles.max_distance", f64::INFINITY)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)];
    let (w, h) = (cells_x as f64 * cell_size, cells_y as f64 * cell_size);
    let mut obstacles = Vec::with_capacity(count);
    let mut attempts = 0;
    while obstacles.len() < count && attempts < count * 200 {
        attempts += 1;
        let r = rng.random_range(radius[0]..=radius[1]);
        let c = [
            origin[0] + rng.random_range(r..(w - r).max(r + 1e-9)),
            origin[1] + rng.random_range(r..(h - r).max(r + 1e-9)),
        ];
        let d = polyline_distance(c, &line);
        if d < clearance + r || d > max_distance {
            continue;
        }
        if obstacles
            .iter()
            .any(|o: &Obstacle| (o.center[0] - c[0]).hypot(o.center[1] - c[1]) < o.radius + r)
        {
            continue;
        }
        obstacles.push(Obstacle {
            center: c,
            radius: r,
            height: rng.random_range(height[0]..=height[1]),
            class: obstacle_classes[rng.random_range(0..obstacle_classes.len())],
        });
    }
    if obstacles.len() < count {
        return Err(bad(format!("placed only {} of {count} obstacles", obstacles.len())));
    }

    let k = std::f64::consts::TAU / wavelength;
    let elevation = |x: f64, y: f64| {
        let hills = relief * ((k * x + phase[0]).sin() * (0.7 * k * y + phase[1]).cos());
        let bumps: f64 = obstacles
            .iter()
            .map(|o| {
                let r = (x - o.center[0]).hypot(y - o.center[1]);
                if r < o.radius {
                    o.height * 0.5 * (1.0 + (std::f64::consts::PI * r / o.radius).cos())
                } else {
                    0.0
                }
            })
            .sum();
        hills + bumps
    };
    let class = |x: f64, y: f64| {
        if let Some(o) = obstacles
            .iter()
            .find(|o| (x - o.center[0]).hypot(y - o.center[1]) < 0.8 * o.radius)
        {
            return o.class;
        }
        match path_class {
            Some(p) if !path_line.is_empty() && polyline_distance([x, y], path_line) <= path_width / 2.0 => p,
            _ => base,
        }
    };
    Heightfield::from_fn(cells_x, cells_y, cell_size, origin, elevation, class, table)
}
