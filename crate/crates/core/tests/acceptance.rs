//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Runs on a single worker thread so the
//! reported times are single-threaded.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use walkable::autoencoder::{stack_vectors, train, Activation, Mlp, TrainConfig};
use walkable::cloud::{build_cost_cloud, read_cloud, unproject, write_cloud, CloudOptions};
use walkable::costmap::{normalize_cost, tune_threshold, CostMap, GroundTruthMask, GtLabel, Resolution};
use walkable::defaults;
use walkable::features::{segment_mean_features, FeatureGrid, FeatureVector};
use walkable::geometry::{
    project_future_path, project_to_pixel, world_to_device, CameraIntrinsics, Pose, Projection, RigConfig,
};
use walkable::pipeline::{self, Dataset, PipelineConfig, WorkLayout};
use walkable::superpixel::{slic_with_trace, SegmentMask, SlicParams};
use walkable::synth::{pitched_camera, render_view, walk_spline, Scene};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn demo_scene() -> Scene {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes/demo.scene");
    Scene::read(&path).expect("bundled demo scene parses")
}

fn end_to_end() -> Outcome {
    let limit = Duration::from_secs(300);
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (data, work) = (dir.path().join("data"), WorkLayout::new(dir.path().join("work")));
    let scene = demo_scene();
    let table = scene.field.table();
    let walked: BTreeSet<&str> = ["grass", "dirt"].into();
    let traversable = table
        .iter()
        .filter(|c| c.kind == walkable::synth::ClassKind::Traversable)
        .count();
    let obstacles = table
        .iter()
        .filter(|c| c.kind == walkable::synth::ClassKind::NonTraversable)
        .count();
    if traversable != 2 || obstacles != 2 || table.iter().filter(|c| walked.contains(c.name.as_str())).count() != 2 {
        return outcome(false, "demo scene must have two traversable and two obstacle classes");
    }
    let model = scene.feature_model().unwrap();
    if model.min_separation() < 1.0 || scene.features.noise != 0.1 {
        return outcome(false, "demo scene must use separation >= 1 and noise 0.1");
    }

    let config = PipelineConfig::default();
    let run = || -> pipeline::Result<(f64, f64, f64)> {
        pipeline::synth(&scene, &data)?;
        let ds = Dataset::open(&data)?;
        pipeline::project(&ds, &config, &work)?;
        pipeline::segment(&ds, &config, &work)?;
        pipeline::extract(&ds, &work)?;
        let outcome = pipeline::train_model(&work, &config)?;
        pipeline::infer(&ds, &work, &outcome.model, config.cap)?;
        // threshold chosen on even frames, accuracy reported on odd frames
        let even: Vec<_> = ds.frames.iter().step_by(2).cloned().collect();
        let odd: Vec<_> = ds.frames.iter().skip(1).step_by(2).cloned().collect();
        let tuned = pipeline::evaluate(&ds, &work, &even, Resolution::Segment, &defaults::threshold_grid())?;
        let t = tuned.sweep.best_threshold;
        let held_out = pipeline::evaluate(&ds, &work, &odd, Resolution::Segment, &[t])?;
        Ok((t, tuned.sweep.best.accuracy, held_out.sweep.best.accuracy))
    };
    match run() {
        Ok((t, tune_acc, acc)) => {
            let elapsed = start.elapsed();
            outcome(
                acc >= 0.95 && elapsed <= limit,
                format!(
                    "held-out accuracy {acc:.4} (>= 0.95) at tuned threshold {t:.2} (tuning frames {tune_acc:.4}), {:.1} s (<= 300 s)",
                    elapsed.as_secs_f64()
                ),
            )
        }
        Err(e) => outcome(false, format!("pipeline failed: {e}")),
    }
}

fn gaussian_cluster(mean: &[f32], sigma: f32, n: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureVector> {
    (0..n)
        .map(|_| FeatureVector(mean.iter().map(|m| m + sigma * rng.sample::<f32, _>(StandardNormal)).collect()))
        .collect()
}

fn anomaly_separation() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let dim = defaults::FEATURE_DIM;
    let mu_a: Vec<f32> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mu_b: Vec<f32> = mu_a
        .iter()
        .map(|m| if rng.random_bool(0.5) { m + 1.0 } else { m - 1.0 })
        .collect();
    let train_set = gaussian_cluster(&mu_a, 0.1, 500, &mut rng);
    let held_a = gaussian_cluster(&mu_a, 0.1, 500, &mut rng);
    let held_b = gaussian_cluster(&mu_b, 0.1, 500, &mut rng);
    let config = TrainConfig {
        seed: 3,
        ..TrainConfig::default()
    };
    let model = train(&train_set, &config).unwrap().model;
    let loss_a = model.row_losses(stack_vectors(&held_a).unwrap().view()).unwrap();
    let loss_b = model.row_losses(stack_vectors(&held_b).unwrap().view()).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ratio = mean(&loss_b) / mean(&loss_a);

    let costs: Vec<f32> = loss_a
        .iter()
        .chain(&loss_b)
        .map(|&l| normalize_cost(l, defaults::LOSS_CAP).unwrap() as f32)
        .collect();
    let labels: Vec<GtLabel> = (0..costs.len())
        .map(|i| if i < loss_a.len() { GtLabel::Traversable } else { GtLabel::NonTraversable })
        .collect();
    let n = costs.len();
    let cost = CostMap::new(1, n, costs, Resolution::Segment).unwrap();
    let gt = GroundTruthMask::new(n, 1, labels).unwrap();
    let sweep = tune_threshold(&[cost], &[gt], &defaults::threshold_grid()).unwrap();
    let elapsed = start.elapsed();
    outcome(
        ratio >= 5.0 && sweep.best.accuracy >= 0.99 && elapsed <= Duration::from_secs(60),
        format!(
            "loss ratio {ratio:.1} (>= 5), sweep accuracy {:.4} at {:.2} (>= 0.99), {:.1} s (<= 60 s)",
            sweep.best.accuracy,
            sweep.best_threshold,
            elapsed.as_secs_f64()
        ),
    )
}

/// Mean over all elements of the squared reconstruction error.
fn oracle_loss(mlp: &Mlp<f64>, batch: &Array2<f64>) -> f64 {
    let out = mlp.forward_batch(batch.view()).unwrap();
    let n = batch.len() as f64;
    out.iter().zip(batch.iter()).map(|(o, x)| (o - x) * (o - x)).sum::<f64>() / n
}

/// True when no hidden pre-activation lies within `margin` of the ReLU
/// kink, where central differences straddle a non-differentiable point.
fn away_from_kinks(mlp: &Mlp<f64>, batch: &Array2<f64>, margin: f64) -> bool {
    batch.rows().into_iter().all(|row| {
        mlp.hidden_preactivations(&row.to_vec())
            .unwrap()
            .iter()
            .flatten()
            .all(|z| z.abs() > margin)
    })
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut redrawn = 0;
    for _ in 0..20 {
        let (mlp, batch) = loop {
            let mut mlp = Mlp::<f64>::random(&[4, 3, 2, 3, 4], Activation::Relu, &mut rng).unwrap();
            for b in mlp.biases_mut() {
                b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            }
            let batch = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
            if away_from_kinks(&mlp, &batch, 1e-3) {
                break (mlp, batch);
            }
            redrawn += 1;
        };
        let (_, grads) = mlp.loss_and_gradients(batch.view()).unwrap();
        let analytic = grads.to_flat();
        let params = mlp.to_flat();
        let mut probe = mlp.clone();
        for (i, &a) in analytic.iter().enumerate() {
            let mut p = params.clone();
            p[i] = params[i] + h;
            probe.set_flat(&p).unwrap();
            let up = oracle_loss(&probe, &batch);
            p[i] = params[i] - h;
            probe.set_flat(&p).unwrap();
            let down = oracle_loss(&probe, &batch);
            let numeric = (up - down) / (2.0 * h);
            let denom = a.abs().max(numeric.abs());
            let rel = if denom < 1e-10 { 0.0 } else { (a - numeric).abs() / denom };
            worst = worst.max(rel);
            checked += 1;
        }
    }
    outcome(
        worst < 1e-4,
        format!(
            "{checked} parameters over 20 networks ({redrawn} draws near a ReLU kink skipped), worst relative error {worst:.2e} (< 1e-4)"
        ),
    )
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let q = UnitQuaternion::from_euler_angles(
        rng.random_range(-3.1..3.1),
        rng.random_range(-1.5..1.5),
        rng.random_range(-3.1..3.1),
    );
    let t = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0));
    Pose::new(q.to_rotation_matrix().into_inner(), t, 0.0).unwrap()
}

fn geometry_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let k = CameraIntrinsics::new(525.0, 520.0, 319.5, 239.5, 640, 480).unwrap();
    let mut pixel_err: f64 = 0.0;
    for _ in 0..10_000 {
        let z = rng.random_range(0.2..60.0);
        let p = Vector3::new(rng.random_range(-z..z), rng.random_range(-z..z), z);
        let px = match project_to_pixel(&p, &k, 0.1) {
            Projection::InView(px) | Projection::OutOfBounds(px) => px,
            Projection::BehindCamera => return outcome(false, "in-front point reported behind the camera"),
        };
        pixel_err = pixel_err.max((unproject(&px, p.z, &k).unwrap() - p).amax());
    }

    let mut pose_err: f64 = 0.0;
    for _ in 0..1000 {
        let pose = random_pose(&mut rng);
        let p = Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(0.1..20.0));
        pose_err = pose_err.max((world_to_device(&pose, &pose.device_to_world(&p)) - p).amax());
        let id = pose.compose(&pose.inverse());
        pose_err = pose_err.max((id.rotation() - Matrix3::identity()).amax());
        pose_err = pose_err.max(id.translation().amax());
    }

    // level walk along +x, camera pitched down so the whole horizon is in view
    let trajectory: Vec<Pose> = (0..100)
        .map(|i| Pose::level_facing(Vector3::new(0.25 * i as f64, 0.0, 1.5), 0.0, 0.1 * i as f64))
        .collect();
    let wide = CameraIntrinsics::new(100.0, 100.0, 140.0, 140.0, 280, 280).unwrap();
    let rig = RigConfig {
        camera_in_body: pitched_camera(60f64.to_radians()),
        ..RigConfig::default()
    };
    let path = project_future_path(&trajectory, 0, &wide, &rig).unwrap();
    let monotone = path.windows(2).all(|w| w[1].v < w[0].v);
    // independent projection of the 40th future pose's ground point
    let camera = trajectory[0].compose(&rig.camera_in_body);
    let last = camera.world_to_device(&Vector3::new(0.25 * 40.0, 0.0, 0.0));
    let expected_v = wide.fy * last.y / last.z + wide.cy;
    let horizon_ok = rig.horizon_poses == 40
        && path.len() == 40
        && path.last().is_some_and(|p| (p.v - expected_v).abs() < 1e-9);

    outcome(
        pixel_err < 1e-6 && pose_err < 1e-9 && monotone && horizon_ok,
        format!(
            "pixel round trip {pixel_err:.1e} (< 1e-6), pose round trip {pose_err:.1e} (< 1e-9), monotone v: {monotone}, {} path pixels for horizon {}",
            path.len(),
            rig.horizon_poses
        ),
    )
}

fn aggregation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut key_mismatch = 0;
    for _ in 0..100 {
        let (h, w, dim) = (rng.random_range(1..24), rng.random_range(1..24), rng.random_range(1..20));
        let segments = rng.random_range(1..12u32);
        let data: Vec<f32> = (0..h * w * dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let labels: Vec<u32> = (0..h * w).map(|_| rng.random_range(0..segments)).collect();
        let grid = FeatureGrid::new(h, w, dim, data.clone()).unwrap();
        let mask = SegmentMask::new(w, h, labels.clone()).unwrap();
        let ids: BTreeSet<u32> = (0..segments + 2).filter(|_| rng.random_bool(0.7)).collect();
        let got = segment_mean_features(&grid, &mask, &ids).unwrap();

        let mut naive: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for &id in &ids {
            let mut sum = vec![0.0f64; dim];
            let mut count = 0usize;
            for r in 0..h {
                for c in 0..w {
                    if labels[r * w + c] == id {
                        count += 1;
                        for d in 0..dim {
                            sum[d] += data[(r * w + c) * dim + d] as f64;
                        }
                    }
                }
            }
            if count > 0 {
                naive.insert(id, sum.iter().map(|s| s / count as f64).collect());
            }
        }
        if got.keys().ne(naive.keys()) {
            key_mismatch += 1;
            continue;
        }
        for (id, v) in &got {
            for (a, b) in v.0.iter().zip(&naive[id]) {
                worst = worst.max((*a as f64 - b).abs());
            }
        }
    }
    outcome(
        worst < 1e-6 && key_mismatch == 0,
        format!("100 random pairs, worst deviation {worst:.1e} (< 1e-6), id set mismatches {key_mismatch}"),
    )
}

fn slic_properties() -> Outcome {
    let scene = demo_scene();
    let poses = walk_spline(&scene.field, &scene.spline).unwrap();
    let k = CameraIntrinsics::new(500.0, 500.0, 350.0, 350.0, 700, 700).unwrap();
    let camera = poses[40].compose(&scene.rig().camera_in_body);
    let image = render_view(&scene.field, &camera, &k).rgb(scene.field.table(), scene.color_jitter, 8);
    let params = SlicParams::default();
    let a = slic_with_trace(&image, &params).unwrap();
    let b = slic_with_trace(&image, &params).unwrap();
    let n = a.mask.num_segments();
    let covered =
        a.mask.labels().len() == 700 * 700 && a.mask.distinct_ids().len() == n && a.mask.labels().iter().all(|&l| (l as usize) < n);
    let deterministic = a.mask == b.mask && a.energy == b.energy;
    let monotone = a.energy.windows(2).all(|w| w[1] <= w[0]);
    let in_range = (320..=480).contains(&n);
    outcome(
        covered && deterministic && monotone && in_range,
        format!(
            "{n} segments for 400 requested (320..=480), coverage {covered}, deterministic {deterministic}, energy non-increasing over {} steps {monotone}",
            a.energy.len()
        ),
    )
}

fn constants() -> Outcome {
    let slic = SlicParams::default();
    let got = (
        defaults::SUPERPIXELS,
        defaults::COMPACTNESS,
        defaults::HORIZON_POSES,
        defaults::LOSS_CAP,
        defaults::THRESHOLD,
        defaults::MIN_RANGE,
        defaults::FEATURE_DIM,
        (defaults::GRID_HEIGHT, defaults::GRID_WIDTH),
    );
    let expected = (400, 15.0, 40, 10.0, 0.35, 2.0, 384, (50, 50));
    let config = PipelineConfig::default();
    let wired = slic.num_superpixels == 400
        && slic.compactness == 15.0
        && RigConfig::default().horizon_poses == 40
        && config.cap == 10.0
        && config.threshold == 0.35
        && config.min_range == 2.0
        && CloudOptions::default().min_range == 2.0
        && defaults::layer_sizes().first() == Some(&384);
    outcome(
        got == expected && wired,
        format!("{got:?}, wired into default configs: {wired}"),
    )
}

fn cloud_export() -> Outcome {
    let scene = demo_scene();
    let poses = walk_spline(&scene.field, &scene.spline).unwrap();
    let k = scene.intrinsics;
    let camera = poses[20].compose(&scene.rig().camera_in_body);
    let depth = render_view(&scene.field, &camera, &k).depth;
    let (w, h) = (depth.width, depth.height);
    let values: Vec<f32> = (0..w * h).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    let cost = CostMap::new(h, w, values, Resolution::Pixel).unwrap();
    let cloud = build_cost_cloud(&cost, &depth, &k, &CloudOptions::default()).unwrap();
    let nearest = cloud.points.iter().map(|p| p.range()).fold(f64::INFINITY, f64::min);

    // independent count of valid pixels at range >= 2 m
    let expected = (0..h * w)
        .filter(|&i| {
            let d = depth.values[i] as f64;
            if !(d > 0.0 && d.is_finite()) {
                return false;
            }
            let (u, v) = ((i % w) as f64, (i / w) as f64);
            let p = Vector3::new((u - k.cx) / k.fx * d, (v - k.cy) / k.fy * d, d);
            let q = p.map(|x| x as f32 as f64);
            p.norm() >= 2.0 && q.norm() >= 2.0
        })
        .count();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.ply");
    write_cloud(&cloud, &path).unwrap();
    let back = read_cloud(&path).unwrap();
    let printed = |x: f32| format!("{x:.6e}").parse::<f32>().unwrap();
    let exact = back.points.len() == cloud.points.len()
        && back.points.iter().zip(&cloud.points).all(|(b, p)| {
            [b.x, b.y, b.z, b.cost] == [printed(p.x), printed(p.y), printed(p.z), printed(p.cost)]
        });
    outcome(
        nearest >= 2.0 && exact && cloud.points.len() == expected && !cloud.points.is_empty(),
        format!(
            "{} points ({expected} expected), nearest {nearest:.3} m (>= 2.0), PLY round trip exact: {exact}",
            cloud.points.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().unwrap();
    let criteria: [Criterion; 8] = [
        ("synthetic end-to-end accuracy", end_to_end),
        ("anomaly separation", anomaly_separation),
        ("gradient correctness", gradient_check),
        ("geometry invariants", geometry_invariants),
        ("aggregation oracle", aggregation_oracle),
        ("slic properties", slic_properties),
        ("constants fidelity", constants),
        ("cloud export", cloud_export),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| outcome(false, "panicked"));
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("{tag}  {name}: {} [{:.1} s]", result.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!result.pass);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
