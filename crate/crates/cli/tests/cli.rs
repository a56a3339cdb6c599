use std::path::Path;
use std::process::{Command, Output};

use walkable::autoencoder::{save_model, train, TrainConfig};
use walkable::cloud::{read_cloud, DepthImage};
use walkable::costmap::{CostMap, GroundTruthMask, GtLabel, Resolution};
use walkable::features::{FeatureGrid, FeatureVector};
use walkable::geometry::{write_intrinsics, write_tum, CameraIntrinsics, Pose};
use walkable::pipeline::{write_frames, Frame};
use walkable::superpixel::SegmentMask;

fn walkable(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_walkable"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_documents_exit_codes() {
    let out = walkable(&["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("Exit codes"));
    for cmd in ["synth", "project", "segment", "extract", "train", "infer", "evaluate", "export-cloud"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn infer_rejects_model_grid_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let vectors: Vec<FeatureVector> = (0..20).map(|i| FeatureVector(vec![i as f32 * 0.1; 16])).collect();
    let config = TrainConfig {
        hidden_layers: vec![8],
        epochs: 2,
        ..TrainConfig::default()
    };
    let model_path = dir.path().join("model.bin");
    save_model(&train(&vectors, &config).unwrap().model, &model_path).unwrap();
    let grid_path = dir.path().join("grid.bin");
    FeatureGrid::new(4, 4, 8, vec![0.5; 128]).unwrap().write(&grid_path).unwrap();
    let mask_path = dir.path().join("mask.png");
    SegmentMask::new(4, 4, vec![0; 16]).unwrap().write(&mask_path).unwrap();

    let out = walkable(&[
        "infer",
        "--model",
        arg(&model_path),
        "--features",
        arg(&grid_path),
        "--mask",
        arg(&mask_path),
        "--out",
        arg(&dir.path().join("cost")),
    ]);
    assert_eq!(out.status.code(), Some(6), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error kind=dimension code=6"), "{}", stderr(&out));
    assert!(!dir.path().join("cost.segment.bin").exists());
}

/// A one-frame dataset with a 4x2 ground truth and a matching cost map.
fn tiny_dataset(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = root.join("data");
    let work = root.join("work");
    std::fs::create_dir_all(data.join("gt")).unwrap();
    std::fs::create_dir_all(work.join("costs")).unwrap();
    write_tum(data.join("trajectory.txt"), &[Pose::identity()]).unwrap();
    write_intrinsics(
        data.join("intrinsics.txt"),
        &CameraIntrinsics::new(2.0, 2.0, 2.0, 1.0, 4, 2).unwrap(),
    )
    .unwrap();
    write_frames(
        &data.join("frames.txt"),
        &[Frame {
            timestamp: 0.0,
            name: "f0".into(),
        }],
    )
    .unwrap();
    use GtLabel::*;
    GroundTruthMask::new(
        4,
        2,
        vec![Traversable, Traversable, NonTraversable, Unlabeled, Traversable, NonTraversable, NonTraversable, Traversable],
    )
    .unwrap()
    .write(data.join("gt/f0.png"))
    .unwrap();
    CostMap::new(2, 4, vec![0.1, 0.2, 0.8, 0.5, 0.3, 0.9, 0.4, 0.6], Resolution::Segment)
        .unwrap()
        .write(work.join("costs/f0.segment.bin"))
        .unwrap();
    (data, work)
}

#[test]
fn evaluate_with_one_threshold_reports_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let (data, work) = tiny_dataset(dir.path());
    let out = walkable(&["evaluate", "--data", arg(&data), "--work", arg(&work), "--thresholds", "0.5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = std::fs::read_to_string(work.join("report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{report}");
    // <= 0.5 traversable: 0.1 0.2 0.3 0.4 -> tp 3, tn 2, fp 1, fn 1
    assert_eq!(rows[0], "segment,0.5000,0.714286,3,2,1,1,7");
    assert!(stdout(&out).contains("accuracy 0.7143"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (data, work) = tiny_dataset(dir.path());
    let config = dir.path().join("walkable.conf");
    std::fs::write(&config, "threshold = 0.65\n").unwrap();
    let report = dir.path().join("r.csv");
    let run = |extra: &[&str]| {
        let mut args = vec!["evaluate", "--data", arg(&data), "--work", arg(&work), "--report", arg(&report)];
        args.extend_from_slice(extra);
        let out = walkable(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read_to_string(&report).unwrap().lines().nth(1).unwrap().to_string()
    };
    assert!(run(&[]).starts_with("segment,0.3500,"));
    assert!(run(&["--config", arg(&config)]).starts_with("segment,0.6500,"));
    assert!(run(&["--config", arg(&config), "--threshold", "0.45"]).starts_with("segment,0.4500,"));
}

#[test]
fn failures_map_to_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = walkable(&["project", "--data", arg(&dir.path().join("none")), "--work", arg(dir.path())]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(stderr(&missing).starts_with("error kind=missing code=3"));

    let (data, work) = tiny_dataset(dir.path());
    let bad = walkable(&["evaluate", "--data", arg(&data), "--work", arg(&work), "--threshold", "1.5"]);
    assert_eq!(bad.status.code(), Some(7), "{}", stderr(&bad));

    std::fs::write(data.join("frames.txt"), "zero f0\n").unwrap();
    let malformed = walkable(&["evaluate", "--data", arg(&data), "--work", arg(&work)]);
    assert_eq!(malformed.status.code(), Some(5), "{}", stderr(&malformed));

    let usage = walkable(&["evaluate"]);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn export_cloud_drops_near_points() {
    let dir = tempfile::tempdir().unwrap();
    let (data, work) = tiny_dataset(dir.path());
    let depth = dir.path().join("depth.bin");
    DepthImage::new(4, 2, vec![1.0, 3.0, 0.0, 5.0, 2.5, 1.5, 4.0, f32::NAN])
        .unwrap()
        .write(&depth)
        .unwrap();
    let out_path = dir.path().join("cloud.ply");
    let out = walkable(&[
        "export-cloud",
        "--cost",
        arg(&work.join("costs/f0.segment.bin")),
        "--depth",
        arg(&depth),
        "--intrinsics",
        arg(&data.join("intrinsics.txt")),
        "--out",
        arg(&out_path),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cloud = read_cloud(&out_path).unwrap();
    assert_eq!(cloud.points.len(), 4);
    assert!(cloud.points.iter().all(|p| p.range() >= 2.0));
    let costs: Vec<f32> = cloud.points.iter().map(|p| p.cost).collect();
    assert_eq!(costs, vec![0.2, 0.5, 0.3, 0.4]);
}

#[test]
fn run_scores_a_small_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("small.scene");
    std::fs::write(
        &scene,
        "seed = 4
field.cells_x = 80
field.cells_y = 80
field.cell_size = 0.25
field.origin_x = -10
field.origin_y = -10
class.0 = grass, traversable, 86, 142, 58
class.1 = rock, obstacle, 128, 128, 132
class.2 = sky, sky, 160, 196, 236
terrain.base_class = grass
obstacles.count = 10
obstacles.classes = rock
obstacles.max_distance = 5
spline.points = -7 -6; 0 0; 7 5
rig.pitch_deg = 25
camera.width = 120
camera.height = 120
camera.fx = 90
camera.fy = 90
frames.stride = 8
features.dim = 24
features.height = 30
features.width = 30
",
    )
    .unwrap();
    let out = walkable(&[
        "run",
        "--scene",
        arg(&scene),
        "--out",
        arg(&dir.path().join("out")),
        "--superpixels",
        "100",
        "--epochs",
        "30",
        "--seed",
        "9",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let line = text.lines().find(|l| l.contains("accuracy") && l.contains("mode")).unwrap();
    let acc: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(acc > 0.9, "{text}");
}
