use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use super::{create_dir, create_parent, require, write_frames, write_rig, Dataset, DatasetLayout, Frame, PipelineConfig, PipelineError, Result, WorkLayout};
use crate::autoencoder::{load_model, save_model, train, MlpModel, TrainOutcome};
use crate::cloud::{build_cost_cloud, CloudOptions, CostCloud, DepthImage};
use crate::costmap::{
    infer_cost_image, paint_segment_costs, segment_costs, tune_threshold, CostMap, GroundTruthMask, Resolution,
    ThresholdSweep,
};
use crate::defaults;
use crate::features::{masked_path_features, FeatureGrid, FeatureVector};
use crate::geometry::{self, associate_frame, project_future_path, CameraIntrinsics, PixelCoord};
use crate::raster::RgbImage;
use crate::superpixel::{downscale_mask, slic_segment, SegmentMask};
use crate::synth::{render_view, synth_features, walk_spline, Scene};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// splitmix64 finalizer; derives independent per-frame streams from one seed.
fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub poses: usize,
    pub frames: usize,
    /// Fraction of rendered pixels carrying a ground-truth label.
    pub labeled_fraction: f64,
}

/// Walks the scene's spline and writes a complete dataset directory.
pub fn synth(scene: &Scene, out: &Path) -> Result<SynthSummary> {
    let layout = DatasetLayout::new(out);
    for sub in ["images", "features", "depth", "gt"] {
        create_dir(&out.join(sub))?;
    }
    let poses = walk_spline(&scene.field, &scene.spline)?;
    let rig = scene.rig();
    let model = scene.feature_model()?;
    let table = scene.field.table();
    let indices: Vec<usize> = (0..poses.len()).step_by(scene.frame_stride).collect();
    let frames: Vec<Frame> = indices
        .iter()
        .map(|&i| Frame {
            timestamp: poses[i].timestamp(),
            name: format!("frame_{i:05}"),
        })
        .collect();

    let labeled: Vec<(usize, usize)> = indices
        .par_iter()
        .zip(&frames)
        .map(|(&i, frame)| -> Result<(usize, usize)> {
            let camera = poses[i].compose(&rig.camera_in_body);
            let view = render_view(&scene.field, &camera, &scene.intrinsics);
            view.rgb(table, scene.color_jitter, mix_seed(scene.seed, 2 * i as u64 + 1))
                .write_png(layout.image(&frame.name))?;
            view.depth.write(layout.depth(&frame.name))?;
            let gt = view.ground_truth(table);
            gt.write(layout.ground_truth(&frame.name))?;
            let small = view
                .classes
                .downscale(scene.features.grid_height, scene.features.grid_width);
            synth_features(&small, &model, mix_seed(scene.seed, 2 * i as u64))?.write(layout.features(&frame.name))?;
            Ok((gt.labeled_count(), gt.labels().len()))
        })
        .collect::<Result<_>>()?;

    geometry::write_tum(layout.trajectory(), &poses)?;
    geometry::write_intrinsics(layout.intrinsics(), &scene.intrinsics)?;
    write_rig(&layout.rig(), &rig)?;
    write_frames(&layout.frames(), &frames)?;
    let (hit, total) = labeled.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(SynthSummary {
        poses: poses.len(),
        frames: frames.len(),
        labeled_fraction: hit as f64 / total.max(1) as f64,
    })
}

pub fn write_path_pixels(path: &Path, pixels: &[PixelCoord]) -> Result<()> {
    create_parent(path)?;
    let mut text = String::from("# u v\n");
    for p in pixels {
        text.push_str(&format!("{:?} {:?}\n", p.u, p.v));
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_path_pixels(path: &Path) -> Result<Vec<PixelCoord>> {
    let text = std::fs::read_to_string(require(path)?).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| PipelineError::PathFile {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("{e}"),
            })?;
        match v[..] {
            [u, v] if u.is_finite() && v.is_finite() => out.push(PixelCoord::new(u, v)),
            _ => {
                return Err(PipelineError::PathFile {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "expected two finite values `u v`".into(),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectSummary {
    pub frames: usize,
    /// Frames with no pose within the association tolerance.
    pub skipped: usize,
    pub pixels: usize,
}

/// Projects the future path into every frame that has a matching pose.
pub fn project(ds: &Dataset, config: &PipelineConfig, work: &WorkLayout) -> Result<ProjectSummary> {
    let rig = config.rig(&ds.rig);
    rig.validate()?;
    let mut summary = ProjectSummary {
        frames: 0,
        skipped: 0,
        pixels: 0,
    };
    for frame in &ds.frames {
        let Some(index) = associate_frame(&ds.trajectory, frame.timestamp, config.association_tolerance) else {
            summary.skipped += 1;
            continue;
        };
        let pixels = project_future_path(&ds.trajectory, index, &ds.intrinsics, &rig)?;
        write_path_pixels(&work.path_pixels(&frame.name), &pixels)?;
        summary.frames += 1;
        summary.pixels += pixels.len();
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentSummary {
    pub frames: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub mean_segments: f64,
}

/// Grid size of a frame's feature file, or the default 50 x 50.
fn grid_size(ds: &Dataset, name: &str) -> Result<(usize, usize)> {
    let path = ds.layout.features(name);
    if path.exists() {
        let g = FeatureGrid::read(&path)?;
        Ok((g.height(), g.width()))
    } else {
        Ok((defaults::GRID_HEIGHT, defaults::GRID_WIDTH))
    }
}

/// SLIC on every frame image; writes the full-resolution mask and its
/// downscale to the feature grid size.
pub fn segment(ds: &Dataset, config: &PipelineConfig, work: &WorkLayout) -> Result<SegmentSummary> {
    if ds.frames.is_empty() {
        return Err(PipelineError::Empty("frame list is empty".into()));
    }
    create_dir(&work.root.join("masks"))?;
    create_dir(&work.root.join("masks_small"))?;
    let counts: Vec<usize> = ds
        .frames
        .par_iter()
        .map(|frame| -> Result<usize> {
            let image = RgbImage::read_png(require(&ds.layout.image(&frame.name))?)?;
            let mask = slic_segment(&image, &config.slic)?;
            let (gh, gw) = grid_size(ds, &frame.name)?;
            let small = downscale_mask(&mask, gh, gw)?;
            mask.write(work.mask(&frame.name))?;
            small.write(work.small_mask(&frame.name))?;
            Ok(mask.num_segments())
        })
        .collect::<Result<_>>()?;
    Ok(SegmentSummary {
        frames: counts.len(),
        min_segments: counts.iter().copied().min().unwrap_or(0),
        max_segments: counts.iter().copied().max().unwrap_or(0),
        mean_segments: counts.iter().sum::<usize>() as f64 / counts.len() as f64,
    })
}

/// Training vectors are stored as an `N x 1 x dim` grid.
pub fn write_vectors(path: &Path, vectors: &[FeatureVector]) -> Result<()> {
    let dim = vectors
        .first()
        .map(FeatureVector::len)
        .ok_or_else(|| PipelineError::Empty("no training vectors".into()))?;
    let data: Vec<f32> = vectors.iter().flat_map(|v| v.0.iter().copied()).collect();
    create_parent(path)?;
    FeatureGrid::new(vectors.len(), 1, dim, data)?.write(path)?;
    Ok(())
}

pub fn read_vectors(path: &Path) -> Result<Vec<FeatureVector>> {
    let grid = FeatureGrid::read(require(path)?)?;
    Ok(grid.cells().map(|c| FeatureVector(c.to_vec())).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractSummary {
    pub frames: usize,
    pub vectors: usize,
    pub traversed: usize,
    /// Traversed segments that vanished at grid resolution.
    pub dropped: usize,
}

/// Pools one mean feature vector per traversed segment of every projected
/// frame into the training-vector file.
pub fn extract(ds: &Dataset, work: &WorkLayout) -> Result<ExtractSummary> {
    let frames: Vec<&Frame> = ds
        .frames
        .iter()
        .filter(|f| work.path_pixels(&f.name).exists())
        .collect();
    if frames.is_empty() {
        return Err(PipelineError::Empty("no projected frames; run project first".into()));
    }
    let per_frame: Vec<_> = frames
        .par_iter()
        .map(|frame| -> Result<_> {
            let path = read_path_pixels(&work.path_pixels(&frame.name))?;
            let mask = SegmentMask::read(require(&work.mask(&frame.name))?)?;
            let grid = FeatureGrid::read(require(&ds.layout.features(&frame.name))?)?;
            Ok(masked_path_features(&grid, &mask, &path)?)
        })
        .collect::<Result<_>>()?;
    let mut summary = ExtractSummary {
        frames: frames.len(),
        vectors: 0,
        traversed: 0,
        dropped: 0,
    };
    let mut vectors = Vec::new();
    for pf in per_frame {
        summary.traversed += pf.traversed;
        summary.dropped += pf.dropped;
        vectors.extend(pf.vectors.into_iter().map(|(_, v)| v));
    }
    summary.vectors = vectors.len();
    write_vectors(&work.vectors(), &vectors)?;
    Ok(summary)
}

/// Trains on the work directory's vectors; writes the model and a
/// per-epoch loss CSV.
pub fn train_model(work: &WorkLayout, config: &PipelineConfig) -> Result<TrainOutcome> {
    let vectors = read_vectors(&work.vectors())?;
    let outcome = train(&vectors, &config.train)?;
    save_model(&outcome.model, work.model())?;
    let path = work.loss_history();
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for e in &outcome.history {
        let val = e.val_loss.map(|v| format!("{v:.9e}")).unwrap_or_default();
        text.push_str(&format!("{},{:.9e},{}\n", e.epoch, e.train_loss, val));
    }
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferSummary {
    pub frames: usize,
}

/// Segment- and pixel-mode cost maps of every segmented frame. Segment
/// costs are painted over the full-resolution mask; pixel costs stay at
/// grid resolution.
pub fn infer(ds: &Dataset, work: &WorkLayout, model: &MlpModel, cap: f64) -> Result<InferSummary> {
    let frames: Vec<&Frame> = ds
        .frames
        .iter()
        .filter(|f| work.small_mask(&f.name).exists())
        .collect();
    if frames.is_empty() {
        return Err(PipelineError::Empty("no segmented frames; run segment first".into()));
    }
    create_dir(&work.root.join("costs"))?;
    frames
        .par_iter()
        .map(|frame| -> Result<()> {
            let grid = FeatureGrid::read(require(&ds.layout.features(&frame.name))?)?;
            let small = SegmentMask::read(work.small_mask(&frame.name))?;
            let full = SegmentMask::read(require(&work.mask(&frame.name))?)?;
            let pixel = infer_cost_image(model, &grid, &small, Resolution::Pixel, cap)?;
            let seg_costs = segment_costs(model, &grid, &small, cap)?;
            let painted = paint_segment_costs(&full, &seg_costs, &pixel)?;
            for (map, mode) in [(&painted, Resolution::Segment), (&pixel, Resolution::Pixel)] {
                map.write(work.cost(&frame.name, mode))?;
                map.write_png(work.cost_png(&frame.name, mode))?;
            }
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(InferSummary { frames: frames.len() })
}

/// Loads a model or reports which stage is missing.
pub fn load_work_model(work: &WorkLayout) -> Result<MlpModel> {
    Ok(load_model(require(&work.model())?)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSummary {
    pub mode: Resolution,
    pub frames: usize,
    pub sweep: ThresholdSweep,
}

/// Accuracy of the given frames' cost maps against ground truth for every
/// candidate threshold. Cost maps are resized to the ground-truth size by
/// nearest neighbor.
pub fn evaluate(
    ds: &Dataset,
    work: &WorkLayout,
    frames: &[Frame],
    mode: Resolution,
    candidates: &[f64],
) -> Result<EvaluateSummary> {
    if frames.is_empty() {
        return Err(PipelineError::Empty("no frames to evaluate".into()));
    }
    let pairs: Vec<(CostMap, GroundTruthMask)> = frames
        .par_iter()
        .map(|frame| -> Result<_> {
            let gt = GroundTruthMask::read(require(&ds.layout.ground_truth(&frame.name))?)?;
            let cost = CostMap::read(require(&work.cost(&frame.name, mode))?, mode)?;
            let cost = if (cost.height(), cost.width()) == (gt.height(), gt.width()) {
                cost
            } else {
                cost.resize_nearest(gt.height(), gt.width())?
            };
            Ok((cost, gt))
        })
        .collect::<Result<_>>()?;
    let (costs, gts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(EvaluateSummary {
        mode,
        frames: frames.len(),
        sweep: tune_threshold(&costs, &gts, candidates)?,
    })
}

/// CSV with one row per candidate threshold.
pub fn write_report(path: &Path, summary: &EvaluateSummary) -> Result<()> {
    create_parent(path)?;
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut body = String::from("mode,threshold,accuracy,tp,tn,fp,fn,labeled\n");
    for (t, e) in &summary.sweep.curve {
        let c = e.confusion;
        body.push_str(&format!(
            "{},{:.4},{:.6},{},{},{},{},{}\n",
            summary.mode.name(),
            t,
            e.accuracy,
            c.tp,
            c.tn,
            c.fp,
            c.fn_,
            c.total()
        ));
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Reads the rows written by [`write_report`] as `(threshold, accuracy)`.
pub fn read_report(path: &Path) -> Result<Vec<(f64, f64)>> {
    let reader = BufReader::new(File::open(require(path)?).map_err(io_err(path))?);
    let mut rows = Vec::new();
    for line in reader.lines().skip(1) {
        let line = line.map_err(io_err(path))?;
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| s.parse::<f64>().map_err(|e| PipelineError::Invalid(format!("report: {e}")));
        if cols.len() != 8 {
            return Err(PipelineError::Invalid(format!("report row {line:?}")));
        }
        rows.push((parse(cols[1])?, parse(cols[2])?));
    }
    Ok(rows)
}

/// Cost cloud of one frame; the cost map is upsampled to the depth size
/// by nearest neighbor first.
pub fn export_cloud(
    cost: &CostMap,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    config: &PipelineConfig,
) -> Result<CostCloud> {
    if (depth.width, depth.height) != (k.width as usize, k.height as usize) {
        return Err(PipelineError::Invalid(format!(
            "depth {}x{} does not match intrinsics {}x{}",
            depth.width, depth.height, k.width, k.height
        )));
    }
    let cost = if (cost.height(), cost.width()) == (depth.height, depth.width) {
        cost.clone()
    } else {
        cost.resize_nearest(depth.height, depth.width)?
    };
    let options = CloudOptions {
        min_range: config.min_range,
        remap: config.remap,
    };
    Ok(build_cost_cloud(&cost, depth, k, &options)?)
}
