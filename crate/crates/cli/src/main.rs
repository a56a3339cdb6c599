use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use walkable::autoencoder::load_model;
use walkable::cloud::{write_cloud, DepthImage};
use walkable::config::KeyValues;
use walkable::costmap::{infer_cost_image, paint_segment_costs, segment_costs, CostMap, Resolution};
use walkable::defaults;
use walkable::features::FeatureGrid;
use walkable::geometry::read_intrinsics;
use walkable::pipeline::{self, Dataset, ErrorKind, Frame, PipelineConfig, PipelineError, WorkLayout};
use walkable::superpixel::{downscale_mask, SegmentMask};
use walkable::synth::Scene;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  unexpected internal failure
  2  command-line usage error
  3  missing input file
  4  read or write failure
  5  malformed input file
  6  size or dimension mismatch between inputs
  7  invalid parameter or input value
  8  nothing to process

On failure a single line `error kind=<kind> code=<n> msg=\"...\"` is written to stderr.";

#[derive(Parser)]
#[command(name = "walkable", version, about = "Traversability cost maps learned from walked terrain", after_help = EXIT_CODES)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Key-value config file; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Traversability threshold on normalized cost [default: 0.35]
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Reconstruction loss cap used for normalization [default: 10]
    #[arg(long, global = true)]
    cap: Option<f64>,
    /// Minimum point range for cloud export, meters [default: 2]
    #[arg(long, global = true)]
    min_range: Option<f64>,
    /// Future poses projected per frame [default: 40]
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// SLIC superpixel count [default: 400]
    #[arg(long, global = true)]
    superpixels: Option<usize>,
    /// SLIC compactness [default: 15]
    #[arg(long, global = true)]
    compactness: Option<f64>,
    /// Training epochs [default: 100]
    #[arg(long, global = true)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct DataWork {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Work directory for derived files
    #[arg(long)]
    work: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Segment,
    Pixel,
}

impl From<Mode> for Resolution {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Segment => Resolution::Segment,
            Mode::Pixel => Resolution::Pixel,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Split {
    All,
    Even,
    Odd,
}

impl Split {
    fn select(self, frames: &[Frame]) -> Vec<Frame> {
        frames
            .iter()
            .enumerate()
            .filter(|(i, _)| match self {
                Split::All => true,
                Split::Even => i % 2 == 0,
                Split::Odd => i % 2 == 1,
            })
            .map(|(_, f)| f.clone())
            .collect()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset from a scene file
    Synth {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project each frame's future path into path-pixel files
    Project(DataWork),
    /// Segment frame images into full-resolution and grid-size masks
    Segment(DataWork),
    /// Pool traversed-segment features into the training-vector file
    Extract(DataWork),
    /// Train the reconstruction model on the training vectors
    Train {
        /// Work directory holding vectors.bin
        #[arg(long)]
        work: PathBuf,
    },
    /// Write segment and pixel cost maps
    Infer(InferArgs),
    /// Score cost maps against ground truth
    Evaluate(EvaluateArgs),
    /// Write cost clouds from cost maps and depth images
    ExportCloud(CloudArgs),
    /// Synthesize a scene and run every stage on it
    Run {
        #[arg(long)]
        scene: PathBuf,
        /// Output directory; receives data/ and work/
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct InferArgs {
    /// Dataset directory (with --work)
    #[arg(long, requires = "work", conflicts_with_all = ["features", "mask", "out"])]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    work: Option<PathBuf>,
    /// Model file [default: <work>/model.bin]
    #[arg(long)]
    model: Option<PathBuf>,
    /// Single feature grid (with --mask and --out)
    #[arg(long, requires_all = ["mask", "out", "model"])]
    features: Option<PathBuf>,
    /// Segment mask of the single feature grid, any resolution
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Output prefix; writes <out>.segment.bin|png and <out>.pixel.bin|png
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    dirs: DataWork,
    #[arg(long, value_enum, default_value = "segment")]
    mode: Mode,
    /// Sweep thresholds 0.00, 0.01, ..., 1.00 and keep the best
    #[arg(long, conflicts_with = "thresholds")]
    sweep: bool,
    /// Explicit candidate thresholds
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Frames to report accuracy on
    #[arg(long, value_enum, default_value = "all")]
    frames: Split,
    /// Frames to choose the threshold on [default: same as --frames]
    #[arg(long, value_enum)]
    tune_on: Option<Split>,
    /// Report CSV [default: <work>/report.csv]
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CloudArgs {
    #[arg(long, requires = "work", conflicts_with_all = ["cost", "depth", "intrinsics", "out"])]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    work: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "segment")]
    mode: Mode,
    /// Single cost map (with --depth, --intrinsics and --out)
    #[arg(long, requires_all = ["depth", "intrinsics", "out"])]
    cost: Option<PathBuf>,
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Linear cost remap `scale,offset` applied before clamping to [0, 1]
    #[arg(long, value_delimiter = ',', num_args = 2)]
    remap: Option<Vec<f32>>,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Missing => 3,
        ErrorKind::Io => 4,
        ErrorKind::Format => 5,
        ErrorKind::Dimension => 6,
        ErrorKind::Invalid => 7,
        ErrorKind::Empty => 8,
    }
}

fn build_config(g: &Global) -> pipeline::Result<PipelineConfig> {
    let mut c = match &g.config {
        Some(path) => PipelineConfig::from_key_values(&KeyValues::read(pipeline::require_file(path)?)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        c.set_seed(s);
    }
    c.threads = g.threads.or(c.threads);
    c.threshold = g.threshold.unwrap_or(c.threshold);
    c.cap = g.cap.unwrap_or(c.cap);
    c.min_range = g.min_range.unwrap_or(c.min_range);
    c.horizon = g.horizon.unwrap_or(c.horizon);
    c.slic.num_superpixels = g.superpixels.unwrap_or(c.slic.num_superpixels);
    c.slic.compactness = g.compactness.unwrap_or(c.slic.compactness);
    c.train.epochs = g.epochs.unwrap_or(c.train.epochs);
    c.validate()?;
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = match e.downcast_ref::<PipelineError>() {
                Some(p) => (p.kind().name(), exit_code(p.kind())),
                None => ("internal", 1),
            };
            let msg = format!("{e:#}").replace('"', "'");
            eprintln!("error kind={kind} code={code} msg=\"{msg}\"");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = build_config(&cli.global)?;
    if let Some(n) = config.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Synth { scene, out } => {
            let s = synth(&scene, &out, &cli.global)?;
            println!(
                "synth: {} poses, {} frames, {:.1}% labeled pixels -> {}",
                s.poses,
                s.frames,
                100.0 * s.labeled_fraction,
                out.display()
            );
        }
        Command::Project(d) => project(&d, &config)?,
        Command::Segment(d) => segment(&d, &config)?,
        Command::Extract(d) => extract(&d)?,
        Command::Train { work } => train(&WorkLayout::new(work), &config)?,
        Command::Infer(a) => infer(&a, &config)?,
        Command::Evaluate(a) => {
            evaluate(&a, &config)?;
        }
        Command::ExportCloud(a) => export_cloud(&a, &config)?,
        Command::Run { scene, out } => {
            let start = Instant::now();
            let s = synth(&scene, &out.join("data"), &cli.global)?;
            println!("synth: {} frames", s.frames);
            let d = DataWork {
                data: out.join("data"),
                work: out.join("work"),
            };
            project(&d, &config)?;
            segment(&d, &config)?;
            extract(&d)?;
            train(&WorkLayout::new(&d.work), &config)?;
            infer(
                &InferArgs {
                    data: Some(d.data.clone()),
                    work: Some(d.work.clone()),
                    model: None,
                    features: None,
                    mask: None,
                    out: None,
                },
                &config,
            )?;
            evaluate(
                &EvaluateArgs {
                    dirs: d,
                    mode: Mode::Segment,
                    sweep: true,
                    thresholds: None,
                    frames: Split::Odd,
                    tune_on: Some(Split::Even),
                    report: None,
                },
                &config,
            )?;
            println!("run: finished in {:.1} s", start.elapsed().as_secs_f64());
        }
    }
    Ok(())
}

fn synth(scene: &Path, out: &Path, g: &Global) -> pipeline::Result<pipeline::SynthSummary> {
    let mut scene = Scene::read(pipeline::require_file(scene)?)?;
    if let Some(s) = g.seed {
        scene.seed = s;
    }
    pipeline::synth(&scene, out)
}

fn project(d: &DataWork, config: &PipelineConfig) -> pipeline::Result<()> {
    let ds = Dataset::open(&d.data)?;
    let s = pipeline::project(&ds, config, &WorkLayout::new(&d.work))?;
    println!(
        "project: {} frames, {} path pixels, {} frames without a pose",
        s.frames, s.pixels, s.skipped
    );
    Ok(())
}

fn segment(d: &DataWork, config: &PipelineConfig) -> pipeline::Result<()> {
    let ds = Dataset::open(&d.data)?;
    let s = pipeline::segment(&ds, config, &WorkLayout::new(&d.work))?;
    println!(
        "segment: {} frames, {:.1} segments per frame ({}..{})",
        s.frames, s.mean_segments, s.min_segments, s.max_segments
    );
    Ok(())
}

fn extract(d: &DataWork) -> pipeline::Result<()> {
    let ds = Dataset::open(&d.data)?;
    let s = pipeline::extract(&ds, &WorkLayout::new(&d.work))?;
    println!(
        "extract: {} vectors from {} frames ({} traversed segments, {} below grid resolution)",
        s.vectors, s.frames, s.traversed, s.dropped
    );
    Ok(())
}

fn train(work: &WorkLayout, config: &PipelineConfig) -> pipeline::Result<()> {
    let outcome = pipeline::train_model(work, config)?;
    if let Some(last) = outcome.history.last() {
        println!("train: {} epochs, final loss {:.6}", last.epoch, last.train_loss);
    }
    Ok(())
}

fn infer(a: &InferArgs, config: &PipelineConfig) -> pipeline::Result<()> {
    if let (Some(features), Some(mask), Some(out), Some(model)) = (&a.features, &a.mask, &a.out, &a.model) {
        let model = load_model(pipeline::require_file(model)?)?;
        let grid = FeatureGrid::read(pipeline::require_file(features)?)?;
        let full = SegmentMask::read(pipeline::require_file(mask)?)?;
        let small = if (full.height(), full.width()) == (grid.height(), grid.width()) {
            full.clone()
        } else {
            downscale_mask(&full, grid.height(), grid.width())?
        };
        let pixel = infer_cost_image(&model, &grid, &small, Resolution::Pixel, config.cap)?;
        let painted = paint_segment_costs(&full, &segment_costs(&model, &grid, &small, config.cap)?, &pixel)?;
        for (map, mode) in [(&painted, Resolution::Segment), (&pixel, Resolution::Pixel)] {
            let stem = format!("{}.{}", out.display(), mode.name());
            map.write(format!("{stem}.bin"))?;
            map.write_png(format!("{stem}.png"))?;
        }
        println!("infer: wrote {}.{{segment,pixel}}.{{bin,png}}", out.display());
        return Ok(());
    }
    let (Some(data), Some(work)) = (&a.data, &a.work) else {
        return Err(PipelineError::Invalid(
            "infer needs either --data and --work, or --features, --mask, --model and --out".into(),
        ));
    };
    let ds = Dataset::open(data)?;
    let work = WorkLayout::new(work);
    let model = load_model(pipeline::require_file(&a.model.clone().unwrap_or_else(|| work.model()))?)?;
    let s = pipeline::infer(&ds, &work, &model, config.cap)?;
    println!("infer: {} frames", s.frames);
    Ok(())
}

fn evaluate(a: &EvaluateArgs, config: &PipelineConfig) -> pipeline::Result<f64> {
    let ds = Dataset::open(&a.dirs.data)?;
    let work = WorkLayout::new(&a.dirs.work);
    let mode = Resolution::from(a.mode);
    let candidates = match (&a.thresholds, a.sweep) {
        (Some(t), _) => t.clone(),
        (None, true) => defaults::threshold_grid(),
        (None, false) => vec![config.threshold],
    };
    let test_frames = a.frames.select(&ds.frames);
    let tune_split = a.tune_on.unwrap_or(a.frames);
    let tuned = pipeline::evaluate(&ds, &work, &tune_split.select(&ds.frames), mode, &candidates)?;
    pipeline::write_report(&a.report.clone().unwrap_or_else(|| work.report()), &tuned)?;
    let threshold = tuned.sweep.best_threshold;
    let accuracy = if tune_split == a.frames {
        tuned.sweep.best.accuracy
    } else {
        println!(
            "evaluate: threshold {threshold:.2} chosen on {} frames (accuracy {:.4})",
            tuned.frames, tuned.sweep.best.accuracy
        );
        pipeline::evaluate(&ds, &work, &test_frames, mode, &[threshold])?.sweep.best.accuracy
    };
    println!(
        "evaluate: {} mode, {} frames, threshold {threshold:.2}, accuracy {accuracy:.4}",
        mode.name(),
        test_frames.len()
    );
    Ok(accuracy)
}

fn export_cloud(a: &CloudArgs, config: &PipelineConfig) -> pipeline::Result<()> {
    let mut config = config.clone();
    if let Some(v) = &a.remap {
        config.remap = Some((v[0], v[1]));
    }
    let mode = Resolution::from(a.mode);
    if let (Some(cost), Some(depth), Some(k), Some(out)) = (&a.cost, &a.depth, &a.intrinsics, &a.out) {
        let cost = CostMap::read(pipeline::require_file(cost)?, mode)?;
        let depth = DepthImage::read(pipeline::require_file(depth)?)?;
        let k = read_intrinsics(pipeline::require_file(k)?)?;
        let cloud = pipeline::export_cloud(&cost, &depth, &k, &config)?;
        write_cloud(&cloud, out)?;
        println!("export-cloud: {} points -> {}", cloud.points.len(), out.display());
        return Ok(());
    }
    let (Some(data), Some(work)) = (&a.data, &a.work) else {
        return Err(PipelineError::Invalid(
            "export-cloud needs either --data and --work, or --cost, --depth, --intrinsics and --out".into(),
        ));
    };
    let ds = Dataset::open(data)?;
    let work = WorkLayout::new(work);
    let mut frames = 0;
    let mut points = 0;
    for frame in &ds.frames {
        let depth_path = ds.layout.depth(&frame.name);
        let cost_path = work.cost(&frame.name, mode);
        if !depth_path.exists() || !cost_path.exists() {
            continue;
        }
        let cost = CostMap::read(&cost_path, mode)?;
        let depth = DepthImage::read(&depth_path)?;
        let cloud = pipeline::export_cloud(&cost, &depth, &ds.intrinsics, &config)?;
        let out = work.cloud(&frame.name);
        pipeline::create_parent(&out)?;
        write_cloud(&cloud, &out)?;
        frames += 1;
        points += cloud.points.len();
    }
    if frames == 0 {
        return Err(PipelineError::Empty("no frame has both a depth image and a cost map".into()));
    }
    println!("export-cloud: {frames} clouds, {points} points");
    Ok(())
}
