use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use probfuse::dataset_io::{export_depth_png, load_depth_png, load_prior, save_boundary, save_normals, save_prior};
use probfuse::pipeline::{
    ablate_fusion, ablate_regularizers, ablate_warp, FrameSource, InMemorySequence, PipelineConfig, PriorSource,
    SequenceResult, TumSequence,
};
use probfuse::regularizer::{boundary_prob_from_depth, normals_from_depth};
use probfuse::synth::{default_intrinsics, render_sequence, write_dataset, Scene, Trajectory};
use probfuse::{evaluate, synth_prior, Error, PriorModel, ReportTable, Result};

#[derive(Parser)]
#[command(name = "probfuse", version, about = "Dense keyframe depth from fused depth distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on a TUM-layout sequence.
    Run(RunArgs),
    /// Write synthetic prior volumes (and optionally normals and boundaries)
    /// derived from ground-truth depth.
    MakePriors(MakePriorsArgs),
    /// Fuse two prior volumes into one.
    Fuse(FuseArgs),
    /// Compare a predicted depth PNG against ground truth.
    Eval(EvalArgs),
    /// Print the fusion, regulariser and propagation ablation tables.
    Ablate(AblateArgs),
    /// Render a synthetic TUM-layout sequence with ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        self.load_onto(PipelineConfig::default())
    }

    fn load_onto(&self, mut config: PipelineConfig) -> Result<PipelineConfig> {
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
                _ => Error::Io(e),
            })?;
            config.apply_kv(&text)?;
        }
        for item in &self.overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    /// Sequence directory (rgb.txt, groundtruth.txt, optional depth.txt).
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for depth PNGs, cost traces and reports.
    #[arg(long, short)]
    out: PathBuf,
    /// Prior volume path template ({index}, {stem}).
    #[arg(long)]
    prior_file: Option<String>,
    /// Normal map path template ({index}, {stem}).
    #[arg(long)]
    normals_file: Option<String>,
    /// Boundary probability path template ({index}, {stem}).
    #[arg(long)]
    boundary_file: Option<String>,
    /// fused, network-only or photometric-only.
    #[arg(long)]
    mode: Option<String>,
    /// none, tv or normals.
    #[arg(long)]
    regularizer: Option<String>,
    #[arg(long, value_enum)]
    warp: Option<OnOff>,
    /// Cap on reference frames fused into each keyframe.
    #[arg(long)]
    max_refs: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct MakePriorsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    sigma_bins: f64,
    #[arg(long, default_value_t = 0.2)]
    floor: f64,
    #[arg(long, default_value_t = 0.3)]
    spurious: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write normals (.nrml) and boundary probabilities (.obnd).
    #[arg(long)]
    with_normals: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct FuseArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    pred: PathBuf,
    gt: PathBuf,
    #[arg(long)]
    csv: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TableChoice {
    Fusion,
    Regularizer,
    Warp,
    All,
}

#[derive(Args)]
struct AblateArgs {
    /// Sequence directory; omit to use the built-in synthetic scene.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    table: TableChoice,
    /// Write each table as CSV into this directory as well.
    #[arg(long)]
    csv_dir: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrajectoryChoice {
    Sweep,
    TwoKeyframe,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long, value_enum, default_value = "sweep")]
    trajectory: TrajectoryChoice,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

fn sequence_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn run(args: &RunArgs) -> Result<()> {
    let mut config = args.config.load()?;
    if let Some(t) = &args.prior_file {
        config.set("prior_file", t)?;
    }
    if let Some(t) = &args.normals_file {
        config.set("normals_file", t)?;
    }
    if let Some(t) = &args.boundary_file {
        config.set("boundary_file", t)?;
    }
    if let Some(m) = &args.mode {
        config.set("mode", m)?;
    }
    if let Some(r) = &args.regularizer {
        config.set("regularizer", r)?;
    }
    if let Some(w) = args.warp {
        config.warp = matches!(w, OnOff::On);
    }
    if let Some(n) = args.max_refs {
        config.max_refs = Some(n);
    }

    let source = TumSequence::open(&args.dataset, config.association_tolerance, config.width, config.height)?;
    let result = probfuse::run_frames(&source, &config)?;
    write_run_outputs(&args.out, &result, &sequence_name(&args.dataset))
}

fn write_run_outputs(out: &Path, result: &SequenceResult, sequence: &str) -> Result<()> {
    let depth_dir = out.join("depth");
    let trace_dir = out.join("trace");
    create_dir(&depth_dir)?;
    create_dir(&trace_dir)?;
    for kf in &result.keyframes {
        let clamped = export_depth_png(&kf.depth, depth_dir.join(format!("{}.png", kf.name)))?;
        if clamped > 0 {
            log::warn!("keyframe {}: {clamped} depths clamped to the PNG range", kf.name);
        }
        write_file(&trace_dir.join(format!("{}.txt", kf.name)), &kf.diagnostics.cost_trace_table())?;
    }
    let table = result.table("Per-keyframe results", sequence);
    write_file(&out.join("report.txt"), &table.to_text())?;
    write_file(&out.join("report.csv"), &table.to_csv())?;
    print!("{}", table.to_text());
    println!("keyframes: {}", result.keyframes.len());
    Ok(())
}

fn make_priors(args: &MakePriorsArgs) -> Result<()> {
    let mut config = args.config.load()?;
    let model = PriorModel {
        sigma_bins: args.sigma_bins,
        uniform_floor: args.floor,
        spurious_mode_prob: args.spurious,
        seed: args.seed,
        ..PriorModel::default()
    };
    config.prior = PriorSource::Synthetic(model.clone());
    let source = TumSequence::open(&args.dataset, config.association_tolerance, config.width, config.height)?;
    create_dir(&args.out)?;
    let mut written = 0;
    for index in 0..source.len() {
        let frame = source.frame(index)?;
        let Some(gt) = &frame.gt_depth else {
            continue;
        };
        let frame_model = PriorModel {
            seed: model.seed.wrapping_add(index as u64),
            ..model.clone()
        };
        let vol = synth_prior(gt, &frame_model, &config.binning)?;
        save_prior(&vol, args.out.join(format!("{}.pvol", frame.name)))?;
        if args.with_normals {
            save_normals(
                &normals_from_depth(gt, source.intrinsics()),
                args.out.join(format!("{}.nrml", frame.name)),
            )?;
            save_boundary(
                &boundary_prob_from_depth(gt, probfuse::pipeline::GT_BOUNDARY_JUMP),
                args.out.join(format!("{}.obnd", frame.name)),
            )?;
        }
        written += 1;
    }
    println!("wrote {written} prior volumes to {}", args.out.display());
    Ok(())
}

fn fuse(args: &FuseArgs) -> Result<()> {
    let fused = load_prior(&args.a)?.fuse(&load_prior(&args.b)?)?;
    save_prior(&fused, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let report = evaluate(&load_depth_png(&args.pred)?, &load_depth_png(&args.gt)?)?;
    if args.csv {
        println!("l1_rel,l2_rel,rmse,valid_pixels");
        println!(
            "{:.6},{:.6},{:.6},{}",
            report.l1_rel, report.l2_rel, report.rmse, report.valid_pixel_count
        );
    } else {
        println!(
            "l1_rel={:.6} l2_rel={:.6} rmse={:.6} valid_pixels={}",
            report.l1_rel, report.l2_rel, report.rmse, report.valid_pixel_count
        );
    }
    Ok(())
}

fn emit(table: &ReportTable, csv_dir: Option<&Path>, file: &str) -> Result<()> {
    println!("{}", table.to_text());
    if let Some(dir) = csv_dir {
        create_dir(dir)?;
        write_file(&dir.join(file), &table.to_csv())?;
    }
    Ok(())
}

fn ablate(args: &AblateArgs) -> Result<()> {
    let config = if args.dataset.is_some() {
        args.config.load()?
    } else {
        args.config.load_onto(PipelineConfig::synthetic())?
    };
    let csv_dir = args.csv_dir.as_deref();
    let wants = |t: TableChoice| args.table == t || args.table == TableChoice::All;

    if let Some(dir) = &args.dataset {
        let source = TumSequence::open(dir, config.association_tolerance, config.width, config.height)?;
        let name = sequence_name(dir);
        if wants(TableChoice::Fusion) {
            emit(&ablate_fusion(&source, &config, &name)?, csv_dir, "fusion.csv")?;
        }
        if wants(TableChoice::Regularizer) {
            emit(&ablate_regularizers(&source, &config, &name)?, csv_dir, "regularizer.csv")?;
        }
        if wants(TableChoice::Warp) {
            emit(&ablate_warp(&source, &config, &name)?, csv_dir, "warp.csv")?;
        }
        return Ok(());
    }

    let intrinsics = default_intrinsics();
    if intrinsics.dims() != (config.width, config.height) {
        return Err(Error::Config("the synthetic scene renders at 256x192".into()));
    }
    let scene = Scene::default();
    if wants(TableChoice::Fusion) || wants(TableChoice::Regularizer) {
        let frames = render_sequence(&scene, &Trajectory::sweep(10), &intrinsics);
        let source = InMemorySequence::from_rendered(&frames, &intrinsics);
        if wants(TableChoice::Fusion) {
            emit(&ablate_fusion(&source, &config, "synthetic")?, csv_dir, "fusion.csv")?;
        }
        if wants(TableChoice::Regularizer) {
            emit(&ablate_regularizers(&source, &config, "synthetic")?, csv_dir, "regularizer.csv")?;
        }
    }
    if wants(TableChoice::Warp) {
        let frames = render_sequence(&scene, &Trajectory::two_keyframe(20), &intrinsics);
        let source = InMemorySequence::from_rendered(&frames, &intrinsics);
        emit(&ablate_warp(&source, &config, "synthetic")?, csv_dir, "warp.csv")?;
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let intrinsics = default_intrinsics();
    let trajectory = match args.trajectory {
        TrajectoryChoice::Sweep => Trajectory::sweep(args.frames),
        TrajectoryChoice::TwoKeyframe => Trajectory::two_keyframe(args.frames),
    };
    let frames = render_sequence(&Scene::default(), &trajectory, &intrinsics);
    write_dataset(&args.out, &frames, &intrinsics)?;
    println!("wrote {} frames to {}", frames.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(a) => run(a),
        Command::MakePriors(a) => make_priors(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Synth(a) => synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}
