use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vslam::config::{load_config, BackendKind, RunConfig, SensorMode};
use vslam::dataset::{read_dataset, Layout};
use vslam::evaluation::{
    associate, align, ate_rmse, rpe, write_error_csv, AlignMode, RpeDelta, TrajectoryEstimate, DEFAULT_MAX_DT,
};
use vslam::pipeline::{prepare_vocabulary, run_slam, PipelineParams};
use vslam::simworld::{export_scene, generate_scene, Challenge, ChallengeKind, SceneSpec, TrajectoryKind};

#[derive(Parser)]
#[command(name = "vslam", version, about = "Feature-based visual SLAM with learned features")]
struct Cli {
    /// Log more (repeat for debug and trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run SLAM on a dataset and write trajectory, map and report.
    Run(RunArgs),
    /// Generate a synthetic scene and export it as a dataset.
    Simulate(SimulateArgs),
    /// Train a vocabulary tree on a dataset's descriptors.
    TrainVocab(TrainArgs),
    /// ATE and RPE between an estimated and a reference trajectory.
    Eval(EvalArgs),
    /// Per-frame position errors as CSV.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Euroc,
    Tumvi,
    Synthetic,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Euroc => Layout::Euroc,
            LayoutArg::Tumvi => Layout::Tumvi,
            LayoutArg::Synthetic => Layout::Synthetic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mono,
    Stereo,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Synthetic,
    Neural,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Ablation {
    Mt,
    Lm,
    Lc,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlignArg {
    None,
    Se3,
    Sim3,
}

impl From<AlignArg> for AlignMode {
    fn from(a: AlignArg) -> Self {
        match a {
            AlignArg::None => AlignMode::None,
            AlignArg::Se3 => AlignMode::Se3,
            AlignArg::Sim3 => AlignMode::Sim3,
        }
    }
}

/// Dataset selection and configuration overrides shared by `run` and `train-vocab`.
#[derive(Args)]
struct DatasetArgs {
    /// Run configuration file; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root directory.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "euroc")]
    layout: LayoutArg,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Vocabulary file; trained on the sequence itself when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run all stages round-robin on one thread.
    #[arg(long)]
    deterministic: bool,
    /// Components to disable.
    #[arg(long, value_enum, value_delimiter = ',')]
    ablate: Vec<Ablation>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneArg {
    Circle,
    Line,
    SquareLoop,
    ShakeOverlay,
}

#[derive(Args)]
struct SimulateArgs {
    /// Output dataset root.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene description (TOML); flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    scene: Option<SceneArg>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    landmarks: Option<usize>,
    #[arg(long)]
    laps: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    /// Right camera baseline in metres; renders a stereo pair when positive.
    #[arg(long)]
    baseline: Option<f64>,
    #[arg(long)]
    pixel_sigma: Option<f64>,
    #[arg(long)]
    outlier_rate: Option<f64>,
    /// Scripted disturbance `kind:start:end` with kind lowlight, shake or weak-texture.
    #[arg(long = "challenge", value_parser = parse_challenge)]
    challenges: Vec<Challenge>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Vocabulary output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum, default_value = "sim3")]
    align: AlignArg,
    /// Association tolerance in seconds.
    #[arg(long, default_value_t = DEFAULT_MAX_DT)]
    max_dt: f64,
    /// RPE step in frames.
    #[arg(long, default_value_t = 1)]
    delta: usize,
    /// Estimated trajectory (timestamp tx ty tz qx qy qz qw).
    estimate: PathBuf,
    /// Reference trajectory, same format or EuRoC ground-truth CSV.
    reference: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, value_enum, default_value = "sim3")]
    align: AlignArg,
    #[arg(long, default_value_t = DEFAULT_MAX_DT)]
    max_dt: f64,
    /// CSV output; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    estimate: PathBuf,
    reference: PathBuf,
}

fn parse_challenge(s: &str) -> Result<Challenge, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [kind, start, end] = parts[..] else {
        return Err(format!("expected kind:start:end, got {s:?}"));
    };
    let kind = match kind {
        "lowlight" => ChallengeKind::Lowlight,
        "shake" => ChallengeKind::Shake,
        "weak-texture" => ChallengeKind::WeakTexture,
        other => return Err(format!("unknown challenge {other:?}")),
    };
    let start = start.parse().map_err(|e| format!("start {start:?}: {e}"))?;
    let end = end.parse().map_err(|e| format!("end {end:?}: {e}"))?;
    Ok(Challenge { kind, start, end })
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn base_config(args: &DatasetArgs) -> Result<RunConfig, Box<dyn std::error::Error>> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(b) = args.backend {
        config.backend.kind = match b {
            BackendArg::Synthetic => BackendKind::Synthetic,
            BackendArg::Neural => BackendKind::Neural,
        };
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(args: RunArgs) -> CliResult {
    let mut config = base_config(&args.data)?;
    if let Some(m) = args.mode {
        config.mode = match m {
            ModeArg::Mono => SensorMode::Mono,
            ModeArg::Stereo => SensorMode::Stereo,
        };
    }
    if args.vocab.is_some() {
        config.loop_closure.vocabulary = args.vocab;
    }
    config.deterministic |= args.deterministic;
    config.ablation.mt |= args.ablate.contains(&Ablation::Mt);
    config.ablation.lm |= args.ablate.contains(&Ablation::Lm);
    config.ablation.lc |= args.ablate.contains(&Ablation::Lc);
    config.validate()?;

    let reader = read_dataset(&args.data.dataset, args.data.layout.into())?;
    log::info!("{} frames from {}", reader.len(), args.data.dataset.display());
    let output = run_slam(&config, &reader)?;
    output.write_to(&args.out)?;
    let r = &output.report;
    println!("frames {}", r.frames.len());
    println!("frames.tracked {}", r.tracked_frames());
    println!("keyframes.final {}", r.keyframes);
    println!("map_points {}", r.map_points);
    println!("loops.accepted {}", r.accepted_loops());
    if let Some(ate) = r.ate {
        println!("ate_rmse {ate}");
    }
    println!("output {}", args.out.display());
    Ok(())
}

fn simulate(args: SimulateArgs) -> CliResult {
    let mut spec = match &args.spec {
        Some(path) => toml::from_str(&fs::read_to_string(path)?)?,
        None => SceneSpec::default(),
    };
    if let Some(s) = args.scene {
        spec.trajectory = match s {
            SceneArg::Circle => TrajectoryKind::Circle,
            SceneArg::Line => TrajectoryKind::Line,
            SceneArg::SquareLoop => TrajectoryKind::SquareLoop,
            SceneArg::ShakeOverlay => TrajectoryKind::ShakeOverlay,
        };
    }
    spec.frames = args.frames.unwrap_or(spec.frames);
    spec.landmarks = args.landmarks.unwrap_or(spec.landmarks);
    spec.laps = args.laps.unwrap_or(spec.laps);
    spec.radius = args.radius.unwrap_or(spec.radius);
    spec.stereo_baseline = args.baseline.unwrap_or(spec.stereo_baseline);
    spec.noise.pixel_sigma = args.pixel_sigma.unwrap_or(spec.noise.pixel_sigma);
    spec.noise.outlier_rate = args.outlier_rate.unwrap_or(spec.noise.outlier_rate);
    for c in args.challenges {
        spec.script_challenge(c.kind, c.start, c.end)?;
    }
    let scene = generate_scene(&spec, args.seed)?;
    export_scene(&scene, &args.out)?;
    println!("frames {}", scene.spec.frames);
    println!("landmarks {}", scene.landmarks.len());
    println!("output {}", args.out.display());
    Ok(())
}

fn train_vocab(args: TrainArgs) -> CliResult {
    let mut config = base_config(&args.data)?;
    config.loop_closure.vocabulary = None;
    config.validate()?;
    let reader = read_dataset(&args.data.dataset, args.data.layout.into())?;
    let params = PipelineParams::resolve(&config, &reader)?;
    let tree = prepare_vocabulary(&config, &reader, &params)?;
    let mut out = BufWriter::new(fs::File::create(&args.out)?);
    tree.write(&mut out)?;
    out.flush()?;
    println!("words {}", tree.word_count());
    println!("output {}", args.out.display());
    Ok(())
}

/// Reads a trajectory file, accepting EuRoC ground-truth CSV as well.
fn read_trajectory(path: &Path) -> Result<TrajectoryEstimate, Box<dyn std::error::Error>> {
    let mut input = BufReader::new(fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?);
    let csv = {
        let head = input.fill_buf()?;
        let line = head.split(|&b| b == b'\n').find(|l| !l.starts_with(b"#") && !l.is_empty()).unwrap_or(&[]);
        line.contains(&b',')
    };
    let trajectory = if csv { TrajectoryEstimate::read_euroc_csv(input) } else { TrajectoryEstimate::read(input) };
    Ok(trajectory.map_err(|e| format!("{}: {e}", path.display()))?)
}

fn eval(args: EvalArgs) -> CliResult {
    let est = read_trajectory(&args.estimate)?;
    let gt = read_trajectory(&args.reference)?;
    let pairs = associate(&est, &gt, args.max_dt)?;
    let (transform, aligned) = align(&pairs, args.align.into())?;
    println!("pairs {}", aligned.len());
    println!("alignment.scale {}", transform.scale);
    println!("ate_rmse {}", ate_rmse(&aligned));
    if aligned.len() > args.delta {
        let r = rpe(&aligned, RpeDelta::Frames(args.delta))?;
        println!("rpe.translation_rmse {}", r.translation.rmse);
        println!("rpe.rotation_rmse_deg {}", r.rotation.rmse.to_degrees());
    }
    Ok(())
}

fn report(args: ReportArgs) -> CliResult {
    let est = read_trajectory(&args.estimate)?;
    let gt = read_trajectory(&args.reference)?;
    let pairs = associate(&est, &gt, args.max_dt)?;
    let (_, aligned) = align(&pairs, args.align.into())?;
    match &args.out {
        Some(path) => {
            let mut out = BufWriter::new(fs::File::create(path)?);
            write_error_csv(&aligned, &mut out)?;
            out.flush()?;
        }
        None => write_error_csv(&aligned, io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Simulate(a) => simulate(a),
        Command::TrainVocab(a) => train_vocab(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
