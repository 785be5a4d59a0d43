mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use trajkit::fusion::FusionKind;

use crate::config::RunConfig;
use crate::error::CliError;

/// Open-vocabulary multi-object tracking with trajectory-level
/// classification.
#[derive(Debug, Parser)]
#[command(name = "trajkit", version)]
struct Cli {
    /// JSON run configuration (an echoed manifest.json also works).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving outputs and manifest.json.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Associate detections into tracks and classify each track.
    Track(TrackArgs),
    /// Classify existing tracks.
    Classify(ClassifyArgs),
    /// Score predicted tracks against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic scene.
    Synth(SynthArgs),
    /// Train the self-fusion block on synthetic pairs.
    Train(TrainArgs),
    /// Compare fusion mechanisms on a seeded scene suite.
    BenchFusion(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct TrackArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Fusion weight bundle (.twb); required unless fusion is average.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub fusion: Option<FusionKind>,
    #[arg(long)]
    pub n_bank: Option<usize>,
    #[arg(long)]
    pub score_scale: Option<f64>,
    /// Use the thresholds and score scale for RegionCLIP-style detectors.
    #[arg(long)]
    pub regionclip: bool,
    /// Also write the association event log to events.jsonl.
    #[arg(long)]
    pub events: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub fusion: Option<FusionKind>,
    #[arg(long)]
    pub score_scale: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Predicted tracks (JSONL).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth (JSONL).
    #[arg(long)]
    pub gt: PathBuf,
    /// Vocabulary providing the base/novel split.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub iou_threshold: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub identities: Option<usize>,
    #[arg(long)]
    pub frames: Option<u64>,
    #[arg(long)]
    pub categories: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub flip: Option<f64>,
    #[arg(long)]
    pub fp_rate: Option<f64>,
    #[arg(long)]
    pub miss_rate: Option<f64>,
    /// Store embeddings in a binary sidecar next to detections.jsonl.
    #[arg(long)]
    pub sidecar: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub pairs: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Weight bundle shared by all mechanisms; seeded weights otherwise.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut run = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        run.seed = s;
    }
    if let Some(t) = cli.threads {
        run.threads = t;
    }
    run.propagate_seed();
    match &cli.command {
        Command::Track(a) => {
            if a.regionclip {
                run.tracker = trajkit::tcr::TrackerConfig {
                    n_bank: run.tracker.n_bank,
                    ..trajkit::tcr::TrackerConfig::regionclip()
                };
                run.score_scale = 0.1;
            }
            if let Some(f) = a.fusion {
                run.classify.fusion = f;
            }
            if let Some(n) = a.n_bank {
                run.tracker.n_bank = n;
            }
            if let Some(s) = a.score_scale {
                run.score_scale = s;
            }
        }
        Command::Classify(a) => {
            if let Some(f) = a.fusion {
                run.classify.fusion = f;
            }
            if let Some(s) = a.score_scale {
                run.score_scale = s;
            }
        }
        Command::Eval(a) => {
            if let Some(t) = a.iou_threshold {
                run.eval.iou_threshold = t;
            }
        }
        Command::Synth(a) => {
            let s = &mut run.synth;
            s.n_identities = a.identities.unwrap_or(s.n_identities);
            s.n_frames = a.frames.unwrap_or(s.n_frames);
            s.n_categories = a.categories.unwrap_or(s.n_categories);
            s.n_novel = s.n_novel.min(s.n_categories);
            s.embed_dim = a.dim.unwrap_or(s.embed_dim);
            s.noise_sigma = a.sigma.unwrap_or(s.noise_sigma);
            s.label_flip_prob = a.flip.unwrap_or(s.label_flip_prob);
            s.fp_rate = a.fp_rate.unwrap_or(s.fp_rate);
            s.miss_rate = a.miss_rate.unwrap_or(s.miss_rate);
        }
        Command::Train(a) => {
            let t = &mut run.train;
            t.optimizer.steps = a.steps.unwrap_or(t.optimizer.steps);
            t.optimizer.learning_rate = a.lr.unwrap_or(t.optimizer.learning_rate);
            t.n_pairs = a.pairs.unwrap_or(t.n_pairs);
            t.optimizer.d = run.synth.embed_dim;
        }
        Command::BenchFusion(a) => {
            run.bench.scenes = a.scenes.unwrap_or(run.bench.scenes);
        }
    }
    Ok(run)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let run = resolve(cli)?;
    if run.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(run.threads)
            .build_global()
            .map_err(|e| CliError::new("ThreadPool", e.to_string()))?;
    }
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| CliError::new("Io", format!("{}: {e}", cli.out_dir.display())))?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Track(a) => commands::track(&run, a, out),
        Command::Classify(a) => commands::classify(&run, a, out),
        Command::Eval(a) => commands::eval(&run, a, out),
        Command::Synth(a) => commands::synth(&run, a, out),
        Command::Train(a) => commands::train(&run, a, out),
        Command::BenchFusion(a) => commands::bench_fusion(&run, a, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e).unwrap_or_else(|_| e.to_string()));
            ExitCode::from(1)
        }
    }
}
