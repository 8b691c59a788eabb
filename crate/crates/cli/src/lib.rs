//! The `travmap` command line: one subcommand per pipeline stage, each
//! reading and writing inspectable files.

pub mod commands;
pub mod config;

use std::ops::Range;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use travmap_core::synth::Season;
use travmap_core::Error;

pub use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "travmap", version, about = "Self-supervised BEV traversability pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence (poses, scans, images, obstacle and ground-truth masks).
    Synth(SynthArgs),
    /// Accumulate scans into colored BEV grids.
    Bev(BevArgs),
    /// Label BEV cells from the driven trajectory and obstacle detections.
    Autolabel(AutolabelArgs),
    /// Train the feature model on labeled BEV frames.
    Train(TrainArgs),
    /// Run online inference over a sequence, emitting cost maps.
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Report per-stage inference latency percentiles.
    Bench(BenchArgs),
}

/// Half-open frame range written `start:end`; either side may be omitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameRange {
    pub start: Option<usize>,
    pub end: Option<usize>,
}

impl FrameRange {
    /// Resolves against `n` available frames.
    pub fn resolve(&self, n: usize) -> travmap_core::Result<Range<usize>> {
        let start = self.start.unwrap_or(0);
        let end = self.end.unwrap_or(n);
        if start >= end || end > n {
            return Err(Error::Config(format!("frame range {start}:{end} is empty or exceeds {n} frames")));
        }
        Ok(start..end)
    }
}

impl FromStr for FrameRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once(':').ok_or_else(|| format!("expected start:end, got {s:?}"))?;
        let side = |v: &str| -> Result<Option<usize>, String> {
            if v.is_empty() {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|e| format!("{v:?}: {e}"))
            }
        };
        Ok(Self {
            start: side(a)?,
            end: side(b)?,
        })
    }
}

fn parse_season(s: &str) -> Result<Season, String> {
    match s {
        "spring" => Ok(Season::Spring),
        "winter" => Ok(Season::Winter),
        _ => Err(format!("unknown season {s:?} (spring, winter)")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Pipeline config; its `scene` and `drive` sections are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output sequence directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene layout seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the scene season.
    #[arg(long, value_parser = parse_season)]
    pub season: Option<Season>,
    /// Overrides the drive duration to produce this many frames.
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BevArgs {
    /// Sequence directory with camera.json, grid.json, poses.csv, clouds/ and images/.
    #[arg(long)]
    pub data: PathBuf,
    /// Receives bev/ and occupancy/.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline config; its `bev` section is used, with the grid taken from grid.json.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AutolabelArgs {
    /// Sequence directory with grid.json, poses.csv and obstacles/.
    #[arg(long)]
    pub data: PathBuf,
    /// Receives labels/.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory holding occupancy/; obstacle detections on unobserved cells are dropped.
    #[arg(long)]
    pub bev: Option<PathBuf>,
    /// Pipeline config; its `autolabel` and `vehicle` sections are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Sequence directory; default root for --bev and --labels.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding bev/ and occupancy/.
    #[arg(long)]
    pub bev: Option<PathBuf>,
    /// Directory holding labels/.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Pipeline config; its `train` and `online` sections are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Receives model.ckpt, metrics.csv, config.json and queue.bin.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the training and initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frames to train on, `start:end`.
    #[arg(long, default_value = ":")]
    pub frames: FrameRange,
    /// Overrides the epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Prototype loss denominator over negatives only, without the positive term.
    #[arg(long)]
    pub literal_loss_variants: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    /// Sequence directory with poses.csv; default root for --bev.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding bev/ and occupancy/.
    #[arg(long)]
    pub bev: Option<PathBuf>,
    /// Model checkpoint from `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Receives costmaps/ and the final queue.bin.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline config; its `online` and `vehicle` sections are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the online sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Starts from this serialized queue and keeps updating it.
    #[arg(long, conflicts_with = "frozen_queue")]
    pub init_queue: Option<PathBuf>,
    /// Starts from this serialized queue and never updates it.
    #[arg(long)]
    pub frozen_queue: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredKind {
    /// costmaps/ from `infer`.
    Costmaps,
    /// labels/ from `autolabel`, traversable scored 1.
    Labels,
    /// gt/ from `synth`, traversable scored 1.
    Gt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GtKind {
    Gt,
    Labels,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory holding the predictions.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum, default_value_t = PredKind::Costmaps)]
    pub pred_kind: PredKind,
    /// Directory holding the ground truth.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = GtKind::Gt)]
    pub gt_kind: GtKind,
    /// Directory holding occupancy/; unobserved ground-truth cells are ignored.
    #[arg(long)]
    pub occupancy: Option<PathBuf>,
    /// Frames to score, `start:end`.
    #[arg(long, default_value = ":")]
    pub frames: FrameRange,
    /// Receives report.json and curves.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Model checkpoint from `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sequence directory with poses.csv; default root for --bev.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding bev/ and occupancy/.
    #[arg(long)]
    pub bev: Option<PathBuf>,
    /// Number of frames to time.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Prototypes placed in the queue before timing.
    #[arg(long, default_value_t = 64)]
    pub queue_fill: usize,
    /// Pipeline config; its `online` and `vehicle` sections are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Receives bench.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process exit status for each error category.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 3,
        Error::Io { .. } => 4,
        Error::Format { .. } => 5,
        Error::Sequence(_) => 6,
        Error::Checkpoint(_) => 7,
        Error::Clustering(_) => 8,
        Error::UndefinedMetric(_) => 9,
        Error::Divergence(_) => 10,
    }
}

pub fn run(cli: &Cli) -> travmap_core::Result<()> {
    match &cli.command {
        Command::Synth(a) => commands::synth(a).map(|_| ()),
        Command::Bev(a) => commands::bev(a).map(|_| ()),
        Command::Autolabel(a) => commands::autolabel(a).map(|_| ()),
        Command::Train(a) => commands::train(a).map(|_| ()),
        Command::Infer(a) => commands::infer(a).map(|_| ()),
        Command::Eval(a) => {
            let report = commands::eval(a)?;
            print!("{}", report.table());
            Ok(())
        }
        Command::Bench(a) => {
            let report = commands::bench(a)?;
            print!("{}", report.table());
            Ok(())
        }
    }
}
