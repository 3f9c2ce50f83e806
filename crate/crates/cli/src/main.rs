mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Slow feature analysis for visual self-localization: data collection,
/// feature extraction, representation analysis and navigation agents.
#[derive(Debug, Parser)]
#[command(name = "slownav", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root directory for default output paths.
    #[arg(long, global = true, env = "SLOWNAV_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct LayoutArgs {
    /// starmaze-arm, starmaze-random, wallgap or fourrooms.
    #[arg(long)]
    pub layout: Option<String>,
    /// Layout config file in `key = value` form; overrides --layout.
    #[arg(long)]
    pub layout_file: Option<PathBuf>,
    /// Episode step limit.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_steps: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record a random-policy walk to a `.tsd` dataset.
    Collect(CollectArgs),
    /// Fit a hierarchical SFA network on a dataset.
    FitSfa(FitSfaArgs),
    /// Fit the PCA baseline extractor on a dataset.
    FitPca(FitPcaArgs),
    /// Feature maps, heading and location decoding on a dataset.
    Analyze(AnalyzeArgs),
    /// Train PPO agents on extracted features.
    Train(TrainArgs),
    /// Evaluate a trained agent or the random baseline.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[command(flatten)]
    pub layout: LayoutArgs,
    /// Number of frames to record.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: Option<u64>,
    /// Respawn every this many steps (default: the layout's step limit).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub reset_every: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Leave the target out of the scene.
    #[arg(long)]
    pub empty: bool,
    /// Output file (default: <out>/<layout>-<steps>-s<seed>.tsd).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitSfaArgs {
    /// Training dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-action weights for the difference covariance, e.g.
    /// `left=4,right=4,forward=1`.
    #[arg(long)]
    pub lra: Option<String>,
    /// Keep differences across episode resets.
    #[arg(long)]
    pub keep_boundaries: bool,
    /// Output file (default: <out>/<dataset stem>.hsfa).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitPcaArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub components: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (default: <out>/<dataset stem>.pca).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// `.hsfa` or `.pca` model.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset to analyze, usually a fresh walk.
    #[arg(long)]
    pub data: PathBuf,
    /// Layout config used for map bounds when the dataset came from one.
    #[arg(long)]
    pub layout_file: Option<PathBuf>,
    /// Feature indices to map, e.g. `0..5` (inclusive) or `0,3,4`.
    #[arg(long, default_value = "0..5")]
    pub feature: String,
    /// Also draw maps restricted to this many heading sections.
    #[arg(long)]
    pub sections: Option<usize>,
    /// Decode heading and write the true/predicted pairs.
    #[arg(long)]
    pub heading: bool,
    /// Decode position and report the error.
    #[arg(long)]
    pub location: bool,
    /// Side length of the map images in pixels.
    #[arg(long, default_value_t = 160)]
    pub size: usize,
    /// Output directory (default: <out>/analysis).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractorKind {
    Hsfa,
    Pca,
    Identity,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[arg(long, value_enum, default_value_t = ExtractorKind::Hsfa)]
    pub extractor: ExtractorKind,
    /// Extractor model file (not needed for `identity`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Environment steps per agent.
    #[arg(long, value_parser = clap::value_parser!(u64).range(0..))]
    pub steps: Option<u64>,
    /// Number of agents, seeded consecutively from --seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluation episodes per trained agent; 0 reports the last training
    /// episodes instead.
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    /// Output directory (default: <out>/train-<layout>-<extractor>).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Random,
    Agent,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[arg(long, value_enum, default_value_t = PolicyKind::Random)]
    pub policy: PolicyKind,
    /// Agent checkpoint (`--policy agent`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ExtractorKind::Hsfa)]
    pub extractor: ExtractorKind,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub episodes: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Take the most probable action instead of sampling.
    #[arg(long)]
    pub greedy: bool,
    /// Per-episode lengths as CSV.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
