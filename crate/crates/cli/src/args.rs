use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use procalloc::Encoding;

#[derive(Debug, Parser)]
#[command(name = "procalloc", version, about = "Train and compare resource-allocation policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train Double DQN agents and write logs and checkpoints.
    Train(TrainArgs),
    /// Run one policy and write per-episode rewards.
    Eval(EvalArgs),
    /// Run a checkpoint, FIFO and SPT on identical episode seeds.
    Compare(CompareArgs),
}

#[derive(Clone, Debug, Args)]
pub struct CommonArgs {
    /// Suite JSON file. The bundled suite is used when omitted.
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long = "arrival-prob")]
    pub arrival_prob: Option<f64>,
    /// Cap on summed mean durations of waiting tasks.
    #[arg(long)]
    pub cap: Option<f64>,
    #[arg(long)]
    pub encoding: Option<Encoding>,
    /// JSON file with optional `engine` and `dqn` sections; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Independent runs, each in `run_NNN` with seed `seed + N`.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// fifo, spt, random, or dqn (alias checkpoint) with --weights.
    #[arg(long)]
    pub policy: String,
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub weights: PathBuf,
}

impl CommonArgs {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            suite: None,
            out: out.into(),
            seed: 0,
            episodes: None,
            steps: None,
            arrival_prob: None,
            cap: None,
            encoding: None,
            config: None,
        }
    }
}
