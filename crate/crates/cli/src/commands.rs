use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use procalloc::dqn::{self, evaluate, load_policy_network, DqnConfig, Policy, TrainingRun};
use procalloc::process_model::{load_suite, paper_suite_json};
use procalloc::{BusinessProcessSuite, Engine, EngineConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{Cli, Command, CommonArgs, CompareArgs, EvalArgs, TrainArgs};
use crate::manifest::{git_blob_sha256, RunManifest};
use crate::stats::{mean, median};
use crate::CliError;

const DEFAULT_EVAL_EPISODES: usize = 100;
const DEFAULT_EVAL_STEPS: usize = 400;
const DEFAULT_COMPARE_STEPS: usize = 5000;

pub const TRAIN_CSV: &str = "train.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const COMPARE_CSV: &str = "compare.csv";

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    engine: EngineConfig,
    dqn: DqnConfig,
}

struct Resolved {
    suite: BusinessProcessSuite,
    suite_path: String,
    suite_hash: String,
    engine: EngineConfig,
    dqn: DqnConfig,
}

impl Resolved {
    fn config_json(&self) -> serde_json::Value {
        json!({ "engine": self.engine, "dqn": self.dqn })
    }

    fn manifest(&self, command: &str, seed: u64, outputs: Vec<String>, summary: serde_json::Value, started: Instant) -> RunManifest {
        RunManifest {
            command: command.into(),
            config: self.config_json(),
            seed,
            suite_path: self.suite_path.clone(),
            suite_sha256: self.suite_hash.clone(),
            outputs,
            summary,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        }
    }
}

/// Loads the suite and merges defaults, the config file and flags, in that order.
fn resolve(common: &CommonArgs) -> Result<Resolved, CliError> {
    let (text, suite_path) = match &common.suite {
        Some(p) => (
            fs::read_to_string(p)
                .map_err(|e| CliError::Input(format!("cannot read suite file {}: {e}", p.display())))?,
            p.display().to_string(),
        ),
        None => (paper_suite_json().to_string(), "<bundled paper_suite.json>".to_string()),
    };
    let suite = load_suite(&text).map_err(|e| CliError::Input(format!("{suite_path}: {e}")))?;

    let file = match &common.config {
        Some(p) => {
            let raw = fs::read_to_string(p)
                .map_err(|e| CliError::Input(format!("cannot read config file {}: {e}", p.display())))?;
            serde_json::from_str::<ConfigFile>(&raw)
                .map_err(|e| CliError::Input(format!("config file {}: {e}", p.display())))?
        }
        None => ConfigFile::default(),
    };
    let mut engine = file.engine;
    let mut dqn = file.dqn;
    if let Some(p) = common.arrival_prob {
        engine.arrival_probability = p;
    }
    if let Some(c) = common.cap {
        engine.enabled_duration_cap = c;
    }
    if let Some(e) = common.encoding {
        engine.encoding = e;
    }
    engine.seed = common.seed;
    dqn.seed = common.seed;
    if let Some(e) = common.episodes {
        dqn.episodes = e;
    }
    if let Some(s) = common.steps {
        dqn.steps_per_episode = s;
    }
    engine.validate().map_err(input_err)?;

    Ok(Resolved {
        suite_hash: git_blob_sha256(text.as_bytes()),
        suite,
        suite_path,
        engine,
        dqn,
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("cannot write {}: {e}", path.display()))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_training_csv(path: &Path, run: &TrainingRun) -> Result<(), CliError> {
    let rows = run
        .episode_rewards
        .iter()
        .zip(&run.mean_losses)
        .zip(&run.epsilon_end)
        .enumerate()
        .map(|(e, ((r, l), eps))| {
            vec![
                e.to_string(),
                r.to_string(),
                l.map(|v| v.to_string()).unwrap_or_default(),
                eps.to_string(),
            ]
        });
    write_csv(path, &["episode", "cum_reward", "mean_loss", "epsilon_end"], rows)
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// One finished training run as seen by the harness.
#[derive(Clone, Debug, Serialize)]
pub struct TrainedRun {
    pub dir: PathBuf,
    pub seed: u64,
    pub episodes_completed: usize,
    pub best_reward: f64,
    pub best_episode: Option<usize>,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub runs: Vec<TrainedRun>,
}

fn train_one(resolved: &Resolved, dir: &Path, seed: u64) -> Result<TrainedRun, CliError> {
    let started = Instant::now();
    create_dir(dir)?;
    let mut dqn_cfg = resolved.dqn.clone();
    dqn_cfg.seed = seed;
    let mut engine_cfg = resolved.engine.clone();
    engine_cfg.seed = seed;
    let run = dqn::train(&resolved.suite, &engine_cfg, &dqn_cfg, Some(dir)).map_err(input_err)?;

    let csv_path = dir.join(TRAIN_CSV);
    write_training_csv(&csv_path, &run)?;
    let mut outputs = vec![display(&csv_path)];
    outputs.extend(run.best_checkpoint.iter().map(|p| display(p)));
    outputs.extend(run.last_checkpoint.iter().map(|p| display(p)));

    let report = TrainedRun {
        dir: dir.to_path_buf(),
        seed,
        episodes_completed: run.episode_rewards.len(),
        best_reward: run.best_reward,
        best_episode: run.best_episode,
        best_checkpoint: run.best_checkpoint.clone(),
        last_checkpoint: run.last_checkpoint.clone(),
        failure: run.failure.clone(),
    };
    let summary = json!({
        "episodes_completed": report.episodes_completed,
        "best_reward": report.best_reward,
        "best_episode": report.best_episode,
        "median_reward": median(&run.episode_rewards),
        "failure": report.failure,
    });
    resolved
        .manifest("train", seed, outputs, summary, started)
        .write_atomic(dir)
        .map_err(|e| io_err(dir, e))?;
    Ok(report)
}

/// Trains `--runs` agents. A single run writes straight into `--out`; several
/// runs go to `run_000`, `run_001`, ... with consecutive seeds.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainReport, CliError> {
    let started = Instant::now();
    if args.runs == 0 {
        return Err(CliError::Input("--runs must be at least 1".into()));
    }
    let resolved = resolve(&args.common)?;
    resolved.dqn.validate().map_err(input_err)?;
    let out = &args.common.out;
    create_dir(out)?;
    let base = args.common.seed;

    let runs: Vec<TrainedRun> = if args.runs == 1 {
        vec![train_one(&resolved, out, base)?]
    } else {
        let results: Vec<Result<TrainedRun, CliError>> = (0..args.runs)
            .into_par_iter()
            .map(|i| train_one(&resolved, &out.join(format!("run_{i:03}")), base + i as u64))
            .collect();
        let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        let outputs = runs.iter().map(|r| display(&r.dir.join(crate::MANIFEST_FILE))).collect();
        let summary = serde_json::to_value(&runs).expect("serializable");
        resolved
            .manifest("train", base, outputs, summary, started)
            .write_atomic(out)
            .map_err(|e| io_err(out, e))?;
        runs
    };

    if let Some(r) = runs.iter().find(|r| r.failure.is_some()) {
        return Err(CliError::Diverged(format!(
            "{} (seed {}): {}",
            r.dir.display(),
            r.seed,
            r.failure.as_deref().unwrap_or_default()
        )));
    }
    Ok(TrainReport { runs })
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub policy: String,
    pub rewards: Vec<f64>,
    pub csv: PathBuf,
}

impl EvalReport {
    pub fn median(&self) -> f64 {
        median(&self.rewards)
    }

    pub fn mean(&self) -> f64 {
        mean(&self.rewards)
    }
}

fn episodes_and_steps(common: &CommonArgs, default_steps: usize) -> (usize, usize) {
    (
        common.episodes.unwrap_or(DEFAULT_EVAL_EPISODES),
        common.steps.unwrap_or(default_steps),
    )
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport, CliError> {
    let started = Instant::now();
    let resolved = resolve(&args.common)?;
    let (episodes, steps) = episodes_and_steps(&args.common, DEFAULT_EVAL_STEPS);
    let engine = Engine::new(resolved.suite.clone(), resolved.engine.clone()).map_err(input_err)?;

    let name = args.policy.to_ascii_lowercase();
    let network;
    let policy = match name.as_str() {
        "fifo" => Policy::Fifo,
        "spt" => Policy::Spt,
        "random" => Policy::Random,
        "dqn" | "checkpoint" => {
            let path = args
                .weights
                .as_ref()
                .ok_or_else(|| CliError::Input("--policy dqn needs --weights".into()))?;
            network = load_policy_network(path, &engine).map_err(input_err)?;
            Policy::Greedy(&network)
        }
        other => {
            return Err(CliError::Input(format!(
                "unknown policy {other:?}; expected fifo, spt, random or dqn"
            )))
        }
    };
    let rewards = evaluate(policy, &resolved.suite, &resolved.engine, episodes, steps).map_err(input_err)?;

    create_dir(&args.common.out)?;
    let csv_path = args.common.out.join(EVAL_CSV);
    write_csv(
        &csv_path,
        &["episode", "cum_reward"],
        rewards.iter().enumerate().map(|(e, r)| vec![e.to_string(), r.to_string()]),
    )?;
    let report = EvalReport {
        policy: name,
        rewards,
        csv: csv_path,
    };
    println!(
        "{}: {} episodes x {} steps, median {} mean {:.3}",
        report.policy,
        episodes,
        steps,
        report.median(),
        report.mean()
    );
    let summary = json!({
        "policy": report.policy,
        "weights": args.weights.as_deref().map(display),
        "episodes": episodes,
        "steps": steps,
        "median": report.median(),
        "mean": report.mean(),
    });
    resolved
        .manifest("eval", args.common.seed, vec![display(&report.csv)], summary, started)
        .write_atomic(&args.common.out)
        .map_err(|e| io_err(&args.common.out, e))?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct CompareReport {
    pub dqn: Vec<f64>,
    pub fifo: Vec<f64>,
    pub spt: Vec<f64>,
    pub csv: PathBuf,
}

impl CompareReport {
    /// `(name, median, mean)` per policy.
    pub fn summary(&self) -> [(&'static str, f64, f64); 3] {
        [
            ("dqn", median(&self.dqn), mean(&self.dqn)),
            ("fifo", median(&self.fifo), mean(&self.fifo)),
            ("spt", median(&self.spt), mean(&self.spt)),
        ]
    }
}

/// Runs the checkpoint, FIFO and SPT over the same episode seeds.
pub fn cmd_compare(args: &CompareArgs) -> Result<CompareReport, CliError> {
    let started = Instant::now();
    let resolved = resolve(&args.common)?;
    let (episodes, steps) = episodes_and_steps(&args.common, DEFAULT_COMPARE_STEPS);
    let engine = Engine::new(resolved.suite.clone(), resolved.engine.clone()).map_err(input_err)?;
    let network = load_policy_network(&args.weights, &engine).map_err(input_err)?;

    let run = |p: Policy<'_>| evaluate(p, &resolved.suite, &resolved.engine, episodes, steps).map_err(input_err);
    let dqn = run(Policy::Greedy(&network))?;
    let fifo = run(Policy::Fifo)?;
    let spt = run(Policy::Spt)?;

    create_dir(&args.common.out)?;
    let csv_path = args.common.out.join(COMPARE_CSV);
    write_csv(
        &csv_path,
        &["episode", "dqn", "fifo", "spt"],
        (0..episodes).map(|e| {
            vec![
                e.to_string(),
                dqn[e].to_string(),
                fifo[e].to_string(),
                spt[e].to_string(),
            ]
        }),
    )?;
    let report = CompareReport {
        dqn,
        fifo,
        spt,
        csv: csv_path,
    };

    println!("{episodes} episodes x {steps} steps");
    println!("{:<6} {:>10} {:>10}", "policy", "median", "mean");
    let mut summary = serde_json::Map::new();
    for (name, med, avg) in report.summary() {
        println!("{name:<6} {med:>10} {avg:>10.3}");
        summary.insert(name.into(), json!({ "median": med, "mean": avg }));
    }
    summary.insert("weights".into(), json!(display(&args.weights)));
    summary.insert("episodes".into(), json!(episodes));
    summary.insert("steps".into(), json!(steps));
    resolved
        .manifest("compare", args.common.seed, vec![display(&report.csv)], summary.into(), started)
        .write_atomic(&args.common.out)
        .map_err(|e| io_err(&args.common.out, e))?;
    Ok(report)
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(a) => {
            let report = cmd_train(a)?;
            for r in &report.runs {
                println!(
                    "{}: seed {}, best episode reward {} (episode {})",
                    r.dir.display(),
                    r.seed,
                    r.best_reward,
                    r.best_episode.map_or("-".into(), |e| e.to_string())
                );
            }
        }
        Command::Eval(a) => {
            cmd_eval(a)?;
        }
        Command::Compare(a) => {
            cmd_compare(a)?;
        }
    }
    Ok(())
}
