//! Double DQN training and greedy evaluation.
//!
//! The online network picks the bootstrap action and the target network
//! scores it. Episodes are truncations of a continuing process, so targets
//! never mask terminal transitions.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{fifo_action, spt_action};
use crate::neural::{
    argmax, load_params, save_params, train_step, Adam, AdamConfig, Matrix, NetworkParams,
    NeuralError, Scalar,
};
use crate::process_model::BusinessProcessSuite;
use crate::sim_engine::{Engine, EngineConfig, EngineError};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

const TRAIN_SEEDS: u64 = 0x7472_6169_6e00_0000;
const EVAL_SEEDS: u64 = 0x6576_616c_0000_0000;
const RANDOM_POLICY_SEEDS: u64 = 0x7261_6e64_0000_0000;

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("checkpoint does not fit this engine: {0}")]
    IncompatibleCheckpoint(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub batch_size: usize,
    /// 0.9 by default. Near 1 the value gap between a valid assignment and
    /// an invalid one (which leaves the state unchanged) shrinks to `(1 - d) V`
    /// and drowns in approximation error, so greedy policies stall.
    pub discount: f64,
    pub target_sync_period: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            episodes: 600,
            steps_per_episode: 400,
            batch_size: 32,
            discount: 0.9,
            target_sync_period: 10_000,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            hidden_sizes: vec![32, 32],
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |m: String| Err(DqnError::Config(m));
        if self.episodes == 0 || self.batch_size == 0 || self.target_sync_period == 0 {
            return bad("episodes, batch size and sync period must be positive".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size {} below 2; batch norm needs two rows", self.batch_size));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad(format!("discount {} outside [0, 1]", self.discount));
        }
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !eps_ok(self.epsilon_start) || !eps_ok(self.epsilon_end) || self.epsilon_end > self.epsilon_start {
            return bad(format!(
                "epsilon schedule {} -> {} must satisfy 0 <= end <= start <= 1",
                self.epsilon_start, self.epsilon_end
            ));
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }

    /// `floor(E * M * 0.1)`, used both as replay capacity and anneal horizon.
    pub fn tenth_of_total_steps(&self) -> usize {
        self.episodes * self.steps_per_episode / 10
    }

    pub fn replay_capacity(&self) -> usize {
        self.tenth_of_total_steps()
    }
}

/// Exploration rate at a global step: linear from start to end over
/// `floor(E * M * 0.1)` steps, then flat.
pub fn epsilon_at(step: u64, config: &DqnConfig) -> f64 {
    let horizon = config.tenth_of_total_steps() as u64;
    if horizon == 0 || step >= horizon {
        return config.epsilon_end;
    }
    let t = step as f64 / horizon as f64;
    config.epsilon_start * (1.0 - t) + config.epsilon_end * t
}

#[derive(Clone, Debug, PartialEq)]
pub struct Experience<F = f32> {
    pub state: Vec<F>,
    pub action: usize,
    pub reward: F,
    pub next_state: Vec<F>,
}

/// Bounded FIFO store; pushing into a full memory drops the oldest entry.
#[derive(Clone, Debug)]
pub struct ReplayMemory<F = f32> {
    capacity: usize,
    items: VecDeque<Experience<F>>,
}

impl<F: Scalar> ReplayMemory<F> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, experience: Experience<F>) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(experience);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience<F>> {
        self.items.iter()
    }

    /// `count` distinct entries chosen uniformly; `None` if fewer are stored.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Option<Vec<&Experience<F>>> {
        if count > self.items.len() {
            return None;
        }
        Some(
            sample(rng, self.items.len(), count)
                .into_iter()
                .map(|i| &self.items[i])
                .collect(),
        )
    }
}

/// Epsilon-greedy choice. One uniform draw decides between exploring and
/// exploiting; exploring draws a second, uniform over all actions.
pub fn select_action<F: Scalar, R: Rng + ?Sized>(
    params: &NetworkParams<F>,
    state: &[F],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, NeuralError> {
    if rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..params.output_width()));
    }
    Ok(argmax(&params.predict_one(state)?))
}

/// `R + discount * Q(S', argmax_a Q(S', a; online); target)` per row, both
/// networks in eval mode.
pub fn compute_targets<F: Scalar>(
    batch: &[&Experience<F>],
    online: &NetworkParams<F>,
    target: &NetworkParams<F>,
    discount: F,
) -> Result<Vec<F>, NeuralError> {
    let next: Vec<&[F]> = batch.iter().map(|e| e.next_state.as_slice()).collect();
    let next = Matrix::from_rows(&next)?;
    let q_online = online.predict(&next)?;
    let q_target = target.predict(&next)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(b, e)| e.reward + discount * q_target.row(b)[argmax(q_online.row(b))])
        .collect())
}

/// Seed of the `index`-th episode in a family; the tag keeps training and
/// evaluation episodes apart.
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut z = base ^ tag;
    z = z.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Engine seed of evaluation episode `episode`; shared by every policy.
pub fn evaluation_seed(base: u64, episode: u64) -> u64 {
    derive_seed(base, EVAL_SEEDS, episode)
}

pub fn network_sizes(engine: &Engine, hidden: &[usize]) -> Vec<usize> {
    let mut sizes = vec![engine.state_width()];
    sizes.extend_from_slice(hidden);
    sizes.push(engine.action_count());
    sizes
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub episode_rewards: Vec<f64>,
    /// `None` for episodes in which no gradient step ran.
    pub mean_losses: Vec<Option<f64>>,
    pub epsilon_end: Vec<f64>,
    pub best_reward: f64,
    pub best_episode: Option<usize>,
    pub best_params: NetworkParams<f32>,
    pub last_params: NetworkParams<f32>,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
    pub global_steps: u64,
    pub gradient_steps: u64,
    pub seed: u64,
    pub config: DqnConfig,
    /// Set when training stopped on a non-finite loss.
    pub failure: Option<String>,
}

impl TrainingRun {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

fn state_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

/// Runs the full training loop. With `checkpoint_dir` set, the best network is
/// saved whenever an episode beats the best reward so far, and the final one
/// at the end.
pub fn train(
    suite: &BusinessProcessSuite,
    engine_config: &EngineConfig,
    config: &DqnConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainingRun, DqnError> {
    config.validate()?;
    let mut engine = Engine::new(suite.clone(), engine_config.clone())?;
    let sizes = network_sizes(&engine, &config.hidden_sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut online = NetworkParams::<f32>::random(&sizes, &mut rng);
    let mut target = NetworkParams::<f32>::random(&sizes, &mut rng);
    let mut adam = Adam::new(
        &online,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut memory = ReplayMemory::<f32>::new(config.replay_capacity());
    let discount = config.discount as f32;
    let best_path = checkpoint_dir.map(|d| d.join(BEST_CHECKPOINT));

    let mut run = TrainingRun {
        episode_rewards: Vec::with_capacity(config.episodes),
        mean_losses: Vec::with_capacity(config.episodes),
        epsilon_end: Vec::with_capacity(config.episodes),
        best_reward: f64::NEG_INFINITY,
        best_episode: None,
        best_params: online.clone(),
        last_params: online.clone(),
        best_checkpoint: None,
        last_checkpoint: None,
        global_steps: 0,
        gradient_steps: 0,
        seed: config.seed,
        config: config.clone(),
        failure: None,
    };

    'episodes: for episode in 0..config.episodes {
        let first = engine.reset_with_seed(derive_seed(config.seed, TRAIN_SEEDS, episode as u64));
        let mut state = state_f32(&first.values);
        let mut cumulative = 0.0;
        let mut loss_sum = 0.0;
        let mut loss_count = 0u64;
        let mut epsilon = epsilon_at(run.global_steps, config);

        for _ in 0..config.steps_per_episode {
            epsilon = epsilon_at(run.global_steps, config);
            let action = select_action(&online, &state, epsilon, &mut rng)?;
            let (next, reward) = engine.step_index(action)?;
            cumulative += reward;
            let next_state = state_f32(&next.values);
            memory.push(Experience {
                state: std::mem::replace(&mut state, next_state.clone()),
                action,
                reward: reward as f32,
                next_state,
            });

            if let Some(batch) = memory.sample(config.batch_size, &mut rng) {
                let targets = compute_targets(&batch, &online, &target, discount)?;
                let rows: Vec<&[f32]> = batch.iter().map(|e| e.state.as_slice()).collect();
                let inputs = Matrix::from_rows(&rows)?;
                let actions: Vec<usize> = batch.iter().map(|e| e.action).collect();
                match train_step(&mut online, &mut adam, &inputs, &actions, &targets) {
                    Ok(loss) => {
                        loss_sum += loss as f64;
                        loss_count += 1;
                        run.gradient_steps += 1;
                    }
                    Err(NeuralError::NonFiniteLoss(v)) => {
                        run.failure = Some(format!(
                            "non-finite loss {v} in episode {episode} at global step {}",
                            run.global_steps
                        ));
                        break 'episodes;
                    }
                    Err(e) => return Err(e.into()),
                }
            }

            run.global_steps += 1;
            if run.global_steps % config.target_sync_period == 0 {
                target.copy_from(&online);
            }
        }

        debug_assert_eq!(cumulative, engine.state().completed_reward_total);
        run.episode_rewards.push(cumulative);
        run.mean_losses
            .push((loss_count > 0).then(|| loss_sum / loss_count as f64));
        run.epsilon_end.push(epsilon);

        if cumulative > run.best_reward {
            run.best_reward = cumulative;
            run.best_episode = Some(episode);
            run.best_params.copy_from(&online);
            if let Some(path) = &best_path {
                save_params(&online, path)?;
                run.best_checkpoint = Some(path.clone());
            }
        }
    }

    run.last_params.copy_from(&online);
    if run.failure.is_none() {
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(LAST_CHECKPOINT);
            save_params(&online, &path)?;
            run.last_checkpoint = Some(path);
        }
    }
    Ok(run)
}

#[derive(Clone, Copy, Debug)]
pub enum Policy<'a> {
    /// Greedy over the network's eval-mode Q-values.
    Greedy(&'a NetworkParams<f32>),
    Fifo,
    Spt,
    /// Uniform over all action indices, seeded per episode.
    Random,
}

/// Loads a checkpoint and checks that its input and output widths fit `engine`.
pub fn load_policy_network(path: &Path, engine: &Engine) -> Result<NetworkParams<f32>, DqnError> {
    let params = load_params(path)?;
    if params.input_width() != engine.state_width() || params.output_width() != engine.action_count() {
        return Err(DqnError::IncompatibleCheckpoint(format!(
            "{} has layer sizes {:?}; this engine needs input {} and output {}",
            path.display(),
            params.layer_sizes(),
            engine.state_width(),
            engine.action_count()
        )));
    }
    Ok(params)
}

/// Cumulative reward of each of `episodes` episodes of `steps` steps. Episode
/// `e` uses the same engine seed for every policy, so results pair up.
pub fn evaluate(
    policy: Policy<'_>,
    suite: &BusinessProcessSuite,
    engine_config: &EngineConfig,
    episodes: usize,
    steps: usize,
) -> Result<Vec<f64>, DqnError> {
    let mut engine = Engine::new(suite.clone(), engine_config.clone())?;
    if let Policy::Greedy(params) = policy {
        if params.input_width() != engine.state_width()
            || params.output_width() != engine.action_count()
        {
            return Err(DqnError::IncompatibleCheckpoint(format!(
                "layer sizes {:?} do not fit state width {} and {} actions",
                params.layer_sizes(),
                engine.state_width(),
                engine.action_count()
            )));
        }
    }
    let base = engine_config.seed;
    let mut rewards = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut state = engine.reset_with_seed(evaluation_seed(base, episode as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, RANDOM_POLICY_SEEDS, episode as u64));
        let mut total = 0.0;
        for _ in 0..steps {
            let reward = match policy {
                Policy::Greedy(params) => {
                    let q = params.predict_one(&state_f32(&state.values))?;
                    let (next, r) = engine.step_index(argmax(&q))?;
                    state = next;
                    r
                }
                Policy::Fifo => engine.advance(fifo_action(&engine.observe_privileged()))?,
                Policy::Spt => engine.advance(spt_action(&engine.observe_privileged()))?,
                Policy::Random => {
                    let index = rng.random_range(0..engine.action_count());
                    engine.advance(engine.decode_action(index)?)?
                }
            };
            total += reward;
        }
        rewards.push(total);
    }
    Ok(rewards)
}
