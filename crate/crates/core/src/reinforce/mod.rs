//! Policy-gradient training of graph convolutional policies.
//!
//! Each episode spawns a fresh world, builds the robot graph once from the
//! initial positions and keeps it fixed while the policy is rolled out. Every
//! robot samples its own action from the shared network but all robots receive
//! the same centralized reward. The gradient estimator weights
//! `∇ Σ_n log π_n(a_nt | x_t)` by the discounted return-to-go (optionally
//! minus a batch baseline) and averages over the batch.

mod eval;

pub use eval::{evaluate, transfer_eval, EpisodeOutcome, EvalOptions, EvalReport};

use std::time::Instant;

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ensure, ensure_positive, ConfigError};
use crate::gcn::{self, GcnError, GcnGradient, GcnParams, LayerSpec, DEFAULT_INIT_STD};
use crate::graph::{GraphConfig, GraphConstruction, GraphError, ShiftOperator};
use crate::world::{self, FormationSpec, TrajectoryRecord, WorldConfig, WorldError, WorldState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gcn(#[from] GcnError),
    #[error("policy expects {expected} input features but the world produces {got}")]
    FeatureWidthMismatch { expected: usize, got: usize },
    #[error(
        "sensing counts differ: policy was trained with {trained:?} (goals, robots, obstacles), \
         world uses {target:?}"
    )]
    SensingMismatch {
        trained: (usize, usize, usize),
        target: (usize, usize, usize),
    },
    #[error("graph topology differs: policy was trained on {trained:?}, target uses {target:?}")]
    TopologyMismatch {
        trained: GraphConfig,
        target: GraphConfig,
    },
    #[error("cannot estimate a gradient from an empty batch")]
    EmptyBatch,
    #[error("gradient contains non-finite values")]
    NonFiniteGradient,
    #[error("aborted after {0} consecutive non-finite gradients")]
    NonFiniteStreak(usize),
}

/// Per-robot sensing counts `(goals, robots, obstacles)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sensing {
    pub goals: usize,
    pub robots: usize,
    pub obstacles: usize,
}

impl Sensing {
    pub fn of(world: &WorldConfig) -> Self {
        Self {
            goals: world.goal_obs,
            robots: world.robot_obs,
            obstacles: world.obstacle_obs,
        }
    }

    fn as_tuple(self) -> (usize, usize, usize) {
        (self.goals, self.robots, self.obstacles)
    }
}

/// Trained network together with the sensing and graph settings it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub params: GcnParams,
    pub graph: GraphConfig,
    pub sensing: Sensing,
}

impl Policy {
    /// Fails unless `world`'s observations fit this policy's input layer.
    pub fn check_world(&self, world: &WorldConfig) -> Result<(), TrainError> {
        let got = world.feature_width();
        let expected = self.params.input_width();
        if got != expected {
            return Err(TrainError::FeatureWidthMismatch { expected, got });
        }
        let target = Sensing::of(world);
        if target != self.sensing {
            return Err(TrainError::SensingMismatch {
                trained: self.sensing.as_tuple(),
                target: target.as_tuple(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    None,
    /// Subtract the batch mean of the return-to-go at the same timestep.
    #[default]
    MeanReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Weight step `t` by the discounted return from `t` onward.
    #[default]
    ReturnToGo,
    /// Weight every step by the episode's full discounted return.
    WholeTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain gradient ascent.
    Sgd,
}

/// Network architecture: Tanh hidden layers followed by a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    /// Filter order `K` of every layer.
    pub order: usize,
    pub init_log_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            order: 2,
            init_log_std: DEFAULT_INIT_STD.ln(),
        }
    }
}

impl PolicyConfig {
    pub fn layer_specs(&self, feature_width: usize) -> Vec<LayerSpec> {
        LayerSpec::stack(feature_width, &self.hidden, self.order)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub world: WorldConfig,
    pub graph: GraphConfig,
    pub policy: PolicyConfig,
    /// Goal layout used for training episodes.
    pub formation: FormationSpec,
    pub gamma: f64,
    pub episodes_per_update: usize,
    pub total_updates: usize,
    pub learning_rate: f64,
    /// If set, the learning rate decays linearly to this value at the last update.
    pub final_learning_rate: Option<f64>,
    pub seed: u64,
    pub baseline: Baseline,
    pub estimator: Estimator,
    pub optimizer: OptimizerKind,
    /// Run a deterministic evaluation every this many updates (0 disables).
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Collect the episodes of a batch on the rayon thread pool.
    pub parallel_episodes: bool,
    /// Divide the step weights by their batch standard deviation, so the
    /// gradient scale does not swing with the magnitude of the returns.
    pub normalize_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            graph: GraphConfig::default(),
            policy: PolicyConfig::default(),
            formation: FormationSpec::UniformRandom,
            gamma: 0.95,
            episodes_per_update: 16,
            total_updates: 1500,
            learning_rate: 3e-3,
            final_learning_rate: None,
            seed: 0,
            baseline: Baseline::MeanReturn,
            estimator: Estimator::ReturnToGo,
            optimizer: OptimizerKind::Adam,
            eval_every: 0,
            eval_episodes: 20,
            parallel_episodes: false,
            normalize_weights: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.world.validate().map_err(|e| e.within("world"))?;
        ensure(
            self.gamma > 0.0 && self.gamma <= 1.0,
            "gamma",
            format!("must lie in (0, 1], got {}", self.gamma),
        )?;
        ensure(
            self.episodes_per_update >= 1,
            "episodes_per_update",
            "must be at least 1",
        )?;
        ensure_positive(self.learning_rate, "learning_rate")?;
        if let Some(lr) = self.final_learning_rate {
            ensure_positive(lr, "final_learning_rate")?;
        }
        ensure(
            self.policy.hidden.iter().all(|&h| h > 0),
            "policy.hidden",
            "hidden widths must be positive",
        )?;
        ensure(
            self.policy.init_log_std.is_finite(),
            "policy.init_log_std",
            "must be finite",
        )?;
        ensure(
            self.world.feature_width() > 0,
            "world.goal_obs",
            "robots must observe at least one entity",
        )?;
        if let GraphConstruction::KNearest { k } = self.graph.construction {
            let n = self.world.n_robots;
            ensure(
                n < 2 || (1..n).contains(&k),
                "graph.construction.k",
                format!("must lie in 1..={}", n.saturating_sub(1)),
            )?;
        }
        Ok(())
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.policy.layer_specs(self.world.feature_width())
    }

    pub fn learning_rate_at(&self, update: usize) -> f64 {
        match self.final_learning_rate {
            Some(end) if self.total_updates > 1 => {
                let frac = update as f64 / (self.total_updates - 1) as f64;
                self.learning_rate + frac * (end - self.learning_rate)
            }
            _ => self.learning_rate,
        }
    }
}

/// Mix a seed with a stream index (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random stream for episode `index` of a batch seeded by `seed`.
pub fn episode_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Initial world of episode `index` and the generator its rollout continues
/// from. Training, evaluation and the CAPT comparison all spawn this way.
pub fn spawn_episode(
    world_config: &WorldConfig,
    formation: &FormationSpec,
    seed: u64,
    index: usize,
) -> Result<(WorldState, ChaCha8Rng), WorldError> {
    let mut rng = episode_rng(seed, index);
    let initial = world::spawn_world(world_config, rng.next_u64(), formation)?;
    Ok((initial, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    /// Take the mean action (evaluation).
    Mean,
}

/// Everything recorded from one rollout.
#[derive(Debug, Clone)]
pub struct Episode {
    pub shift: ShiftOperator,
    pub observations: Vec<Array2<f64>>,
    pub actions: Vec<Array2<f64>>,
    pub log_probs: Vec<Vec<f64>>,
    /// Centralized reward after each step; every robot receives this value.
    pub rewards: Vec<f64>,
    pub covered: bool,
    pub steps: usize,
    pub collided: bool,
    pub min_separation: f64,
    pub trajectory: Option<Vec<TrajectoryRecord>>,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Roll out `params` from `initial` until all goals are covered or the
/// horizon is reached. The graph is built once from the initial positions.
pub fn rollout(
    params: &GcnParams,
    graph: &GraphConfig,
    world: &WorldConfig,
    initial: WorldState,
    rng: &mut ChaCha8Rng,
    mode: ActionMode,
    record_trajectory: bool,
) -> Result<Episode, TrainError> {
    let shift = graph.shift_operator(&initial.robots)?;
    let mut state = initial;
    let mut ep = Episode {
        shift,
        observations: Vec::new(),
        actions: Vec::new(),
        log_probs: Vec::new(),
        rewards: Vec::new(),
        covered: false,
        steps: 0,
        collided: false,
        min_separation: world::min_separation(&state),
        trajectory: record_trajectory.then(|| {
            vec![TrajectoryRecord {
                step: 0,
                robot_positions: state.robots.clone(),
                reward: 0.0,
                covered: world::is_covered(&state, world),
            }]
        }),
    };
    while state.step < world.max_steps {
        let x = world::observe(&state, world);
        let dist = gcn::forward(&ep.shift, x.view(), params)?;
        let (actions, log_probs) = match mode {
            ActionMode::Sample => dist.sample(rng),
            ActionMode::Mean => {
                let a = dist.mode();
                let lp = dist.log_prob(a.view())?;
                (a, lp)
            }
        };
        state = world::step(&state, actions.view(), world)?;
        let r = world::reward(&state, world);
        let covered = world::is_covered(&state, world);
        ep.collided |= world::in_collision(&state, world);
        ep.min_separation = ep.min_separation.min(world::min_separation(&state));
        if let Some(traj) = ep.trajectory.as_mut() {
            traj.push(TrajectoryRecord {
                step: state.step,
                robot_positions: state.robots.clone(),
                reward: r,
                covered,
            });
        }
        ep.observations.push(x);
        ep.actions.push(actions);
        ep.log_probs.push(log_probs);
        ep.rewards.push(r);
        ep.steps = state.step;
        if covered {
            ep.covered = true;
            break;
        }
    }
    Ok(ep)
}

#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub episodes: Vec<Episode>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

/// Collect `episodes_per_update` sampled episodes. Episode `e` draws from its
/// own stream derived from `(seed, e)`, so the batch does not depend on
/// whether collection runs in parallel.
pub fn collect_rollouts(
    params: &GcnParams,
    config: &TrainConfig,
    seed: u64,
) -> Result<RolloutBatch, TrainError> {
    let run = |e: usize| -> Result<Episode, TrainError> {
        let (initial, mut rng) = spawn_episode(&config.world, &config.formation, seed, e)?;
        rollout(
            params,
            &config.graph,
            &config.world,
            initial,
            &mut rng,
            ActionMode::Sample,
            false,
        )
    };
    let episodes = if config.parallel_episodes {
        (0..config.episodes_per_update)
            .into_par_iter()
            .map(run)
            .collect::<Result<Vec<_>, _>>()?
    } else {
        (0..config.episodes_per_update)
            .map(run)
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok(RolloutBatch { episodes })
}

/// `G_t = r_t + γ G_{t+1}`, evaluated backwards.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (g, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *g = acc;
    }
    out
}

/// Per-step weights `Ĝ_t` for every episode of the batch.
pub fn advantage_weights(
    batch: &RolloutBatch,
    gamma: f64,
    estimator: Estimator,
    baseline: Baseline,
) -> Vec<Vec<f64>> {
    let returns: Vec<Vec<f64>> = batch
        .episodes
        .iter()
        .map(|ep| {
            let g = discounted_returns(&ep.rewards, gamma);
            match estimator {
                Estimator::ReturnToGo => g,
                Estimator::WholeTrajectory => vec![g.first().copied().unwrap_or(0.0); g.len()],
            }
        })
        .collect();
    if baseline == Baseline::None {
        return returns;
    }
    let horizon = returns.iter().map(Vec::len).max().unwrap_or(0);
    let mut sums = vec![0.0; horizon];
    let mut counts = vec![0usize; horizon];
    for g in &returns {
        for (t, v) in g.iter().enumerate() {
            sums[t] += v;
            counts[t] += 1;
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    returns
        .into_iter()
        .map(|g| g.iter().zip(&means).map(|(v, b)| v - b).collect())
        .collect()
}

/// Scale all weights by one over their (uncentered) root mean square.
fn normalize(weights: &mut [Vec<f64>]) {
    let (sum_sq, count) = weights
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), w| (s + w * w, c + 1));
    let rms = (sum_sq / count.max(1) as f64).sqrt();
    if rms > 0.0 {
        weights.iter_mut().flatten().for_each(|w| *w /= rms);
    }
}

/// Batch-averaged policy gradient (ascent direction on expected return).
pub fn policy_gradient(
    batch: &RolloutBatch,
    params: &GcnParams,
    config: &TrainConfig,
) -> Result<GcnGradient, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut weights = advantage_weights(batch, config.gamma, config.estimator, config.baseline);
    if config.normalize_weights {
        normalize(&mut weights);
    }
    let per_episode = |(ep, w): (&Episode, &Vec<f64>)| {
        gcn::backward(&ep.shift, &ep.observations, &ep.actions, w, params)
    };
    let grads: Vec<GcnGradient> = if config.parallel_episodes {
        batch
            .episodes
            .par_iter()
            .zip(weights.par_iter())
            .map(per_episode)
            .collect::<Result<_, _>>()?
    } else {
        batch
            .episodes
            .iter()
            .zip(weights.iter())
            .map(per_episode)
            .collect::<Result<_, _>>()?
    };
    let mut total = params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    for g in &grads {
        total.add_scaled(scale, g);
    }
    Ok(total)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        Self {
            kind,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            steps: 0,
        }
    }
}

/// One ascent step. A non-finite gradient is rejected and leaves the caller's
/// parameters and state untouched.
pub fn optimizer_update(
    params: &GcnParams,
    gradient: &GcnGradient,
    state: &OptimizerState,
    learning_rate: f64,
) -> Result<(GcnParams, OptimizerState), TrainError> {
    let g = gradient.to_flat();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteGradient);
    }
    let mut theta = params.to_flat();
    if theta.len() != g.len() {
        return Err(GcnError::DimensionMismatch(format!(
            "{} parameters but {} gradient entries",
            theta.len(),
            g.len()
        ))
        .into());
    }
    let mut next = state.clone();
    match state.kind {
        OptimizerKind::Sgd => {
            for (t, gi) in theta.iter_mut().zip(&g) {
                *t += learning_rate * gi;
            }
        }
        OptimizerKind::Adam => {
            next.steps += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(next.steps as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(next.steps as i32);
            for (i, (t, gi)) in theta.iter_mut().zip(&g).enumerate() {
                let m = ADAM_BETA1 * next.first_moment[i] + (1.0 - ADAM_BETA1) * gi;
                let v = ADAM_BETA2 * next.second_moment[i] + (1.0 - ADAM_BETA2) * gi * gi;
                next.first_moment[i] = m;
                next.second_moment[i] = v;
                *t += learning_rate * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
    let mut updated = params.clone();
    updated.set_flat(&theta)?;
    Ok((updated, next))
}

/// Aggregate statistics for one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub update: usize,
    /// Episodes collected so far, including this update's batch.
    pub episodes: usize,
    pub mean_return: f64,
    pub coverage: f64,
    pub collisions: f64,
    pub mean_len: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub total_reward: f64,
    pub covered: bool,
    pub collided: bool,
    pub steps: usize,
}

/// A deterministic evaluation taken during training.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub update: usize,
    pub coverage: f64,
    pub collision_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Every training episode in collection order.
    pub episodes: Vec<EpisodeSummary>,
    pub evals: Vec<EvalPoint>,
}

pub const TRAIN_LOG_HEADER: &str = "# gpg train-log v1";

impl TrainLog {
    /// Wall-clock time is left out so identical runs give identical files.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{TRAIN_LOG_HEADER}\nupdate,episodes,mean_return,coverage,collisions,mean_len\n"
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.update, r.episodes, r.mean_return, r.coverage, r.collisions, r.mean_len
            ));
        }
        out
    }

    /// Coverage rate and mean undiscounted return over the last `n` episodes.
    pub fn tail_stats(&self, n: usize) -> Option<(f64, f64)> {
        let start = self
            .episodes
            .len()
            .checked_sub(n.min(self.episodes.len()))?;
        let tail = &self.episodes[start..];
        if tail.is_empty() {
            return None;
        }
        let count = tail.len() as f64;
        let coverage = tail.iter().filter(|e| e.covered).count() as f64 / count;
        let mean_return = tail.iter().map(|e| e.total_reward).sum::<f64>() / count;
        Some((coverage, mean_return))
    }

    /// Highest per-update mean episode return.
    pub fn best_mean_return(&self) -> Option<f64> {
        self.records.iter().map(|r| r.mean_return).reduce(f64::max)
    }

    /// Highest mean return over any `n` consecutive training episodes.
    pub fn best_window_return(&self, n: usize) -> Option<f64> {
        if n == 0 || self.episodes.len() < n {
            return None;
        }
        let rewards: Vec<f64> = self.episodes.iter().map(|e| e.total_reward).collect();
        let mut sum: f64 = rewards[..n].iter().sum();
        let mut best = sum;
        for i in n..rewards.len() {
            sum += rewards[i] - rewards[i - n];
            best = best.max(sum);
        }
        Some(best / n as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    /// Parameters with the best observed coverage (ties broken by return).
    pub best_params: GcnParams,
    pub log: TrainLog,
}

const MAX_NONFINITE_STREAK: usize = 10;

/// Run the full training loop.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(config, |_| {})
}

/// [`train`] with a callback invoked after every update.
pub fn train_with(
    config: &TrainConfig,
    mut on_update: impl FnMut(&TrainRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let specs = config.layer_specs();
    let mut params = gcn::init_params(&specs, config.seed, config.policy.init_log_std)?;
    let mut opt = OptimizerState::new(config.optimizer, params.n_params());
    let mut log = TrainLog::default();
    let mut best: Option<((f64, f64), GcnParams)> = None;
    let mut streak = 0;
    let started = Instant::now();

    for update in 0..config.total_updates {
        let batch_seed = derive_seed(config.seed, update as u64);
        let batch = collect_rollouts(&params, config, batch_seed)?;

        let n = batch.len() as f64;
        let summaries: Vec<EpisodeSummary> = batch
            .episodes
            .iter()
            .map(|ep| EpisodeSummary {
                total_reward: ep.total_reward(),
                covered: ep.covered,
                collided: ep.collided,
                steps: ep.steps,
            })
            .collect();
        let coverage = summaries.iter().filter(|s| s.covered).count() as f64 / n;
        let mean_return = summaries.iter().map(|s| s.total_reward).sum::<f64>() / n;
        let score = (coverage, mean_return);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, params.clone()));
        }

        let grad = policy_gradient(&batch, &params, config)?;
        match optimizer_update(&params, &grad, &opt, config.learning_rate_at(update)) {
            Ok((p, o)) => {
                params = p;
                opt = o;
                streak = 0;
            }
            Err(TrainError::NonFiniteGradient) => {
                streak += 1;
                if streak > MAX_NONFINITE_STREAK {
                    return Err(TrainError::NonFiniteStreak(streak));
                }
            }
            Err(e) => return Err(e),
        }

        let record = TrainRecord {
            update,
            episodes: log.episodes.len() + summaries.len(),
            mean_return,
            coverage,
            collisions: summaries.iter().filter(|s| s.collided).count() as f64 / n,
            mean_len: summaries.iter().map(|s| s.steps as f64).sum::<f64>() / n,
            wall_s: started.elapsed().as_secs_f64(),
        };
        on_update(&record);
        log.records.push(record);
        log.episodes.extend(summaries);

        if config.eval_every > 0 && (update + 1) % config.eval_every == 0 {
            let policy = Policy {
                params: params.clone(),
                graph: config.graph,
                sensing: Sensing::of(&config.world),
            };
            let report = evaluate(
                &policy,
                &config.world,
                &config.formation,
                &EvalOptions {
                    episodes: config.eval_episodes,
                    seed: derive_seed(config.seed ^ 0xE7A1, update as u64),
                    deterministic: true,
                    record_trajectories: false,
                },
            )?;
            log.evals.push(EvalPoint {
                update,
                coverage: report.coverage_rate().unwrap_or(0.0),
                collision_rate: report.collision_rate().unwrap_or(0.0),
            });
        }
    }

    let best_params = best.map_or_else(|| params.clone(), |(_, p)| p);
    Ok(TrainOutcome {
        policy: Policy {
            params,
            graph: config.graph,
            sensing: Sensing::of(&config.world),
        },
        best_params,
        log,
    })
}
