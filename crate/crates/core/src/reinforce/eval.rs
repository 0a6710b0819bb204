use serde::{Deserialize, Serialize};

use super::{rollout, spawn_episode, ActionMode, Policy, TrainError};
use crate::graph::GraphConfig;
use crate::world::{FormationSpec, TrajectoryRecord, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub episodes: usize,
    pub seed: u64,
    /// Act with the policy mean instead of sampling.
    pub deterministic: bool,
    pub record_trajectories: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub covered: bool,
    /// Simulated seconds until every goal was first covered.
    pub time_to_goals: Option<f64>,
    pub steps: usize,
    pub collided: bool,
    pub min_separation: f64,
    pub total_reward: f64,
    #[serde(skip)]
    pub trajectory: Option<Vec<TrajectoryRecord>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeOutcome>,
}

impl EvalReport {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    fn fraction(&self, pred: impl Fn(&EpisodeOutcome) -> bool) -> Option<f64> {
        (!self.is_empty())
            .then(|| self.episodes.iter().filter(|e| pred(e)).count() as f64 / self.len() as f64)
    }

    pub fn coverage_rate(&self) -> Option<f64> {
        self.fraction(|e| e.covered)
    }

    pub fn collision_rate(&self) -> Option<f64> {
        self.fraction(|e| e.collided)
    }

    /// Mean time-to-goals over the episodes that achieved coverage.
    pub fn mean_time_to_goals(&self) -> Option<f64> {
        let times: Vec<f64> = self
            .episodes
            .iter()
            .filter_map(|e| e.time_to_goals)
            .collect();
        (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64)
    }

    /// Mean over episodes of the smallest robot separation seen; episodes with
    /// a single robot (separation `+∞`) are skipped.
    pub fn mean_min_separation(&self) -> Option<f64> {
        let seps: Vec<f64> = self
            .episodes
            .iter()
            .map(|e| e.min_separation)
            .filter(|s| s.is_finite())
            .collect();
        (!seps.is_empty()).then(|| seps.iter().sum::<f64>() / seps.len() as f64)
    }

    pub fn mean_return(&self) -> Option<f64> {
        (!self.is_empty())
            .then(|| self.episodes.iter().map(|e| e.total_reward).sum::<f64>() / self.len() as f64)
    }

    /// `key = value` lines; absent statistics are written as `nan`.
    pub fn summary(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v}"));
        format!(
            "episodes = {}\ncoverage_rate = {}\nmean_time_to_goals_s = {}\ncollision_rate = {}\n\
             mean_min_separation = {}\nmean_return = {}\n",
            self.len(),
            fmt(self.coverage_rate()),
            fmt(self.mean_time_to_goals()),
            fmt(self.collision_rate()),
            fmt(self.mean_min_separation()),
            fmt(self.mean_return()),
        )
    }
}

/// Roll out `policy` on freshly spawned worlds. Episode `e` spawns from the
/// stream `(seed, e)`, so two evaluations with the same seed see the same
/// initial conditions regardless of the policy.
pub fn evaluate(
    policy: &Policy,
    world_config: &WorldConfig,
    formation: &FormationSpec,
    options: &EvalOptions,
) -> Result<EvalReport, TrainError> {
    policy.check_world(world_config)?;
    world_config.validate()?;
    let mode = if options.deterministic {
        ActionMode::Mean
    } else {
        ActionMode::Sample
    };
    let mut report = EvalReport::default();
    for e in 0..options.episodes {
        let (initial, mut rng) = spawn_episode(world_config, formation, options.seed, e)?;
        let ep = rollout(
            &policy.params,
            &policy.graph,
            world_config,
            initial,
            &mut rng,
            mode,
            options.record_trajectories,
        )?;
        report.episodes.push(EpisodeOutcome {
            covered: ep.covered,
            time_to_goals: ep.covered.then_some(ep.steps as f64 * world_config.dt),
            steps: ep.steps,
            collided: ep.collided,
            min_separation: ep.min_separation,
            total_reward: ep.total_reward(),
            trajectory: ep.trajectory,
        });
    }
    Ok(report)
}

/// Apply a policy trained on a small swarm to `large_world` unchanged.
///
/// The per-node topology must match training: the same graph construction
/// and normalization, and the same sensing counts.
pub fn transfer_eval(
    policy: &Policy,
    large_world: &WorldConfig,
    target_graph: &GraphConfig,
    formation: &FormationSpec,
    options: &EvalOptions,
) -> Result<EvalReport, TrainError> {
    if *target_graph != policy.graph {
        return Err(TrainError::TopologyMismatch {
            trained: policy.graph,
            target: *target_graph,
        });
    }
    evaluate(policy, large_world, formation, options)
}
