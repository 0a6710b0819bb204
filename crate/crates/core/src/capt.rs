//! Centralized assignment-and-planning baseline.
//!
//! Goals are assigned by the Hungarian algorithm on squared distances and
//! every robot follows a straight line to its goal, all arriving together.
//! With enough initial and goal separation these trajectories never bring two
//! robots closer than their combined radii, and the arrival time is the
//! reference against which the learned policy's time-to-goals is measured.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reinforce::{spawn_episode, EvalOptions, EvalReport, TrainError};
use crate::world::{self, distance, FormationSpec, Point, WorldConfig, WorldError, WorldState};

#[derive(Debug, Error)]
pub enum CaptError {
    #[error("cost matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("cost entry ({row}, {col}) is not finite")]
    NonFiniteCost { row: usize, col: usize },
    #[error("{robots} robots but {goals} goals")]
    CountMismatch { robots: usize, goals: usize },
    #[error("max speed must be positive, got {0}")]
    InvalidSpeed(f64),
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("the assignment baseline does not model obstacles")]
    ObstaclesUnsupported,
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// A perfect matching of robots to goals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `perm[i]` is the goal assigned to robot `i`.
    pub perm: Vec<usize>,
    pub total_cost: f64,
}

/// Minimum-cost perfect matching in `O(N³)` (shortest augmenting paths with
/// row and column potentials).
pub fn hungarian(cost: ArrayView2<'_, f64>) -> Result<Assignment, CaptError> {
    let (rows, cols) = cost.dim();
    if rows != cols {
        return Err(CaptError::NotSquare { rows, cols });
    }
    if let Some(((row, col), _)) = cost.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(CaptError::NonFiniteCost { row, col });
    }
    let n = rows;
    // 1-based with a virtual column 0 holding the row being inserted.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let slack = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[col_owner[j] - 1] = j - 1;
    }
    let total_cost = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    Ok(Assignment { perm, total_cost })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentCost {
    #[default]
    SquaredDistance,
    Distance,
}

pub fn cost_matrix(robots: &[Point], goals: &[Point], kind: AssignmentCost) -> Array2<f64> {
    Array2::from_shape_fn((robots.len(), goals.len()), |(i, j)| {
        let d = distance(robots[i], goals[j]);
        match kind {
            AssignmentCost::SquaredDistance => d * d,
            AssignmentCost::Distance => d,
        }
    })
}

/// Synchronized straight-line trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub starts: Vec<Point>,
    /// Goal position assigned to each robot.
    pub goals: Vec<Point>,
    pub assignment: Assignment,
    /// Common arrival time.
    pub arrival_time: f64,
}

impl TrajectoryPlan {
    pub fn n_robots(&self) -> usize {
        self.starts.len()
    }

    pub fn position(&self, robot: usize, t: f64) -> Point {
        let s = self.starts[robot];
        let g = self.goals[robot];
        if t >= self.arrival_time {
            return g;
        }
        let frac = (t / self.arrival_time).max(0.0);
        [s[0] + frac * (g[0] - s[0]), s[1] + frac * (g[1] - s[1])]
    }

    pub fn positions(&self, t: f64) -> Vec<Point> {
        (0..self.n_robots()).map(|i| self.position(i, t)).collect()
    }
}

pub fn capt_plan(state: &WorldState, v_max: f64) -> Result<TrajectoryPlan, CaptError> {
    capt_plan_with(state, v_max, AssignmentCost::SquaredDistance)
}

pub fn capt_plan_with(
    state: &WorldState,
    v_max: f64,
    cost: AssignmentCost,
) -> Result<TrajectoryPlan, CaptError> {
    if state.robots.len() != state.goals.len() {
        return Err(CaptError::CountMismatch {
            robots: state.robots.len(),
            goals: state.goals.len(),
        });
    }
    if !(v_max.is_finite() && v_max > 0.0) {
        return Err(CaptError::InvalidSpeed(v_max));
    }
    let assignment = hungarian(cost_matrix(&state.robots, &state.goals, cost).view())?;
    let goals: Vec<Point> = assignment.perm.iter().map(|&j| state.goals[j]).collect();
    let longest = state
        .robots
        .iter()
        .zip(&goals)
        .map(|(&s, &g)| distance(s, g))
        .fold(0.0, f64::max);
    Ok(TrajectoryPlan {
        starts: state.robots.clone(),
        goals,
        assignment,
        arrival_time: longest / v_max,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanSimulation {
    /// `(t, positions)` at every sample, from `t = 0` through arrival.
    pub samples: Vec<(f64, Vec<Point>)>,
    pub min_separation: f64,
    /// First sampled time at which every goal is covered; `None` if
    /// `coverage_radius` is absent.
    pub time_to_goals: Option<f64>,
}

/// Sample `plan` at multiples of `dt` (and exactly at arrival).
///
/// With a coverage radius, `time_to_goals` is the first sample whose
/// robot-goal incidence is a permutation; otherwise it is the arrival time.
pub fn simulate_plan(
    plan: &TrajectoryPlan,
    dt: f64,
    coverage_radius: Option<f64>,
) -> Result<PlanSimulation, CaptError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(CaptError::InvalidStep(dt));
    }
    let t_f = plan.arrival_time;
    let mut times: Vec<f64> = (0..)
        .map(|k| k as f64 * dt)
        .take_while(|&t| t < t_f)
        .collect();
    times.push(t_f);

    let mut samples = Vec::with_capacity(times.len());
    let mut min_sep = f64::INFINITY;
    let mut time_to_goals = coverage_radius.is_none().then_some(t_f);
    for t in times {
        let pos = plan.positions(t);
        let state = WorldState {
            robots: pos,
            goals: plan.goals.clone(),
            obstacles: Vec::new(),
            step: 0,
        };
        min_sep = min_sep.min(world::min_separation(&state));
        if let (None, Some(psi)) = (time_to_goals, coverage_radius) {
            if world::goals_covered(&world::assignment_matrix(&state, psi)) {
                time_to_goals = Some(t);
            }
        }
        samples.push((t, state.robots));
    }
    Ok(PlanSimulation {
        samples,
        min_separation: min_sep,
        time_to_goals,
    })
}

/// CAPT time-to-goals for one spawned world, sampled at the world's `dt`.
pub fn capt_time(state: &WorldState, config: &WorldConfig) -> Result<f64, CaptError> {
    let plan = capt_plan(state, config.max_speed())?;
    let sim = simulate_plan(&plan, config.dt, Some(config.coverage_radius))?;
    Ok(sim.time_to_goals.unwrap_or(plan.arrival_time))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub formation: String,
    pub n_robots: usize,
    /// Mean CAPT time over the episodes the policy covered (all episodes if none).
    pub capt_time_s: f64,
    /// Mean policy time over covered episodes; NaN if none.
    pub gpg_time_s: f64,
    /// Mean paired difference `gpg − capt` over covered episodes; NaN if none.
    pub gap_s: f64,
    pub gpg_coverage: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

pub const COMPARISON_HEADER: &str = "# gpg comparison v1";

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{COMPARISON_HEADER}\nformation,n_robots,capt_time_s,gpg_time_s,gap_s,gpg_coverage\n"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.formation, r.n_robots, r.capt_time_s, r.gpg_time_s, r.gap_s, r.gpg_coverage
            ));
        }
        out
    }
}

/// Compare CAPT with a controller over several named formations.
///
/// `run` evaluates the controller for one formation; it must spawn episode
/// `e` from stream `(options.seed, e)` as [`crate::reinforce::evaluate`] does,
/// so both planners start from identical worlds.
pub fn compare_with(
    world_config: &WorldConfig,
    formations: &[(String, FormationSpec)],
    options: &EvalOptions,
    mut run: impl FnMut(&FormationSpec, &EvalOptions) -> Result<EvalReport, TrainError>,
) -> Result<ComparisonReport, CaptError> {
    if !world_config.obstacles.is_empty() {
        return Err(CaptError::ObstaclesUnsupported);
    }
    world_config.validate().map_err(WorldError::from)?;
    let mut report = ComparisonReport::default();
    for (name, formation) in formations {
        let mut capt_times = Vec::with_capacity(options.episodes);
        for e in 0..options.episodes {
            let (state, _) = spawn_episode(world_config, formation, options.seed, e)?;
            capt_times.push(capt_time(&state, world_config)?);
        }
        let eval = run(formation, options)?;
        let paired: Vec<(f64, f64)> = eval
            .episodes
            .iter()
            .zip(&capt_times)
            .filter_map(|(ep, &c)| ep.time_to_goals.map(|g| (g, c)))
            .collect();
        let mean = |xs: &mut dyn Iterator<Item = f64>, n: usize| {
            if n == 0 {
                f64::NAN
            } else {
                xs.sum::<f64>() / n as f64
            }
        };
        let np = paired.len();
        let capt_time_s = if np > 0 {
            mean(&mut paired.iter().map(|p| p.1), np)
        } else {
            mean(&mut capt_times.iter().copied(), capt_times.len())
        };
        report.rows.push(ComparisonRow {
            formation: name.clone(),
            n_robots: world_config.n_robots,
            capt_time_s,
            gpg_time_s: mean(&mut paired.iter().map(|p| p.0), np),
            gap_s: mean(&mut paired.iter().map(|p| p.0 - p.1), np),
            gpg_coverage: eval.coverage_rate().unwrap_or(f64::NAN),
        });
    }
    Ok(report)
}

/// Compare CAPT with a trained policy under deterministic evaluation.
pub fn compare(
    policy: &crate::reinforce::Policy,
    world_config: &WorldConfig,
    formations: &[(String, FormationSpec)],
    episodes: usize,
    seed: u64,
) -> Result<ComparisonReport, CaptError> {
    let options = EvalOptions {
        episodes,
        seed,
        deterministic: true,
        record_trajectories: false,
    };
    compare_with(world_config, formations, &options, |f, o| {
        crate::reinforce::evaluate(policy, world_config, f, o)
    })
}
