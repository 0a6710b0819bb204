//! Deterministic 2D multi-robot world.
//!
//! The world holds `N` disk robots, `N` goals and an optional set of static disk
//! obstacles inside the square arena `[-W, W]²`. It provides spawning, per-robot
//! sensing, first-order dynamics, the coverage/collision predicates and both
//! reward schemes (sparse and shaped). All operations are pure: [`step`]
//! returns a new [`WorldState`].

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ensure, ensure_positive, ConfigError};

/// A position or offset in the plane.
pub type Point = [f64; 2];

/// Rejection-sampling budget shared by all entities of one spawn.
pub const SPAWN_ATTEMPTS: usize = 10_000;

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn distance_sq(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("could not place all entities after {attempts} rejection-sampling attempts")]
    SpawnInfeasible { attempts: usize },
    #[error("formation yields {got} goals but the world has {expected}")]
    GoalCountMismatch { expected: usize, got: usize },
    #[error("invalid formation: {0}")]
    InvalidFormation(String),
    #[error("episode is over (step {step} of {max_steps})")]
    EpisodeOver { step: usize, max_steps: usize },
    #[error("expected a {expected_rows}x2 action matrix, got {rows}x{cols}")]
    ActionShape {
        expected_rows: usize,
        rows: usize,
        cols: usize,
    },
    #[error("action for robot {robot} is not finite")]
    NonFiniteAction { robot: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// The action is a position increment applied once per step.
    PointMass,
    /// The action is a commanded velocity integrated over `dt`.
    SingleIntegrator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Sparse,
    Shaped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: Point,
    pub radius: f64,
}

/// Weights of the goal, robot-robot and robot-obstacle terms of the shaped reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub goal: f64,
    pub robot: f64,
    pub obstacle: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            goal: 1.0,
            robot: 0.5,
            obstacle: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_robots: usize,
    pub n_goals: usize,
    pub robot_radius: f64,
    /// Robots closer than this (center to center) are in collision.
    pub min_separation: f64,
    /// A robot within this distance of a goal covers it.
    pub coverage_radius: f64,
    pub arena_half_width: f64,
    /// Robots spawn uniformly in `[-s, s]²`; defaults to the whole arena.
    pub spawn_half_width: Option<f64>,
    pub dt: f64,
    pub max_steps: usize,
    pub dynamics: Dynamics,
    /// Componentwise bound on actions.
    pub max_action: f64,
    pub goal_obs: usize,
    pub robot_obs: usize,
    pub obstacle_obs: usize,
    pub obstacles: Vec<Obstacle>,
    pub reward_mode: RewardMode,
    pub sparse_bonus: f64,
    pub collision_penalty: f64,
    pub reward_weights: RewardWeights,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_robots: 3,
            n_goals: 3,
            robot_radius: 0.1,
            min_separation: 0.25,
            coverage_radius: 0.2,
            arena_half_width: 5.0,
            spawn_half_width: None,
            dt: 0.1,
            max_steps: 200,
            dynamics: Dynamics::PointMass,
            max_action: 1.0,
            goal_obs: 2,
            robot_obs: 1,
            obstacle_obs: 0,
            obstacles: Vec::new(),
            reward_mode: RewardMode::Shaped,
            sparse_bonus: 10.0,
            collision_penalty: 1.0,
            reward_weights: RewardWeights::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(
            self.n_robots >= 1,
            "n_robots",
            "at least one robot is required",
        )?;
        ensure(
            self.n_goals == self.n_robots,
            "n_goals",
            format!(
                "must equal n_robots ({}), got {}",
                self.n_robots, self.n_goals
            ),
        )?;
        ensure_positive(self.robot_radius, "robot_radius")?;
        ensure(
            self.min_separation.is_finite() && self.min_separation >= 2.0 * self.robot_radius,
            "min_separation",
            format!(
                "must be at least twice robot_radius ({}), got {}",
                2.0 * self.robot_radius,
                self.min_separation
            ),
        )?;
        ensure_positive(self.coverage_radius, "coverage_radius")?;
        ensure_positive(self.arena_half_width, "arena_half_width")?;
        if let Some(s) = self.spawn_half_width {
            ensure(
                s.is_finite() && s > 0.0 && s <= self.arena_half_width,
                "spawn_half_width",
                "must lie in (0, arena_half_width]",
            )?;
        }
        ensure_positive(self.dt, "dt")?;
        ensure(self.max_steps >= 1, "max_steps", "must be at least 1")?;
        ensure_positive(self.max_action, "max_action")?;
        ensure(
            self.goal_obs <= self.n_goals,
            "goal_obs",
            format!("cannot exceed n_goals ({})", self.n_goals),
        )?;
        ensure(
            self.robot_obs < self.n_robots || self.robot_obs == 0,
            "robot_obs",
            format!("cannot exceed n_robots - 1 ({})", self.n_robots - 1),
        )?;
        ensure(
            self.obstacle_obs <= self.obstacles.len(),
            "obstacle_obs",
            format!(
                "cannot exceed the number of obstacles ({})",
                self.obstacles.len()
            ),
        )?;
        for (k, o) in self.obstacles.iter().enumerate() {
            ensure(
                o.center.iter().all(|c| c.is_finite()) && o.radius.is_finite() && o.radius > 0.0,
                &format!("obstacles[{k}]"),
                "center must be finite and radius positive",
            )?;
        }
        for (key, v) in [
            ("sparse_bonus", self.sparse_bonus),
            ("collision_penalty", self.collision_penalty),
            ("reward_weights.goal", self.reward_weights.goal),
            ("reward_weights.robot", self.reward_weights.robot),
            ("reward_weights.obstacle", self.reward_weights.obstacle),
        ] {
            ensure(
                v.is_finite() && v >= 0.0,
                key,
                "must be finite and non-negative",
            )?;
        }
        Ok(())
    }

    /// Width `F` of one observation row.
    pub fn feature_width(&self) -> usize {
        2 * (self.goal_obs + self.robot_obs + self.obstacle_obs)
    }

    /// Largest distance a robot can travel along one axis per step.
    pub fn max_axis_displacement(&self) -> f64 {
        match self.dynamics {
            Dynamics::PointMass => self.max_action,
            Dynamics::SingleIntegrator => self.max_action * self.dt,
        }
    }

    /// Largest per-axis speed in length units per second of simulated time.
    pub fn max_speed(&self) -> f64 {
        self.max_axis_displacement() / self.dt
    }
}

/// How goals are laid out at spawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FormationSpec {
    UniformRandom,
    /// Goals evenly spaced on a circle centred at the origin.
    Circle {
        radius: f64,
    },
    /// Goals on the x axis, centred at the origin.
    Line {
        spacing: f64,
    },
    /// Goals on a near-square grid, centred at the origin, row-major.
    Grid {
        spacing: f64,
    },
    Explicit {
        goals: Vec<Point>,
    },
}

impl FormationSpec {
    /// Deterministic goal positions, or `None` for [`FormationSpec::UniformRandom`].
    pub fn layout(&self, n: usize) -> Result<Option<Vec<Point>>, WorldError> {
        let goals = match self {
            FormationSpec::UniformRandom => return Ok(None),
            FormationSpec::Circle { radius } => {
                positive_formation_param(*radius, "circle radius")?;
                (0..n)
                    .map(|i| {
                        let angle = std::f64::consts::TAU * i as f64 / n as f64;
                        [radius * angle.cos(), radius * angle.sin()]
                    })
                    .collect()
            }
            FormationSpec::Line { spacing } => {
                positive_formation_param(*spacing, "line spacing")?;
                let mid = (n as f64 - 1.0) / 2.0;
                (0..n).map(|i| [(i as f64 - mid) * spacing, 0.0]).collect()
            }
            FormationSpec::Grid { spacing } => {
                positive_formation_param(*spacing, "grid spacing")?;
                let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
                let rows = n.div_ceil(cols);
                let (cmid, rmid) = ((cols as f64 - 1.0) / 2.0, (rows as f64 - 1.0) / 2.0);
                (0..n)
                    .map(|i| {
                        let (r, c) = (i / cols, i % cols);
                        [(c as f64 - cmid) * spacing, (rmid - r as f64) * spacing]
                    })
                    .collect()
            }
            FormationSpec::Explicit { goals } => {
                if goals.len() != n {
                    return Err(WorldError::GoalCountMismatch {
                        expected: n,
                        got: goals.len(),
                    });
                }
                goals.clone()
            }
        };
        Ok(Some(goals))
    }
}

fn positive_formation_param(v: f64, what: &str) -> Result<(), WorldError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(WorldError::InvalidFormation(format!(
            "{what} must be positive, got {v}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub robots: Vec<Point>,
    pub goals: Vec<Point>,
    pub obstacles: Vec<Obstacle>,
    pub step: usize,
}

/// Place goals (per `formation`) and robots for a fresh episode.
///
/// Robots are rejection-sampled uniformly in the spawn square with pairwise
/// separation greater than `min_separation` and clear of every obstacle.
/// Random goals keep a pairwise separation of `2ψ + δ` so that every goal can
/// be covered without two robots colliding.
pub fn spawn_world(
    config: &WorldConfig,
    seed: u64,
    formation: &FormationSpec,
) -> Result<WorldState, WorldError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = SPAWN_ATTEMPTS;
    let w = config.arena_half_width;
    let psi = config.coverage_radius;

    let clear_of_obstacles = |p: Point, margin: f64| {
        config
            .obstacles
            .iter()
            .all(|o| distance(p, o.center) > o.radius + margin)
    };

    let goals = match formation.layout(config.n_goals)? {
        Some(goals) => {
            for (j, g) in goals.iter().enumerate() {
                if !g.iter().all(|c| c.is_finite() && c.abs() <= w) {
                    return Err(WorldError::InvalidFormation(format!(
                        "goal {j} at {g:?} lies outside the arena"
                    )));
                }
                if let Some(h) = goals[..j].iter().find(|h| distance(*g, **h) <= 2.0 * psi) {
                    return Err(WorldError::InvalidFormation(format!(
                        "goals {g:?} and {h:?} are within twice the coverage radius"
                    )));
                }
            }
            goals
        }
        None => {
            let sep = 2.0 * psi + config.min_separation;
            sample_separated(&mut rng, config.n_goals, w, sep, &mut budget, |p| {
                clear_of_obstacles(p, config.robot_radius)
            })?
        }
    };

    let s = config.spawn_half_width.unwrap_or(w);
    let robots = sample_separated(
        &mut rng,
        config.n_robots,
        s,
        config.min_separation,
        &mut budget,
        |p| clear_of_obstacles(p, config.robot_radius),
    )?;

    Ok(WorldState {
        robots,
        goals,
        obstacles: config.obstacles.clone(),
        step: 0,
    })
}

fn sample_separated(
    rng: &mut ChaCha8Rng,
    count: usize,
    half_width: f64,
    separation: f64,
    budget: &mut usize,
    accept: impl Fn(Point) -> bool,
) -> Result<Vec<Point>, WorldError> {
    let mut points: Vec<Point> = Vec::with_capacity(count);
    while points.len() < count {
        if *budget == 0 {
            return Err(WorldError::SpawnInfeasible {
                attempts: SPAWN_ATTEMPTS,
            });
        }
        *budget -= 1;
        let p = [
            rng.random_range(-half_width..=half_width),
            rng.random_range(-half_width..=half_width),
        ];
        if accept(p) && points.iter().all(|q| distance(p, *q) > separation) {
            points.push(p);
        }
    }
    Ok(points)
}

/// Offsets from `origin` to the `count` nearest `points`, nearest first.
/// Ties are broken by lower index.
fn nearest_offsets(origin: Point, points: &[(usize, Point)], count: usize) -> Vec<Point> {
    let mut ranked: Vec<(f64, usize, Point)> = points
        .iter()
        .map(|&(i, p)| (distance_sq(origin, p), i, p))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked
        .into_iter()
        .take(count)
        .map(|(_, _, p)| [p[0] - origin[0], p[1] - origin[1]])
        .collect()
}

/// Per-robot local observations, one row per robot:
/// `[nearest goal offsets | nearest robot offsets | nearest obstacle offsets]`.
pub fn observe(state: &WorldState, config: &WorldConfig) -> Array2<f64> {
    let n = state.robots.len();
    let width = config.feature_width();
    let mut out = Array2::zeros((n, width));
    let goals: Vec<(usize, Point)> = state.goals.iter().copied().enumerate().collect();
    let obstacles: Vec<(usize, Point)> = state
        .obstacles
        .iter()
        .map(|o| o.center)
        .enumerate()
        .collect();
    for (i, &p) in state.robots.iter().enumerate() {
        let others: Vec<(usize, Point)> = state
            .robots
            .iter()
            .copied()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .collect();
        let row = nearest_offsets(p, &goals, config.goal_obs)
            .into_iter()
            .chain(nearest_offsets(p, &others, config.robot_obs))
            .chain(nearest_offsets(p, &obstacles, config.obstacle_obs))
            .flatten();
        for (slot, v) in out.row_mut(i).iter_mut().zip(row) {
            *slot = v;
        }
    }
    out
}

/// Advance the world by one step under `actions` (one row per robot).
pub fn step(
    state: &WorldState,
    actions: ArrayView2<'_, f64>,
    config: &WorldConfig,
) -> Result<WorldState, WorldError> {
    if state.step >= config.max_steps {
        return Err(WorldError::EpisodeOver {
            step: state.step,
            max_steps: config.max_steps,
        });
    }
    let (rows, cols) = actions.dim();
    if rows != state.robots.len() || cols != 2 {
        return Err(WorldError::ActionShape {
            expected_rows: state.robots.len(),
            rows,
            cols,
        });
    }
    let scale = match config.dynamics {
        Dynamics::PointMass => 1.0,
        Dynamics::SingleIntegrator => config.dt,
    };
    let a_max = config.max_action;
    let w = config.arena_half_width;
    let mut robots = state.robots.clone();
    for (i, p) in robots.iter_mut().enumerate() {
        for d in 0..2 {
            let a = actions[[i, d]];
            if !a.is_finite() {
                return Err(WorldError::NonFiniteAction { robot: i });
            }
            p[d] = (p[d] + a.clamp(-a_max, a_max) * scale).clamp(-w, w);
        }
    }
    Ok(WorldState {
        robots,
        goals: state.goals.clone(),
        obstacles: state.obstacles.clone(),
        step: state.step + 1,
    })
}

/// Smallest pairwise robot distance; `+∞` with fewer than two robots.
pub fn min_separation(state: &WorldState) -> f64 {
    let mut best = f64::INFINITY;
    for (i, &p) in state.robots.iter().enumerate() {
        for &q in &state.robots[i + 1..] {
            best = best.min(distance(p, q));
        }
    }
    best
}

/// Number of robot pairs at or below the separation threshold.
pub fn robot_violations(state: &WorldState, min_separation: f64) -> usize {
    let mut count = 0;
    for (i, &p) in state.robots.iter().enumerate() {
        count += state.robots[i + 1..]
            .iter()
            .filter(|&&q| distance(p, q) <= min_separation)
            .count();
    }
    count
}

/// Number of (robot, obstacle) pairs whose surface gap is at or below `min_separation`.
pub fn obstacle_violations(state: &WorldState, config: &WorldConfig) -> usize {
    state
        .robots
        .iter()
        .map(|&p| {
            state
                .obstacles
                .iter()
                .filter(|o| {
                    distance(p, o.center) - o.radius - config.robot_radius <= config.min_separation
                })
                .count()
        })
        .sum()
}

/// Any robot-robot or robot-obstacle violation in this state.
pub fn in_collision(state: &WorldState, config: &WorldConfig) -> bool {
    min_separation(state) <= config.min_separation || obstacle_violations(state, config) > 0
}

/// Binary robot × goal matrix: entry `(i, j)` is set iff robot `i` is within
/// the coverage radius of goal `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMatrix {
    n_robots: usize,
    n_goals: usize,
    entries: Vec<bool>,
}

impl AssignmentMatrix {
    pub fn from_fn(n_robots: usize, n_goals: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut entries = Vec::with_capacity(n_robots * n_goals);
        for i in 0..n_robots {
            for j in 0..n_goals {
                entries.push(f(i, j));
            }
        }
        Self {
            n_robots,
            n_goals,
            entries,
        }
    }

    pub fn get(&self, robot: usize, goal: usize) -> bool {
        self.entries[robot * self.n_goals + goal]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_robots, self.n_goals)
    }
}

pub fn assignment_matrix(state: &WorldState, coverage_radius: f64) -> AssignmentMatrix {
    AssignmentMatrix::from_fn(state.robots.len(), state.goals.len(), |i, j| {
        distance(state.robots[i], state.goals[j]) <= coverage_radius
    })
}

/// `φᵀφ = I`: every goal is covered by exactly one robot and no robot covers
/// two goals.
pub fn goals_covered(phi: &AssignmentMatrix) -> bool {
    let (rows, cols) = phi.shape();
    if rows != cols {
        return false;
    }
    (0..cols).all(|j| {
        (0..cols).all(|k| {
            let dot = (0..rows)
                .filter(|&i| phi.get(i, j) && phi.get(i, k))
                .count();
            dot == usize::from(j == k)
        })
    })
}

pub fn is_covered(state: &WorldState, config: &WorldConfig) -> bool {
    goals_covered(&assignment_matrix(state, config.coverage_radius))
}

/// `-max_j min_i ‖p_i − g_j‖`: the negated distance from the worst-served goal
/// to its nearest robot.
pub fn goal_term(state: &WorldState) -> f64 {
    let worst = state
        .goals
        .iter()
        .map(|&g| {
            state
                .robots
                .iter()
                .map(|&p| distance(p, g))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    -worst
}

/// Centralized reward shared by every robot.
pub fn reward(state: &WorldState, config: &WorldConfig) -> f64 {
    let beta = config.collision_penalty;
    match config.reward_mode {
        RewardMode::Sparse => {
            if is_covered(state, config) {
                config.sparse_bonus
            } else if in_collision(state, config) {
                -beta
            } else {
                0.0
            }
        }
        RewardMode::Shaped => {
            let w = config.reward_weights;
            let r_goal = goal_term(state);
            let r_robot = -beta * robot_violations(state, config.min_separation) as f64;
            let r_obstacle = -beta * obstacle_violations(state, config) as f64;
            w.goal * r_goal + w.robot * r_robot + w.obstacle * r_obstacle
        }
    }
}

/// One line of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub robot_positions: Vec<Point>,
    pub reward: f64,
    pub covered: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn state(robots: Vec<Point>, goals: Vec<Point>) -> WorldState {
        WorldState {
            robots,
            goals,
            obstacles: vec![],
            step: 0,
        }
    }

    #[test]
    fn explicit_goals_are_placed_verbatim() {
        let cfg = WorldConfig {
            n_robots: 2,
            n_goals: 2,
            ..WorldConfig::default()
        };
        let formation = FormationSpec::Explicit {
            goals: vec![[1.0, 0.0], [-1.0, 0.0]],
        };
        let s = spawn_world(&cfg, 0, &formation).unwrap();
        assert_eq!(s.goals, vec![[1.0, 0.0], [-1.0, 0.0]]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn spawn_is_deterministic_and_separated() {
        let cfg = WorldConfig {
            n_robots: 8,
            n_goals: 8,
            ..WorldConfig::default()
        };
        let a = spawn_world(&cfg, 42, &FormationSpec::UniformRandom).unwrap();
        let b = spawn_world(&cfg, 42, &FormationSpec::UniformRandom).unwrap();
        assert_eq!(a, b);
        assert!(min_separation(&a) > cfg.min_separation);
        for (j, g) in a.goals.iter().enumerate() {
            for h in &a.goals[..j] {
                assert!(distance(*g, *h) > 2.0 * cfg.coverage_radius);
            }
        }
        let c = spawn_world(&cfg, 43, &FormationSpec::UniformRandom).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tiny_arena_is_infeasible() {
        let cfg = WorldConfig {
            n_robots: 10,
            n_goals: 10,
            arena_half_width: 0.01,
            robot_radius: 0.1,
            min_separation: 1.0,
            coverage_radius: 0.001,
            ..WorldConfig::default()
        };
        let err = spawn_world(&cfg, 0, &FormationSpec::Grid { spacing: 0.005 }).unwrap_err();
        assert!(matches!(err, WorldError::SpawnInfeasible { .. }), "{err:?}");
    }

    #[test]
    fn robots_avoid_obstacles() {
        let cfg = WorldConfig {
            n_robots: 6,
            n_goals: 6,
            arena_half_width: 2.0,
            obstacles: vec![Obstacle {
                center: [0.0, 0.0],
                radius: 1.0,
            }],
            ..WorldConfig::default()
        };
        let s = spawn_world(&cfg, 7, &FormationSpec::UniformRandom).unwrap();
        for p in &s.robots {
            assert!(distance(*p, [0.0, 0.0]) > 1.0 + cfg.robot_radius);
        }
    }

    #[test]
    fn explicit_goal_count_must_match() {
        let cfg = WorldConfig::default();
        let err = spawn_world(
            &cfg,
            0,
            &FormationSpec::Explicit {
                goals: vec![[0.0, 0.0]],
            },
        )
        .unwrap_err();
        assert_eq!(
            err,
            WorldError::GoalCountMismatch {
                expected: 3,
                got: 1
            }
        );
    }

    #[test]
    fn formations_have_expected_shape() {
        let line = FormationSpec::Line { spacing: 1.0 }
            .layout(3)
            .unwrap()
            .unwrap();
        assert_eq!(line, vec![[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
        let circle = FormationSpec::Circle { radius: 2.0 }
            .layout(4)
            .unwrap()
            .unwrap();
        for g in &circle {
            assert!((distance(*g, [0.0, 0.0]) - 2.0).abs() < 1e-12);
        }
        let grid = FormationSpec::Grid { spacing: 1.0 }
            .layout(4)
            .unwrap()
            .unwrap();
        assert_eq!(
            grid,
            vec![[-0.5, 0.5], [0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]]
        );
    }

    #[test]
    fn goal_block_is_distance_sorted() {
        let cfg = WorldConfig {
            n_robots: 1,
            n_goals: 3,
            goal_obs: 2,
            robot_obs: 0,
            ..WorldConfig::default()
        };
        let s = state(vec![[0.0, 0.0]], vec![[5.0, 5.0], [0.0, 2.0], [1.0, 0.0]]);
        let x = observe(&s, &cfg);
        assert_eq!(x, array![[1.0, 0.0, 0.0, 2.0]]);
    }

    #[test]
    fn robot_block_holds_relative_offset() {
        let cfg = WorldConfig {
            n_robots: 2,
            n_goals: 2,
            goal_obs: 0,
            robot_obs: 1,
            ..WorldConfig::default()
        };
        let s = state(vec![[0.0, 0.0], [3.0, 4.0]], vec![[9.0, 9.0], [-9.0, 9.0]]);
        let x = observe(&s, &cfg);
        assert_eq!(x.row(0).to_vec(), vec![3.0, 4.0]);
        assert_eq!(x.row(1).to_vec(), vec![-3.0, -4.0]);
    }

    #[test]
    fn equidistant_goals_break_ties_by_index() {
        let cfg = WorldConfig {
            n_robots: 1,
            n_goals: 2,
            goal_obs: 1,
            robot_obs: 0,
            ..WorldConfig::default()
        };
        let s = state(vec![[0.0, 0.0]], vec![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(observe(&s, &cfg).row(0).to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn no_obstacle_sensing_gives_narrow_rows() {
        let cfg = WorldConfig::default();
        assert_eq!(cfg.feature_width(), 2 * (cfg.goal_obs + cfg.robot_obs));
        let s = spawn_world(&cfg, 1, &FormationSpec::UniformRandom).unwrap();
        assert_eq!(observe(&s, &cfg).dim(), (3, cfg.feature_width()));
    }

    #[test]
    fn single_integrator_euler_step() {
        let cfg = WorldConfig {
            n_robots: 1,
            n_goals: 1,
            goal_obs: 1,
            robot_obs: 0,
            dynamics: Dynamics::SingleIntegrator,
            dt: 0.1,
            max_action: 1.0,
            ..WorldConfig::default()
        };
        let s = state(vec![[0.0, 0.0]], vec![[1.0, 1.0]]);
        let next = step(&s, array![[1.0, 0.0]].view(), &cfg).unwrap();
        assert_eq!(next.robots, vec![[0.1, 0.0]]);
        assert_eq!(next.step, 1);
    }

    #[test]
    fn point_mass_clamps_action() {
        let cfg = WorldConfig {
            n_robots: 1,
            n_goals: 1,
            goal_obs: 1,
            robot_obs: 0,
            max_action: 1.0,
            ..WorldConfig::default()
        };
        let s = state(vec![[0.0, 0.0]], vec![[1.0, 1.0]]);
        let next = step(&s, array![[5.0, 0.0]].view(), &cfg).unwrap();
        assert_eq!(next.robots, vec![[1.0, 0.0]]);
        let still = step(&s, array![[0.0, 0.0]].view(), &cfg).unwrap();
        assert_eq!(still.robots, s.robots);
        assert_eq!(still.step, 1);
    }

    #[test]
    fn positions_stay_in_arena() {
        let cfg = WorldConfig {
            n_robots: 1,
            n_goals: 1,
            goal_obs: 1,
            robot_obs: 0,
            arena_half_width: 1.0,
            ..WorldConfig::default()
        };
        let s = state(vec![[0.9, -0.9]], vec![[0.0, 0.0]]);
        let next = step(&s, array![[1.0, -1.0]].view(), &cfg).unwrap();
        assert_eq!(next.robots, vec![[1.0, -1.0]]);
    }

    #[test]
    fn stepping_past_horizon_fails() {
        let cfg = WorldConfig {
            n_robots: 1,
            n_goals: 1,
            goal_obs: 1,
            robot_obs: 0,
            max_steps: 1,
            ..WorldConfig::default()
        };
        let s = state(vec![[0.0, 0.0]], vec![[1.0, 1.0]]);
        let next = step(&s, array![[0.0, 0.0]].view(), &cfg).unwrap();
        let err = step(&next, array![[0.0, 0.0]].view(), &cfg).unwrap_err();
        assert!(matches!(err, WorldError::EpisodeOver { .. }));
    }

    #[test]
    fn bad_actions_are_rejected() {
        let cfg = WorldConfig::default();
        let s = state(vec![[0.0, 0.0]; 3], vec![[1.0, 1.0]; 3]);
        assert!(matches!(
            step(&s, array![[0.0, 0.0]].view(), &cfg),
            Err(WorldError::ActionShape { .. })
        ));
        let nan = array![[0.0, 0.0], [f64::NAN, 0.0], [0.0, 0.0]];
        assert_eq!(
            step(&s, nan.view(), &cfg),
            Err(WorldError::NonFiniteAction { robot: 1 })
        );
    }

    #[test]
    fn min_separation_cases() {
        assert_eq!(
            min_separation(&state(vec![[0.0, 0.0], [3.0, 4.0]], vec![])),
            5.0
        );
        let s = state(vec![[0.0, 0.0], [0.0, 0.1], [9.0, 9.0]], vec![]);
        assert_eq!(min_separation(&s), 0.1);
        assert_eq!(
            min_separation(&state(vec![[0.0, 0.0]], vec![])),
            f64::INFINITY
        );
    }

    #[test]
    fn assignment_matrix_thresholds() {
        let inside = assignment_matrix(&state(vec![[0.0, 0.0]], vec![[0.0, 0.05]]), 0.1);
        assert!(inside.get(0, 0));
        let outside = assignment_matrix(&state(vec![[0.0, 0.0]], vec![[1.0, 1.0]]), 0.1);
        assert!(!outside.get(0, 0));
        let shared = assignment_matrix(
            &state(vec![[0.0, 0.0], [0.0, 0.01]], vec![[0.0, 0.02], [5.0, 5.0]]),
            0.1,
        );
        assert!(shared.get(0, 0) && shared.get(1, 0));
        assert!(!shared.get(0, 1) && !shared.get(1, 1));
    }

    #[test]
    fn coverage_predicate_examples() {
        let identity = AssignmentMatrix::from_fn(3, 3, |i, j| i == j);
        assert!(goals_covered(&identity));
        let doubled = AssignmentMatrix::from_fn(2, 2, |_, j| j == 0);
        assert!(!goals_covered(&doubled));
        let swap = AssignmentMatrix::from_fn(2, 2, |i, j| i != j);
        assert!(goals_covered(&swap));
    }

    #[test]
    fn shaped_goal_term_only() {
        let cfg = WorldConfig {
            n_robots: 1,
            n_goals: 1,
            goal_obs: 1,
            robot_obs: 0,
            reward_weights: RewardWeights {
                goal: 1.0,
                robot: 0.5,
                obstacle: 0.5,
            },
            ..WorldConfig::default()
        };
        let s = state(vec![[0.0, 0.0]], vec![[3.0, 4.0]]);
        assert_eq!(reward(&s, &cfg), -5.0);
    }

    #[test]
    fn sparse_bonus_when_covered() {
        let cfg = WorldConfig {
            n_robots: 2,
            n_goals: 2,
            reward_mode: RewardMode::Sparse,
            sparse_bonus: 10.0,
            ..WorldConfig::default()
        };
        let covered = state(vec![[0.0, 0.0], [2.0, 0.0]], vec![[0.0, 0.05], [2.0, 0.05]]);
        assert_eq!(reward(&covered, &cfg), 10.0);
        let crash = state(vec![[0.0, 0.0], [0.1, 0.0]], vec![[3.0, 3.0], [-3.0, 3.0]]);
        assert_eq!(reward(&crash, &cfg), -cfg.collision_penalty);
        let idle = state(vec![[0.0, 0.0], [2.0, 0.0]], vec![[3.0, 3.0], [-3.0, 3.0]]);
        assert_eq!(reward(&idle, &cfg), 0.0);
    }

    #[test]
    fn shaped_counts_violating_pairs() {
        let delta = 0.25;
        let cfg = WorldConfig {
            n_robots: 2,
            n_goals: 2,
            min_separation: delta,
            collision_penalty: 1.0,
            reward_weights: RewardWeights {
                goal: 0.0,
                robot: 1.0,
                obstacle: 0.0,
            },
            ..WorldConfig::default()
        };
        let s = state(
            vec![[0.0, 0.0], [0.0, delta / 2.0]],
            vec![[0.0, 0.0], [0.0, delta / 2.0]],
        );
        assert_eq!(reward(&s, &cfg), -1.0);
    }

    #[test]
    fn obstacle_surface_violation() {
        let cfg = WorldConfig {
            n_robots: 1,
            n_goals: 1,
            goal_obs: 1,
            robot_obs: 0,
            obstacle_obs: 1,
            obstacles: vec![Obstacle {
                center: [1.0, 0.0],
                radius: 0.5,
            }],
            reward_weights: RewardWeights {
                goal: 0.0,
                robot: 0.0,
                obstacle: 1.0,
            },
            ..WorldConfig::default()
        };
        // gap = 1.0 - 0.5 - 0.1 = 0.4 > 0.25
        let mut s = state(vec![[0.0, 0.0]], vec![[-3.0, 0.0]]);
        s.obstacles = cfg.obstacles.clone();
        assert_eq!(reward(&s, &cfg), 0.0);
        s.robots = vec![[0.25, 0.0]];
        assert_eq!(reward(&s, &cfg), -1.0);
        assert!(in_collision(&s, &cfg));
        assert_eq!(
            observe(&s, &cfg).row(0).to_vec(),
            vec![-3.25, 0.0, 0.75, 0.0]
        );
    }

    #[test]
    fn config_validation_names_key() {
        let bad = WorldConfig {
            n_goals: 4,
            ..WorldConfig::default()
        };
        assert_eq!(bad.validate().unwrap_err().key, "n_goals");
        let bad = WorldConfig {
            min_separation: 0.1,
            robot_radius: 0.1,
            ..WorldConfig::default()
        };
        assert_eq!(bad.validate().unwrap_err().key, "min_separation");
        let bad = WorldConfig {
            robot_obs: 3,
            ..WorldConfig::default()
        };
        assert_eq!(bad.validate().unwrap_err().key, "robot_obs");
        assert!(WorldConfig::default().validate().is_ok());
    }
}
