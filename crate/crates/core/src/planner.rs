//! The goal-set planning loop: projected trajectory step toward the current
//! goal, tail-cost estimation, selector update, mode selection and grasp
//! refinement of the selected goal.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::chain::{BodyPoint, Configuration, SerialChain};
use crate::error::{invalid, Error, Result};
use crate::goalsel::{
    endpoint_distance_costs, entropy, estimate_goal_costs, raw_goal_costs, GoalSet, Selector,
    SelectorKind,
};
use crate::graspref::{cspace_isf_step, grasp_cost, GraspRefineConfig, GripperModel, IsfStatus};
use crate::scene::SceneSdf;
use crate::trajopt::{
    chomp_proj_step, chomp_step, motion_cost, motion_gradient, prior_cost, CollisionModel,
    MotionObjectiveConfig, SmoothnessOperator, Trajectory, DEFAULT_DENSE_STEPS, DEFAULT_RESOLUTION,
};

pub const DEFAULT_HORIZON: usize = 100;
pub const DEFAULT_BODY_POINTS_PER_PART: usize = 10;
/// Largest waypoint change (radians) still counted as a fixed point.
pub const CONVERGENCE_TOL: f64 = 1e-10;
/// Relative grasp-cost increase tolerated when writing back a refined goal.
pub const GUARD_TOLERANCE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreTermination {
    pub enabled: bool,
    /// Absolute smoothness bound; when absent the bound is
    /// `smoothness_factor` times the straight-line smoothness to the goal.
    pub smoothness_max: Option<f64>,
    pub smoothness_factor: f64,
    pub grasp_cost_max: f64,
    pub require_collision_free: bool,
}

impl Default for PreTermination {
    fn default() -> Self {
        PreTermination {
            enabled: true,
            smoothness_max: None,
            smoothness_factor: 3.0,
            grasp_cost_max: 0.05,
            require_collision_free: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Iteration horizon.
    pub horizon: usize,
    /// Free waypoints per trajectory.
    pub resolution: usize,
    pub selector: SelectorKind,
    pub trajopt: MotionObjectiveConfig,
    pub grasp: GraspRefineConfig,
    pub isf_steps_per_iter: usize,
    pub pre_termination: PreTermination,
    pub body_points_per_part: usize,
    /// Seeds the body-point sampling.
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: DEFAULT_HORIZON,
            resolution: DEFAULT_RESOLUTION,
            selector: SelectorKind::Md,
            trajopt: MotionObjectiveConfig::default(),
            grasp: GraspRefineConfig::default(),
            isf_steps_per_iter: 1,
            pre_termination: PreTermination::default(),
            body_points_per_part: DEFAULT_BODY_POINTS_PER_PART,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        self.trajopt.validate()?;
        self.grasp.validate()?;
        let p = &self.pre_termination;
        if self.resolution < 2 {
            return invalid("resolution must be at least 2");
        }
        if !(p.smoothness_factor >= 0.0 && p.grasp_cost_max >= 0.0)
            || p.smoothness_max.is_some_and(|s| !(s >= 0.0))
        {
            return invalid("pre-termination thresholds must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Converged,
    HorizonExhausted,
    NoFeasibleGoal,
}

impl PlanStatus {
    pub fn name(&self) -> &'static str {
        match self {
            PlanStatus::Converged => "converged",
            PlanStatus::HorizonExhausted => "horizon_exhausted",
            PlanStatus::NoFeasibleGoal => "no_feasible_goal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub motion_cost: f64,
    pub goal: usize,
    pub entropy: f64,
    pub grasp_cost: f64,
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    pub selected_goal: usize,
    /// Goal set after refinement.
    pub goals: GoalSet,
    pub log: Vec<IterationLog>,
    pub status: PlanStatus,
    pub wall_time: f64,
    /// Per-iteration cost vectors and distributions of the selector.
    pub costs: Vec<Vec<f64>>,
    pub distributions: Vec<Vec<f64>>,
}

impl PlanResult {
    /// `iteration,motion_cost,goal,entropy,grasp_cost` rows.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("iteration,motion_cost,goal,entropy,grasp_cost\n");
        for l in &self.log {
            out.push_str(&format!(
                "{},{:?},{},{:?},{:?}\n",
                l.iteration, l.motion_cost, l.goal, l.entropy, l.grasp_cost
            ));
        }
        out
    }

    /// One row per iteration: the cost vector then the distribution.
    pub fn selector_csv(&self) -> String {
        let g = self.goals.len();
        let mut out = String::from("iteration");
        for k in 0..g {
            out.push_str(&format!(",c{k}"));
        }
        for k in 0..g {
            out.push_str(&format!(",p{k}"));
        }
        out.push('\n');
        for (i, (c, p)) in self.costs.iter().zip(&self.distributions).enumerate() {
            out.push_str(&i.to_string());
            for v in c.iter().chain(p) {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Smoothstep interpolation with zero boundary velocity, `n` waypoints.
pub fn init_trajectory(q_start: &Configuration, goal: &Configuration, n: usize) -> Result<Trajectory> {
    if q_start.len() != goal.len() {
        return invalid("start and goal dimensions differ");
    }
    let delta = goal - q_start;
    let w = DMatrix::from_fn(n, q_start.len(), |i, j| {
        let t = (i + 1) as f64 / n as f64;
        q_start[j] + delta[j] * (3.0 * t * t - 2.0 * t * t * t)
    });
    let mut traj = Trajectory::new(q_start.clone(), w)?;
    // t = 1 must land on the goal bit-exactly
    let mut w = traj.waypoints().clone();
    w.row_mut(n - 1).copy_from(&goal.transpose());
    traj.set_waypoints(w)?;
    Ok(traj)
}

/// Feasible goal with the lowest tail cost from the start configuration.
pub fn initial_goal(
    goals: &GoalSet,
    q_start: &Configuration,
    model: &CollisionModel,
    cfg: &MotionObjectiveConfig,
    n: usize,
) -> Result<usize> {
    let probe = Trajectory::stationary(q_start, n)?;
    let raw = raw_goal_costs(&probe, 0, 1, goals, model, cfg)?;
    let mut best: Option<usize> = None;
    for (i, c) in raw.iter().enumerate() {
        if c.is_finite() && best.is_none_or(|b| *c < raw[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::NoFeasibleGoal)
}

/// Accepts a refined goal inside the joint limits whose grasp cost grew by
/// at most 10 %.
pub fn goal_update_guard(chain: &SerialChain, previous_cost: f64, refined: &Configuration, refined_cost: f64) -> bool {
    chain.within_limits(refined)
        && refined_cost.is_finite()
        && refined_cost <= previous_cost * (1.0 + GUARD_TOLERANCE)
}

/// Exact endpoint projection with no descent step.
pub fn snap_to_goal(traj: &Trajectory, goal: &Configuration, op: &SmoothnessOperator) -> Result<Trajectory> {
    let zero = DMatrix::zeros(traj.n(), traj.dof());
    chomp_proj_step(traj, goal, &zero, 1.0, op)
}

/// Smoothness of the straight line from `start` to `goal` at resolution `n`.
pub fn straight_line_smoothness(start: &Configuration, goal: &Configuration, n: usize) -> Result<f64> {
    Ok(2.0 * prior_cost(&Trajectory::linear(start, goal, n)?))
}

/// Goal-constrained covariant descent from the smoothstep initialization
/// until the waypoints stop moving or `max_iters` is reached. Returns the
/// lowest-cost iterate seen, since the obstacle term can make the descent
/// cycle without settling.
pub fn optimize_to_goal(
    q_start: &Configuration,
    goal: &Configuration,
    model: &CollisionModel,
    cfg: &MotionObjectiveConfig,
    op: &SmoothnessOperator,
    max_iters: usize,
) -> Result<Trajectory> {
    let mut traj = init_trajectory(q_start, goal, op.n())?;
    let mut best: Option<(f64, Trajectory)> = None;
    for _ in 0..max_iters {
        let (cost, v) = motion_gradient(&traj, model, cfg, op)?;
        if best.as_ref().is_none_or(|(c, _)| cost.total < *c) {
            best = Some((cost.total, traj.clone()));
        }
        let next = chomp_proj_step(&traj, goal, &v, cfg.eta_motion, op)?;
        let moved = (next.waypoints() - traj.waypoints()).abs().max();
        traj = next;
        if moved < CONVERGENCE_TOL {
            break;
        }
    }
    match best {
        Some((c, t)) if c < motion_cost(&traj, model, cfg)?.total => Ok(t),
        _ => Ok(traj),
    }
}

pub struct PlanningProblem<'a> {
    pub scene: &'a SceneSdf,
    pub chain: &'a SerialChain,
    pub gripper: &'a GripperModel,
    pub goals: &'a GoalSet,
    pub start: &'a Configuration,
}

impl PlanningProblem<'_> {
    pub fn body_points(&self, cfg: &PlannerConfig) -> Vec<BodyPoint> {
        self.chain.sample_body_points(cfg.body_points_per_part, cfg.seed)
    }
}

fn trajectory_ok(
    traj: &Trajectory,
    model: &CollisionModel,
    cfg: &PreTermination,
    start: &Configuration,
    goal: &Configuration,
) -> Result<bool> {
    let limit = match cfg.smoothness_max {
        Some(s) => s,
        None => cfg.smoothness_factor * straight_line_smoothness(start, goal, traj.n())?,
    };
    if 2.0 * prior_cost(traj) > limit {
        return Ok(false);
    }
    if cfg.require_collision_free && model.min_clearance_dense(traj, DEFAULT_DENSE_STEPS)? < model.scene.clearance() {
        return Ok(false);
    }
    Ok(true)
}

fn no_feasible(problem: &PlanningProblem, n: usize, started: Instant) -> Result<PlanResult> {
    Ok(PlanResult {
        trajectory: Trajectory::stationary(problem.start, n)?,
        selected_goal: 0,
        goals: problem.goals.clone(),
        log: Vec::new(),
        status: PlanStatus::NoFeasibleGoal,
        wall_time: started.elapsed().as_secs_f64(),
        costs: Vec::new(),
        distributions: Vec::new(),
    })
}

/// Runs the planning loop for at most `cfg.horizon` iterations.
pub fn plan(problem: &PlanningProblem, cfg: &PlannerConfig) -> Result<PlanResult> {
    let started = Instant::now();
    cfg.validate()?;
    let chain = problem.chain;
    if problem.start.len() != chain.dof() {
        return invalid("start configuration has the wrong dimension");
    }
    if problem.goals.is_empty() {
        return invalid("goal set is empty");
    }
    let n = cfg.resolution;
    let body_points = problem.body_points(cfg);
    let model = CollisionModel::new(problem.scene, chain, &body_points);
    let op = SmoothnessOperator::new(n)?;
    let mut goals = problem.goals.clone();
    if goals.feasible_count() == 0 {
        return no_feasible(problem, n, started);
    }
    let mut goal = initial_goal(&goals, problem.start, &model, &cfg.trajopt, n)?;
    let mut traj = init_trajectory(problem.start, goals.goal(goal), n)?;
    let horizon = cfg.horizon;
    let mut selector = Selector::new(cfg.selector, &goals, goal, horizon.max(1))?;
    let object = problem.scene.target.as_ref().map(|t| &t.surface);

    let grasp_of = |q: &Configuration| -> Result<f64> {
        match object {
            Some(o) => Ok(grasp_cost(q, problem.gripper, o, &model, &cfg.grasp)?.total),
            None => Ok(0.0),
        }
    };

    let mut log = Vec::new();
    let mut status = PlanStatus::HorizonExhausted;
    for i in 0..horizon {
        let target = goals.goal(goal).clone();
        let (_, v) = motion_gradient(&traj, &model, &cfg.trajopt, &op)?;
        let next = if cfg.selector == SelectorKind::Proj {
            // nearest goal to where the unconstrained step would end
            let free = chomp_step(&traj, &v, cfg.trajopt.eta_motion, &op)?;
            selector.observe(endpoint_distance_costs(&free.endpoint(), &goals)?)?;
            goal = selector.mode()?;
            chomp_proj_step(&traj, goals.goal(goal), &v, cfg.trajopt.eta_motion, &op)?
        } else {
            let next = chomp_proj_step(&traj, &target, &v, cfg.trajopt.eta_motion, &op)?;
            let c = estimate_goal_costs(&next, i, horizon, &goals, &model, &cfg.trajopt)?;
            selector.observe(c)?;
            goal = selector.mode()?;
            next
        };
        let moved = (next.waypoints() - traj.waypoints()).abs().max();
        traj = next;
        let projected_goal = goals.goal(goal).clone();

        let mut grasp = grasp_of(goals.goal(goal))?;
        if let Some(o) = object {
            for _ in 0..cfg.isf_steps_per_iter {
                let step = cspace_isf_step(goals.goal(goal), problem.gripper, o, &model, &cfg.grasp)?;
                if step.status != IsfStatus::Applied {
                    break;
                }
                let refined = grasp_of(&step.q)?;
                if goal_update_guard(chain, grasp, &step.q, refined) {
                    goals.replace(goal, step.q);
                    grasp = refined;
                }
            }
        }

        log.push(IterationLog {
            iteration: i,
            motion_cost: motion_cost(&traj, &model, &cfg.trajopt)?.total,
            goal,
            entropy: entropy(selector.distribution()),
            grasp_cost: grasp,
        });

        let goal_fixed = target == projected_goal && projected_goal == *goals.goal(goal);
        if goal_fixed && moved < CONVERGENCE_TOL {
            // a colliding fixed point is final only when the goal cannot move
            let settled = matches!(cfg.selector, SelectorKind::Fixed | SelectorKind::Proj)
                || goals.feasible_count() == 1
                || model.min_clearance_dense(&traj, DEFAULT_DENSE_STEPS)? >= 0.0;
            if settled {
                status = PlanStatus::Converged;
                break;
            }
        }
        let pre = &cfg.pre_termination;
        if pre.enabled && grasp <= pre.grasp_cost_max {
            let snapped = snap_to_goal(&traj, goals.goal(goal), &op)?;
            if trajectory_ok(&snapped, &model, pre, problem.start, goals.goal(goal))? {
                status = PlanStatus::Converged;
                traj = snapped;
                break;
            }
        }
    }
    let trajectory = snap_to_goal(&traj, goals.goal(goal), &op)?;
    let history = selector.history();
    Ok(PlanResult {
        trajectory,
        selected_goal: goal,
        log,
        status,
        wall_time: started.elapsed().as_secs_f64(),
        costs: history.costs().to_vec(),
        distributions: history.distributions().to_vec(),
        goals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn smoothstep_initialization() {
        let a = DVector::from_vec(vec![0.2, -0.4]);
        let b = DVector::from_vec(vec![1.0, 0.6]);
        let t = init_trajectory(&a, &b, 10).unwrap();
        assert_eq!(t.endpoint(), b);
        assert_eq!(t.start(), &a);
        let mid = t.point(5);
        assert!((mid - (&a + &b) / 2.0).abs().max() < 1e-15);
        let still = init_trajectory(&a, &a, 10).unwrap();
        assert!(still.waypoints().row_iter().all(|r| r.transpose() == a));
        assert!(init_trajectory(&a, &DVector::zeros(3), 10).is_err());
    }

    #[test]
    fn guard_rules() {
        let chain = SerialChain::planar(&[1.0, 1.0], 0.05, 1.0).unwrap();
        let inside = DVector::from_vec(vec![0.5, 0.5]);
        let outside = DVector::from_vec(vec![1.5, 0.5]);
        assert!(goal_update_guard(&chain, 1.0, &inside, 0.8));
        assert!(goal_update_guard(&chain, 1.0, &inside, 1.05));
        assert!(!goal_update_guard(&chain, 1.0, &inside, 1.2));
        assert!(!goal_update_guard(&chain, 1.0, &outside, 0.5));
    }
}
