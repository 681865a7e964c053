//! Scene generation, evaluation metrics, hindsight oracle and the
//! selector / ablation comparison harness.

use nalgebra::{Isometry3, Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::chain::{Configuration, Joint, LinkPart, SerialChain};
use crate::error::{invalid, Error, Result};
use crate::geometry::{random_unit, Primitive};
use crate::goalsel::{raw_goal_costs, GoalSet, SelectorKind};
use crate::graspref::{grasp_cost, hand_collision_at, GripperDims, GripperModel};
use crate::planner::{
    optimize_to_goal, plan, PlanResult, PlannerConfig, PlanningProblem, DEFAULT_BODY_POINTS_PER_PART,
};
use crate::scene::{obstacle_cost, Field, SceneSdf, Target, DEFAULT_SURFACE_POINTS};
use crate::trajopt::{
    interpolate, motion_cost, prior_cost, CollisionModel, MotionObjectiveConfig, SmoothnessOperator,
    Trajectory, DEFAULT_DENSE_STEPS, DEFAULT_RESOLUTION,
};

/// Success threshold as a multiple of the straight-line smoothness.
pub const SUCCESS_SMOOTHNESS_FACTOR: f64 = 3.0;
/// Iteration cap of the per-goal oracle optimization.
pub const ORACLE_MAX_ITERS: usize = 500;
const IK_TOL: f64 = 1e-6;
const IK_ITERS: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChainPreset {
    #[serde(rename = "planar-3")]
    Planar3,
    #[serde(rename = "planar-7")]
    Planar7,
    #[serde(rename = "spatial-6")]
    Spatial6,
}

impl ChainPreset {
    pub const ALL: [ChainPreset; 3] = [ChainPreset::Planar3, ChainPreset::Planar7, ChainPreset::Spatial6];

    pub fn name(&self) -> &'static str {
        match self {
            ChainPreset::Planar3 => "planar-3",
            ChainPreset::Planar7 => "planar-7",
            ChainPreset::Spatial6 => "spatial-6",
        }
    }

    pub fn is_planar(&self) -> bool {
        !matches!(self, ChainPreset::Spatial6)
    }

    /// Bare arm (no hand geometry); the gripper origin sits just past the
    /// last link so that a palm of the default depth fits behind it.
    pub fn arm(&self) -> SerialChain {
        let palm = GripperDims::default().palm_depth;
        match self {
            ChainPreset::Planar3 => planar_arm(&[0.35, 0.3, 0.25], 0.03, 2.8, palm),
            ChainPreset::Planar7 => planar_arm(&[0.18, 0.16, 0.14, 0.12, 0.12, 0.1, 0.08], 0.025, 2.0, palm),
            ChainPreset::Spatial6 => spatial_arm(palm),
        }
    }
}

impl fmt::Display for ChainPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChainPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChainPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown chain preset `{s}`")))
    }
}

fn planar_arm(lengths: &[f64], radius: f64, limit: f64, palm: f64) -> SerialChain {
    let mut joints = Vec::new();
    let mut parts = Vec::new();
    let mut prev = 0.0;
    for (i, &len) in lengths.iter().enumerate() {
        joints.push(Joint::revolute(Isometry3::translation(prev, 0.0, 0.0), Vector3::z(), [-limit, limit]));
        parts.push(LinkPart {
            link: i,
            shape: Primitive::capsule(Point3::origin(), Point3::new(len, 0.0, 0.0), radius),
            hand: false,
        });
        prev = len;
    }
    SerialChain::new(Isometry3::identity(), joints, parts, Isometry3::translation(prev + radius + palm, 0.0, 0.0))
        .expect("preset chain is valid")
}

fn spatial_arm(palm: f64) -> SerialChain {
    let r = 0.035;
    let joints = vec![
        Joint::revolute(Isometry3::identity(), Vector3::z(), [-2.9, 2.9]),
        Joint::revolute(Isometry3::translation(0.0, 0.0, 0.3), Vector3::y(), [-2.0, 2.0]),
        Joint::revolute(Isometry3::translation(0.35, 0.0, 0.0), Vector3::y(), [-2.6, 2.6]),
        Joint::revolute(Isometry3::translation(0.3, 0.0, 0.0), Vector3::x(), [-2.9, 2.9]),
        Joint::revolute(Isometry3::identity(), Vector3::y(), [-2.0, 2.0]),
        Joint::revolute(Isometry3::identity(), Vector3::x(), [-2.9, 2.9]),
    ];
    let capsule = |link, len: f64, axis: Vector3<f64>| LinkPart {
        link,
        shape: Primitive::capsule(Point3::origin(), Point3::from(axis * len), r),
        hand: false,
    };
    let parts = vec![
        capsule(0, 0.3, Vector3::z()),
        capsule(1, 0.35, Vector3::x()),
        capsule(2, 0.3, Vector3::x()),
        capsule(5, 0.05, Vector3::x()),
    ];
    SerialChain::new(Isometry3::identity(), joints, parts, Isometry3::translation(0.05 + r + palm, 0.0, 0.0))
        .expect("preset chain is valid")
}

/// Adds the gripper's palm and fingers to the last link.
pub fn attach_gripper(arm: SerialChain, gripper: &GripperModel) -> Result<SerialChain> {
    let parts = gripper.link_parts(arm.dof() - 1, arm.ee_offset());
    arm.with_parts(parts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Sphere,
    Box,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneFamily {
    /// Random clutter around a target with approach-sampled grasps.
    Random,
    /// Two explicit goals; the one that looks cheapest from the start has a
    /// colliding straight-line approach.
    Blocked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub preset: ChainPreset,
    pub family: SceneFamily,
    /// Inclusive range of obstacle counts.
    pub obstacles: [usize; 2],
    pub target: TargetKind,
    pub goals: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            preset: ChainPreset::Planar3,
            family: SceneFamily::Random,
            obstacles: [3, 7],
            target: TargetKind::Sphere,
            goals: 30,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.obstacles[0] > self.obstacles[1] {
            return invalid("obstacle range has min > max");
        }
        if self.goals == 0 {
            return invalid("goal-set size must be at least 1");
        }
        Ok(())
    }
}

/// A complete planning instance.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub scene: SceneSdf,
    /// Arm with the hand attached.
    pub chain: SerialChain,
    pub gripper: GripperModel,
    pub goals: GoalSet,
    pub start: Configuration,
    /// Requested goals that could not be generated.
    pub missing_goals: usize,
}

impl Scenario {
    pub fn problem(&self) -> PlanningProblem<'_> {
        PlanningProblem {
            scene: &self.scene,
            chain: &self.chain,
            gripper: &self.gripper,
            goals: &self.goals,
            start: &self.start,
        }
    }

    pub fn is_planar(&self) -> bool {
        self.chain.joints().iter().all(|j| j.axis.into_inner() == Vector3::z())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn random_configuration(chain: &SerialChain, rng: &mut ChaCha8Rng) -> Configuration {
    Configuration::from_iterator(chain.dof(), chain.limits().map(|[lo, hi]| uniform(rng, lo, hi)))
}

/// Smallest signed distance of any body point at `q` (target ignored near
/// the gripper), plus whether any object sample penetrates the hand.
fn configuration_clear(model: &CollisionModel, gripper: &GripperModel, q: &Configuration) -> Result<bool> {
    if !model.chain.within_limits(q) {
        return Ok(false);
    }
    let traj = Trajectory::stationary(q, 2)?;
    if model.min_clearance(&traj)? < model.scene.clearance() {
        return Ok(false);
    }
    if let Some(t) = &model.scene.target {
        let ee = model.chain.end_effector(q)?;
        let inv = ee.inverse();
        if t.surface.points().iter().any(|p| gripper.hand_distance(&(inv * p)).0 < 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Extent of `shape` along unit direction `a` from its center.
fn support(shape: &Primitive, a: &Vector3<f64>) -> f64 {
    match shape {
        Primitive::Sphere { radius, .. } => *radius,
        Primitive::Box {
            half_extents, rotation, ..
        } => {
            let r = UnitQuaternion::from_scaled_axis(*rotation);
            (0..3)
                .map(|i| half_extents[i] * (r * Vector3::ith(i, 1.0)).dot(a).abs())
                .sum()
        }
        Primitive::Capsule { a: p, b: q, radius } => 0.5 * (q - p).dot(a).abs() + radius,
    }
}

fn shape_center(shape: &Primitive) -> Point3<f64> {
    match shape {
        Primitive::Sphere { center, .. } | Primitive::Box { center, .. } => *center,
        Primitive::Capsule { a, b, .. } => Point3::from((a.coords + b.coords) * 0.5),
    }
}

/// Approach-sampled grasps: gripper `x` along a random approach direction,
/// palm origin one finger length outside the object, collision-free IK.
pub fn sample_approach_goals(
    chain: &SerialChain,
    gripper: &GripperModel,
    scene: &SceneSdf,
    count: usize,
    planar: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(GoalSet, usize)> {
    let target = scene
        .target
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("approach sampling needs a target".into()))?;
    let center = shape_center(&target.shape);
    let body_points = chain.sample_body_points(4, 0);
    let model = CollisionModel::new(scene, chain, &body_points);
    let mut goals = Vec::new();
    let mut feasible = Vec::new();
    for _ in 0..4 * count {
        if goals.len() == count {
            break;
        }
        let (approach, up) = if planar {
            let psi = uniform(rng, -PI, PI);
            (Vector3::new(psi.cos(), psi.sin(), 0.0), Vector3::z())
        } else {
            (random_unit(rng), random_unit(rng))
        };
        let position = center - approach * (support(&target.shape, &approach) + gripper.finger_length());
        let pose = crate::chain::pose_from_approach(position, &approach, &up);
        let mut solved = None;
        for attempt in 0..4 {
            let seed = if attempt == 0 && !planar {
                Configuration::zeros(chain.dof())
            } else {
                random_configuration(chain, rng)
            };
            if let Some(q) = chain.inverse_kinematics(&pose, &seed, IK_TOL, IK_ITERS)?.configuration().cloned() {
                solved = Some(q);
                break;
            }
        }
        if let Some(q) = solved {
            feasible.push(configuration_clear(&model, gripper, &q)?);
            goals.push(q);
        }
    }
    let missing = count - goals.len();
    if missing > 0 {
        log::warn!("generated {} of {count} goals", goals.len());
    }
    Ok((GoalSet::new(goals, feasible)?, missing))
}

fn random_target(kind: TargetKind, center: Point3<f64>, planar: bool, rng: &mut ChaCha8Rng) -> Primitive {
    match kind {
        TargetKind::Sphere => Primitive::sphere(center, uniform(rng, 0.025, 0.04)),
        TargetKind::Box => {
            let rotation = if planar {
                Vector3::z() * uniform(rng, -PI, PI)
            } else {
                random_unit(rng) * uniform(rng, 0.0, PI)
            };
            Primitive::Box {
                center,
                half_extents: Vector3::new(uniform(rng, 0.02, 0.035), uniform(rng, 0.02, 0.035), 0.03),
                rotation,
            }
        }
    }
}

fn random_obstacle(center: Point3<f64>, rng: &mut ChaCha8Rng) -> Primitive {
    let size = uniform(rng, 0.04, 0.08);
    match rng.random_range(0..3) {
        0 => Primitive::sphere(center, size),
        1 => Primitive::Box {
            center,
            half_extents: Vector3::new(size, uniform(rng, 0.5, 1.0) * size, 0.1),
            rotation: Vector3::z() * uniform(rng, -PI, PI),
        },
        _ => Primitive::capsule(center - Vector3::z() * 0.1, center + Vector3::z() * 0.1, 0.75 * size),
    }
}

fn primitive_gap(a: &Primitive, b: &Primitive) -> f64 {
    // conservative: center distance minus both supports along the line
    let ca = shape_center(a);
    let cb = shape_center(b);
    let d = cb - ca;
    let n = d.norm();
    if n == 0.0 {
        return -1.0;
    }
    let u = d / n;
    n - support(a, &u) - support(b, &u)
}

/// Deterministic scene for `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scenario> {
    spec.validate()?;
    match spec.family {
        SceneFamily::Random => random_scene(spec),
        SceneFamily::Blocked => blocked_goal_scene(spec),
    }
}

fn random_scene(spec: &SceneSpec) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gripper = GripperModel::new(GripperDims::default())?;
    let chain = attach_gripper(spec.preset.arm(), &gripper)?;
    let planar = spec.preset.is_planar();

    // the arm starts folded and turned away from the target; clutter sits
    // around the target, outside the folded arm's sweep
    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let phi = uniform(&mut rng, -PI / 2.0, PI / 2.0);
    let (center, start) = if planar {
        let radius = uniform(&mut rng, 0.55, 0.72);
        let mut start = Configuration::zeros(chain.dof());
        start[0] = phi + side * uniform(&mut rng, 1.0, 1.6);
        let fold = uniform(&mut rng, 2.4, 3.0) / (chain.dof() as f64 - 1.0);
        for j in 1..chain.dof() {
            start[j] = -side * fold;
        }
        chain.clamp(&mut start);
        (Point3::new(radius * phi.cos(), radius * phi.sin(), 0.0), start)
    } else {
        let radius = uniform(&mut rng, 0.45, 0.6);
        let height = uniform(&mut rng, 0.1, 0.4);
        let mut start = Configuration::zeros(chain.dof());
        start[0] = phi + side * uniform(&mut rng, 1.0, 1.6);
        start[1] = uniform(&mut rng, -1.2, -0.8);
        start[2] = uniform(&mut rng, 1.8, 2.3);
        chain.clamp(&mut start);
        (Point3::new(radius * phi.cos(), radius * phi.sin(), height), start)
    };
    let target = Target::new(
        random_target(spec.target, center, planar, &mut rng),
        DEFAULT_SURFACE_POINTS,
        spec.seed,
    )?;

    let count = if spec.obstacles[1] > spec.obstacles[0] {
        rng.random_range(spec.obstacles[0]..=spec.obstacles[1])
    } else {
        spec.obstacles[0]
    };
    let probe_points = chain.sample_body_points(6, 0);
    let mut obstacles: Vec<Field> = Vec::new();
    for _ in 0..count {
        for _ in 0..200 {
            let dir = if planar {
                let psi = uniform(&mut rng, -PI, PI);
                Vector3::new(psi.cos(), psi.sin(), 0.0)
            } else {
                random_unit(&mut rng)
            };
            let at = center + dir * uniform(&mut rng, 0.15, 0.32);
            if at.coords.xy().norm() < 0.45 || (!planar && at.z < 0.0) {
                continue;
            }
            let shape = random_obstacle(at, &mut rng);
            if primitive_gap(&shape, &target.shape) < 0.1 {
                continue;
            }
            let mut trial = obstacles.clone();
            trial.push(Field::Primitive(shape));
            let scene = SceneSdf::new(trial, None);
            let model = CollisionModel::new(&scene, &chain, &probe_points);
            if model.min_clearance(&Trajectory::stationary(&start, 2)?)? < 0.08 {
                continue;
            }
            obstacles = scene.obstacles;
            break;
        }
    }
    let scene = SceneSdf::new(obstacles, Some(target));
    let (goals, missing_goals) = sample_approach_goals(&chain, &gripper, &scene, spec.goals, planar, &mut rng)?;
    Ok(Scenario {
        scene,
        chain,
        gripper,
        goals,
        start,
        missing_goals,
    })
}

/// Largest initial-estimate ratio between the clear goal and the blocked one.
pub const BLOCKED_COST_RATIO: f64 = 1.03;
const BLOCKED_ATTEMPTS: usize = 200_000;

/// Two-goal planar scene with two spherical obstacles. The goal that looks
/// cheapest from the start can only be reached along a straight line that
/// collides; the other goal is nearly as cheap and its straight line is clear.
pub fn blocked_goal_scene(spec: &SceneSpec) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gripper = GripperModel::new(GripperDims::default())?;
    let chain = attach_gripper(ChainPreset::Planar3.arm(), &gripper)?;
    let cfg = MotionObjectiveConfig::default();
    let points = chain.sample_body_points(DEFAULT_BODY_POINTS_PER_PART, 0);
    let probe = Trajectory::stationary(&Configuration::zeros(chain.dof()), DEFAULT_RESOLUTION)?;
    let n = probe.n();
    for _ in 0..BLOCKED_ATTEMPTS {
        let mut config = || Configuration::from_fn(chain.dof(), |_, _| rng.random_range(-2.5..2.5));
        let (start, a, b) = (config(), config(), config());
        let obstacles = (0..2)
            .map(|_| {
                let r = uniform(&mut rng, 0.2, 0.8);
                let t = uniform(&mut rng, -PI, PI);
                Field::Primitive(Primitive::sphere(
                    Point3::new(r * t.cos(), r * t.sin(), 0.0),
                    uniform(&mut rng, 0.05, 0.15),
                ))
            })
            .collect();
        let scene = SceneSdf::new(obstacles, None);
        let model = CollisionModel::new(&scene, &chain, &points);
        let clear = |q: &Configuration| model.min_clearance(&Trajectory::stationary(q, 2)?);
        if clear(&start)? < 0.05 || clear(&a)? < 0.05 || clear(&b)? < 0.05 {
            continue;
        }
        let mut goals = GoalSet::all_feasible(vec![a, b]);
        let probe = Trajectory::stationary(&start, n)?;
        let raw = raw_goal_costs(&probe, 0, 1, &goals, &model, &cfg)?;
        let (blocked, open) = if raw[0] <= raw[1] { (0, 1) } else { (1, 0) };
        if raw[open] > BLOCKED_COST_RATIO * raw[blocked] {
            continue;
        }
        let line = |g: usize| {
            model.min_clearance_dense(&Trajectory::linear(&start, goals.goal(g), n)?, DEFAULT_DENSE_STEPS)
        };
        if line(blocked)? >= 0.0 || line(open)? < 0.1 {
            continue;
        }
        if blocked == 1 {
            goals = GoalSet::all_feasible(vec![goals.goal(1).clone(), goals.goal(0).clone()]);
        }
        return Ok(Scenario {
            scene,
            chain,
            gripper,
            goals,
            start,
            missing_goals: 0,
        });
    }
    Err(Error::NumericalFailure(format!("no blocked-goal scene found for seed {}", spec.seed)))
}

/// Obstacle cost summed over dense samples and body points whose clearance
/// is below the scene's clearance threshold.
pub fn collision_metric(traj: &Trajectory, model: &CollisionModel) -> Result<f64> {
    let site = model.grasp_site(&traj.endpoint())?;
    let mut total = 0.0;
    for q in interpolate(traj, DEFAULT_DENSE_STEPS)? {
        let f = model.evaluate(&q, &site)?;
        for d in f.distance {
            if d < model.scene.clearance() {
                total += obstacle_cost(d, model.scene.padding());
            }
        }
    }
    Ok(total)
}

/// `sum |q_{i+1} - q_i|^2 / dt`, twice the prior.
pub fn smoothness_metric(traj: &Trajectory) -> f64 {
    2.0 * prior_cost(traj)
}

/// Threshold for planning success between `start` and `goal`.
pub fn smoothness_threshold(start: &Configuration, goal: &Configuration, n: usize) -> Result<f64> {
    Ok(SUCCESS_SMOOTHNESS_FACTOR * smoothness_metric(&Trajectory::linear(start, goal, n)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub collision: f64,
    pub smoothness: f64,
    pub smoothness_threshold: f64,
    pub planning_success: bool,
    pub grasp_cost: f64,
    pub motion_cost: f64,
    pub time: f64,
}

pub fn planning_success(collision: f64, smoothness: f64, threshold: f64) -> bool {
    collision == 0.0 && smoothness <= threshold
}

pub fn evaluate_plan(scenario: &Scenario, cfg: &PlannerConfig, result: &PlanResult) -> Result<MetricsReport> {
    let problem = scenario.problem();
    let body_points = problem.body_points(cfg);
    let model = CollisionModel::new(&scenario.scene, &scenario.chain, &body_points);
    let traj = &result.trajectory;
    let collision = collision_metric(traj, &model)?;
    let smoothness = smoothness_metric(traj);
    let threshold = smoothness_threshold(&scenario.start, &traj.endpoint(), traj.n())?;
    let grasp = match &scenario.scene.target {
        Some(t) => grasp_cost(&traj.endpoint(), &scenario.gripper, &t.surface, &model, &cfg.grasp)?.total,
        None => 0.0,
    };
    Ok(MetricsReport {
        collision,
        smoothness,
        smoothness_threshold: threshold,
        planning_success: planning_success(collision, smoothness, threshold),
        grasp_cost: grasp,
        motion_cost: motion_cost(traj, &model, &cfg.trajopt)?.total,
        time: result.wall_time,
    })
}

/// Feasible goal whose goal-constrained optimization reaches the lowest
/// motion cost over its iterates (ties within 1e-9 keep the lower index).
pub fn oracle_best_goal(scenario: &Scenario, cfg: &PlannerConfig) -> Result<(usize, f64)> {
    let body_points = scenario.problem().body_points(cfg);
    let model = CollisionModel::new(&scenario.scene, &scenario.chain, &body_points);
    let op = SmoothnessOperator::new(cfg.resolution)?;
    let mut best: Option<(usize, f64)> = None;
    for g in 0..scenario.goals.len() {
        if !scenario.goals.is_feasible(g) {
            continue;
        }
        let traj = optimize_to_goal(&scenario.start, scenario.goals.goal(g), &model, &cfg.trajopt, &op, ORACLE_MAX_ITERS)?;
        let cost = motion_cost(&traj, &model, &cfg.trajopt)?.total;
        if best.is_none_or(|(_, c)| cost < c - 1e-9) {
            best = Some((g, cost));
        }
    }
    best.ok_or(Error::NoFeasibleGoal)
}

/// Mean metrics of one selector (or one ablation value).
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub runs: usize,
    pub planning_success: f64,
    pub smoothness: f64,
    pub collision: f64,
    pub grasp_cost: f64,
    pub time: f64,
}

fn summarize(label: String, reports: &[MetricsReport]) -> SummaryRow {
    let k = reports.len().max(1) as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    SummaryRow {
        label,
        runs: reports.len(),
        planning_success: mean(|r| if r.planning_success { 1.0 } else { 0.0 }),
        smoothness: mean(|r| r.smoothness),
        collision: mean(|r| r.collision),
        grasp_cost: mean(|r| r.grasp_cost),
        time: mean(|r| r.time),
    }
}

/// Plans one scenario; a scenario without feasible goals counts as a
/// failed run with infinite metrics.
pub fn run_one(scenario: &Scenario, cfg: &PlannerConfig) -> Result<MetricsReport> {
    let result = plan(&scenario.problem(), cfg)?;
    if result.status == crate::planner::PlanStatus::NoFeasibleGoal {
        return Ok(MetricsReport {
            collision: f64::INFINITY,
            smoothness: f64::INFINITY,
            smoothness_threshold: 0.0,
            planning_success: false,
            grasp_cost: f64::INFINITY,
            motion_cost: f64::INFINITY,
            time: result.wall_time,
        });
    }
    evaluate_plan(scenario, cfg, &result)
}

/// Every `(scene, run)` pair for each selector; run `r` uses planner seed
/// `base.seed + r`. Results are collected in task order, so the table does
/// not depend on scheduling.
pub fn compare_selectors(
    scenarios: &[Scenario],
    selectors: &[SelectorKind],
    runs: usize,
    base: &PlannerConfig,
) -> Result<Vec<SummaryRow>> {
    if scenarios.is_empty() {
        return Ok(Vec::new());
    }
    let tasks: Vec<(usize, usize, usize)> = (0..selectors.len())
        .flat_map(|s| (0..scenarios.len()).flat_map(move |i| (0..runs).map(move |r| (s, i, r))))
        .collect();
    let reports: Vec<MetricsReport> = tasks
        .par_iter()
        .map(|&(s, i, r)| {
            let cfg = PlannerConfig {
                selector: selectors[s],
                seed: base.seed + r as u64,
                ..base.clone()
            };
            run_one(&scenarios[i], &cfg)
        })
        .collect::<Result<_>>()?;
    let per = scenarios.len() * runs;
    Ok(selectors
        .iter()
        .enumerate()
        .map(|(s, kind)| summarize(kind.to_string(), &reports[s * per..(s + 1) * per]))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationParameter {
    #[serde(rename = "n")]
    Resolution,
    #[serde(rename = "lambda")]
    Lambda,
}

impl AblationParameter {
    pub fn name(&self) -> &'static str {
        match self {
            AblationParameter::Resolution => "n",
            AblationParameter::Lambda => "lambda",
        }
    }

    pub fn apply(&self, cfg: &PlannerConfig, value: f64) -> Result<PlannerConfig> {
        let mut out = cfg.clone();
        match self {
            AblationParameter::Resolution => {
                if value < 2.0 || value.fract() != 0.0 {
                    return invalid("resolution values must be integers >= 2");
                }
                out.resolution = value as usize;
            }
            AblationParameter::Lambda => {
                // keep the prior contraction of the base config so large weights stay stable
                let base = &cfg.trajopt;
                if value > base.lambda && base.lambda > 0.0 {
                    out.trajopt.eta_motion = base.eta_motion * value / base.lambda;
                }
                out.trajopt.lambda = value;
                out.trajopt.validate()?;
            }
        }
        Ok(out)
    }
}

/// One row per parameter value, averaged over scenarios and runs.
pub fn ablation(
    scenarios: &[Scenario],
    parameter: AblationParameter,
    values: &[f64],
    runs: usize,
    base: &PlannerConfig,
) -> Result<Vec<SummaryRow>> {
    let configs: Vec<PlannerConfig> = values
        .iter()
        .map(|v| parameter.apply(base, *v))
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize, usize)> = (0..values.len())
        .flat_map(|v| (0..scenarios.len()).flat_map(move |i| (0..runs).map(move |r| (v, i, r))))
        .collect();
    let reports: Vec<MetricsReport> = tasks
        .par_iter()
        .map(|&(v, i, r)| {
            let cfg = PlannerConfig {
                seed: base.seed + r as u64,
                ..configs[v].clone()
            };
            run_one(&scenarios[i], &cfg)
        })
        .collect::<Result<_>>()?;
    let per = scenarios.len() * runs;
    Ok(values
        .iter()
        .enumerate()
        .map(|(v, value)| summarize(value.to_string(), &reports[v * per..(v + 1) * per]))
        .collect())
}

pub const SELECTOR_CSV_HEADER: &str = "selector,runs,planning_success,smoothness,collision,grasp_cost";

pub fn selector_table_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SELECTOR_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:?},{:?},{:?},{:?}\n",
            r.label, r.runs, r.planning_success, r.smoothness, r.collision, r.grasp_cost
        ));
    }
    out
}

pub fn ablation_table_csv(parameter: AblationParameter, rows: &[SummaryRow]) -> String {
    let mut out = String::from("parameter,value,runs,planning_success,smoothness,collision,grasp_cost\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:?},{:?},{:?},{:?}\n",
            parameter.name(),
            r.label,
            r.runs,
            r.planning_success,
            r.smoothness,
            r.collision,
            r.grasp_cost
        ));
    }
    out
}

/// A group of scene seeds sharing one spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneGroup {
    #[serde(flatten)]
    pub spec: SceneSpec,
    /// Number of consecutive seeds starting at `spec.seed`.
    pub count: usize,
}

impl Default for SceneGroup {
    fn default() -> Self {
        SceneGroup {
            spec: SceneSpec::default(),
            count: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub parameter: AblationParameter,
    pub values: Vec<f64>,
    #[serde(default = "default_ablation_selector")]
    pub selector: SelectorKind,
}

fn default_ablation_selector() -> SelectorKind {
    SelectorKind::Md
}

/// Benchmark manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    pub runs: usize,
    pub selectors: Vec<SelectorKind>,
    pub planner: PlannerConfig,
    pub scenes: Vec<SceneGroup>,
    pub ablation: Option<AblationSpec>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            runs: 3,
            selectors: SelectorKind::ALL.to_vec(),
            planner: PlannerConfig::default(),
            scenes: Vec::new(),
            ablation: None,
        }
    }
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        m.planner.validate()?;
        for g in &m.scenes {
            g.spec.validate()?;
        }
        Ok(m)
    }

    pub fn specs(&self) -> Vec<SceneSpec> {
        self.scenes
            .iter()
            .flat_map(|g| {
                (0..g.count as u64).map(move |k| SceneSpec {
                    seed: g.spec.seed + k,
                    ..g.spec.clone()
                })
            })
            .collect()
    }
}

/// Generated tables of a manifest run, as CSV text.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchOutput {
    pub selectors_csv: String,
    pub ablation_csv: Option<String>,
    pub selector_rows: Vec<SummaryRow>,
    pub ablation_rows: Vec<SummaryRow>,
}

pub fn run_manifest(manifest: &Manifest) -> Result<BenchOutput> {
    let scenarios: Vec<Scenario> = manifest
        .specs()
        .par_iter()
        .map(generate_scene)
        .collect::<Result<_>>()?;
    let selector_rows = compare_selectors(&scenarios, &manifest.selectors, manifest.runs, &manifest.planner)?;
    let (ablation_csv, ablation_rows) = match &manifest.ablation {
        Some(a) => {
            let base = PlannerConfig {
                selector: a.selector,
                ..manifest.planner.clone()
            };
            let rows = ablation(&scenarios, a.parameter, &a.values, manifest.runs, &base)?;
            (Some(ablation_table_csv(a.parameter, &rows)), rows)
        }
        None => (None, Vec::new()),
    };
    Ok(BenchOutput {
        selectors_csv: selector_table_csv(&selector_rows),
        ablation_csv,
        selector_rows,
        ablation_rows,
    })
}

/// Hand-collision-free check used by tests and the CLI.
pub fn hand_penetrates(scenario: &Scenario, q: &Configuration) -> Result<bool> {
    match &scenario.scene.target {
        Some(t) => {
            let ee = scenario.chain.end_effector(q)?;
            let (c, _) = hand_collision_at(&ee, &scenario.gripper, &t.surface, 1e-12);
            Ok(c > 0.0)
        }
        None => Ok(false),
    }
}
