//! Subcommand bodies. Each returns the process exit code on success; errors
//! map to exit code 1 in `main`.
//!
//! Output files (all CSV files have a header row):
//!
//! | file | columns |
//! |------|---------|
//! | `trajectory.csv` | `t, q0..q{d-1}`, one row per free waypoint, the last one on the goal |
//! | `metrics.csv` | `status, selected_goal, iterations, collision, smoothness, smoothness_threshold, planning_success, grasp_cost, motion_cost` |
//! | `log.csv` | `iteration, motion_cost, goal, entropy, grasp_cost` |
//! | `selector.csv` | `iteration, c0.., p0..` |
//! | `selectors.csv` | `selector, runs, planning_success, smoothness, collision, grasp_cost` |
//! | `ablation.csv` | `parameter, value, runs, planning_success, smoothness, collision, grasp_cost` |
//! | `refine.csv` | `step, isf, hand, arm, total, correspondences_ok` |
//! | `final.csv` | `q0..q{d-1}` |
//!
//! Wall-clock times go to the log only, so files are reproducible.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use graspopt::bench::{evaluate_plan, generate_scene, run_manifest, Manifest, SceneFamily, SceneSpec};
use graspopt::chain::Configuration;
use graspopt::goalsel::SelectorKind;
use graspopt::graspref::{cspace_isf_step, grasp_cost, IsfStatus};
use graspopt::planner::{init_trajectory, initial_goal, plan, PlanStatus, PlannerConfig};
use graspopt::trajopt::{CollisionModel, Trajectory};

use crate::scenefile::SceneFile;
use crate::svg;

pub const EXIT_SUCCESS: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_PLAN_FAILED: u8 = 2;

#[derive(Clone, Debug, Default)]
pub struct PlanOptions {
    pub selector: Option<SelectorKind>,
    pub seed: Option<u64>,
    pub iters: Option<usize>,
    pub refine_steps: Option<usize>,
    pub svg: bool,
    pub out: PathBuf,
}

fn row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn config_header(prefix: &str, dof: usize) -> String {
    (0..dof).map(|j| format!("{prefix}{j}")).collect::<Vec<_>>().join(",")
}

fn trajectory_csv(traj: &Trajectory) -> String {
    let dof = traj.start().len();
    let mut out = format!("t,{}\n", config_header("q", dof));
    for t in 1..=traj.n() {
        let _ = writeln!(out, "{:?},{}", t as f64 / traj.n() as f64, row(traj.point(t).iter().copied()));
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_plan(scene_path: &Path, opts: &PlanOptions) -> anyhow::Result<u8> {
    let file = SceneFile::load(scene_path)?;
    let scenario = file.scenario()?;
    let mut cfg = file.planner.clone();
    if let Some(s) = opts.selector {
        cfg.selector = s;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(n) = opts.iters {
        cfg.horizon = n;
    }
    if let Some(k) = opts.refine_steps {
        cfg.isf_steps_per_iter = k;
    }
    let result = plan(&scenario.problem(), &cfg)?;
    let metrics = evaluate_plan(&scenario, &cfg, &result)?;
    log::info!(
        "{}: status {} goal {} in {:.3} s",
        cfg.selector,
        result.status.name(),
        result.selected_goal,
        result.wall_time
    );

    fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    write(&opts.out, "trajectory.csv", &trajectory_csv(&result.trajectory))?;
    write(&opts.out, "log.csv", &result.log_csv())?;
    write(&opts.out, "selector.csv", &result.selector_csv())?;
    let mut m = String::from(
        "status,selected_goal,iterations,collision,smoothness,smoothness_threshold,planning_success,grasp_cost,motion_cost\n",
    );
    let _ = writeln!(
        m,
        "{},{},{},{:?},{:?},{:?},{},{:?},{:?}",
        result.status.name(),
        result.selected_goal,
        result.log.len(),
        metrics.collision,
        metrics.smoothness,
        metrics.smoothness_threshold,
        metrics.planning_success,
        metrics.grasp_cost,
        metrics.motion_cost
    );
    write(&opts.out, "metrics.csv", &m)?;

    if opts.svg {
        if !scenario.is_planar() {
            bail!("--svg needs a planar chain");
        }
        let initial = match result.status {
            PlanStatus::NoFeasibleGoal => result.trajectory.clone(),
            _ => {
                let pts = scenario.problem().body_points(&cfg);
                let model = CollisionModel::new(&scenario.scene, &scenario.chain, &pts);
                let g0 = initial_goal(&scenario.goals, &scenario.start, &model, &cfg.trajopt, cfg.resolution)?;
                init_trajectory(&scenario.start, scenario.goals.goal(g0), cfg.resolution)?
            }
        };
        write(&opts.out, "plan.svg", &svg::render(&scenario, &initial, &result.trajectory)?)?;
    }
    Ok(if metrics.planning_success { EXIT_SUCCESS } else { EXIT_PLAN_FAILED })
}

#[derive(Clone, Debug, Default)]
pub struct BenchOptions {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: PathBuf,
}

pub fn cmd_bench(manifest_path: &Path, opts: &BenchOptions) -> anyhow::Result<u8> {
    let text = fs::read_to_string(manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let mut manifest = Manifest::parse(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;
    if let Some(s) = opts.seed {
        manifest.planner.seed = s;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.jobs.unwrap_or(0)).build()?;
    let output = pool.install(|| run_manifest(&manifest))?;
    for r in &output.selector_rows {
        log::info!("{}: success {:.3} mean time {:.3} s", r.label, r.planning_success, r.time);
    }
    fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    write(&opts.out, "selectors.csv", &output.selectors_csv)?;
    if let Some(a) = &output.ablation_csv {
        write(&opts.out, "ablation.csv", a)?;
    }
    Ok(EXIT_SUCCESS)
}

#[derive(Clone, Debug, Default)]
pub struct RefineOptions {
    pub goal: usize,
    pub steps: usize,
    pub out: PathBuf,
}

pub fn cmd_refine_grasp(scene_path: &Path, opts: &RefineOptions) -> anyhow::Result<u8> {
    let file = SceneFile::load(scene_path)?;
    let scenario = file.scenario()?;
    if opts.goal >= scenario.goals.len() {
        bail!("goal index {} out of range (goal set has {})", opts.goal, scenario.goals.len());
    }
    let object = match &scenario.scene.target {
        Some(t) => &t.surface,
        None => bail!("grasp refinement needs a target"),
    };
    let cfg = &file.planner;
    let pts = scenario.problem().body_points(cfg);
    let model = CollisionModel::new(&scenario.scene, &scenario.chain, &pts);
    let mut q: Configuration = scenario.goals.goal(opts.goal).clone();
    let mut trace = String::from("step,isf,hand,arm,total,correspondences_ok\n");
    let mut ok = true;
    for step in 0..=opts.steps {
        let c = grasp_cost(&q, &scenario.gripper, object, &model, &cfg.grasp)?;
        let _ = writeln!(trace, "{step},{}", row([c.isf, c.hand, c.arm, c.total]) + &format!(",{ok}"));
        if step == opts.steps {
            break;
        }
        let next = cspace_isf_step(&q, &scenario.gripper, object, &model, &cfg.grasp)?;
        ok = next.status == IsfStatus::Applied;
        q = next.q;
    }
    fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    write(&opts.out, "refine.csv", &trace)?;
    write(
        &opts.out,
        "final.csv",
        &format!("{}\n{}\n", config_header("q", q.len()), row(q.iter().copied())),
    )?;
    Ok(EXIT_SUCCESS)
}

#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub spec: SceneSpec,
    pub out: PathBuf,
}

pub fn cmd_generate(opts: &GenerateOptions) -> anyhow::Result<u8> {
    let scenario = generate_scene(&opts.spec)?;
    if opts.spec.family == SceneFamily::Random && scenario.missing_goals > 0 {
        log::warn!("{} goals could not be generated", scenario.missing_goals);
    }
    let file = SceneFile::from_scenario(&scenario, &PlannerConfig::default())?;
    fs::write(&opts.out, file.to_toml()?).with_context(|| format!("writing {}", opts.out.display()))?;
    Ok(EXIT_SUCCESS)
}
