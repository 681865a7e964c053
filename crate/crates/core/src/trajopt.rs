//! Discretized trajectories, the smoothness prior, the obstacle functional
//! and the covariant (optionally goal-projected) update.
//!
//! A trajectory holds a pinned start `q_0` and free waypoints `q_1..q_n`,
//! with `q_n` the endpoint. Velocities are forward differences
//! `(q_{i+1} - q_i) / dt` with `dt = 1 / (n + 1)`, so the prior is
//! `1/(2 dt) * sum_{i=0}^{n-1} |q_{i+1} - q_i|^2` and its Hessian `A` is the
//! path-graph Laplacian scaled by `1/dt`, pinned only at the start.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3xX, Point3, RowDVector, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::chain::{BodyPoint, Configuration, SerialChain};
use crate::error::{invalid, Error, Result};
use crate::scene::SceneSdf;

pub const DEFAULT_RESOLUTION: usize = 30;
pub const DEFAULT_DENSE_STEPS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    start: Configuration,
    waypoints: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(start: Configuration, waypoints: DMatrix<f64>) -> Result<Self> {
        if waypoints.nrows() < 2 {
            return invalid("trajectory needs at least two free waypoints");
        }
        if waypoints.ncols() != start.len() {
            return invalid("waypoint width differs from start configuration");
        }
        Ok(Trajectory { start, waypoints })
    }

    /// Every waypoint equal to `q`.
    pub fn stationary(q: &Configuration, n: usize) -> Result<Self> {
        let rows = DMatrix::from_fn(n, q.len(), |_, j| q[j]);
        Trajectory::new(q.clone(), rows)
    }

    /// Constant-velocity line from `start` to `goal` over `n` free waypoints.
    pub fn linear(start: &Configuration, goal: &Configuration, n: usize) -> Result<Self> {
        if start.len() != goal.len() {
            return invalid("start and goal differ in dimension");
        }
        let rows = DMatrix::from_fn(n, start.len(), |i, j| {
            let s = (i + 1) as f64 / n as f64;
            start[j] + s * (goal[j] - start[j])
        });
        Trajectory::new(start.clone(), rows)
    }

    pub fn n(&self) -> usize {
        self.waypoints.nrows()
    }

    pub fn dof(&self) -> usize {
        self.start.len()
    }

    pub fn dt(&self) -> f64 {
        1.0 / (self.n() as f64 + 1.0)
    }

    pub fn start(&self) -> &Configuration {
        &self.start
    }

    pub fn waypoints(&self) -> &DMatrix<f64> {
        &self.waypoints
    }

    pub fn set_waypoints(&mut self, w: DMatrix<f64>) -> Result<()> {
        if w.shape() != self.waypoints.shape() {
            return invalid("waypoint matrix shape changed");
        }
        self.waypoints = w;
        Ok(())
    }

    /// `q_i` for `i` in `0..=n`, with `q_0` the start.
    pub fn point(&self, i: usize) -> Configuration {
        if i == 0 {
            self.start.clone()
        } else {
            self.waypoints.row(i - 1).transpose()
        }
    }

    pub fn endpoint(&self) -> Configuration {
        self.point(self.n())
    }

    /// CSV with a `d`/`dt` line, a column header and one row per free waypoint.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# d={} dt={:?}\n", self.dof(), self.dt());
        let header: Vec<String> = (1..=self.dof()).map(|j| format!("q{j}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in self.waypoints.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// `A = K^T K` (one scalar block per joint dimension) and its inverse.
#[derive(Clone, Debug)]
pub struct SmoothnessOperator {
    dt: f64,
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
}

impl SmoothnessOperator {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return invalid("resolution must be at least 2");
        }
        let dt = 1.0 / (n as f64 + 1.0);
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = if i + 1 < n { 2.0 } else { 1.0 } / dt;
            if i + 1 < n {
                a[(i, i + 1)] = -1.0 / dt;
                a[(i + 1, i)] = -1.0 / dt;
            }
        }
        let a_inv = a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("dynamic matrix not positive definite".into()))?
            .inverse();
        Ok(SmoothnessOperator { dt, a, a_inv })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn a_inv(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    /// Finite-differencing matrix `K` acting on one joint dimension.
    pub fn k(&self) -> DMatrix<f64> {
        let n = self.n();
        let s = 1.0 / self.dt.sqrt();
        DMatrix::from_fn(n, n, |r, c| {
            if r == c {
                s
            } else if c + 1 == r {
                -s
            } else {
                0.0
            }
        })
    }

    fn check(&self, traj: &Trajectory) -> Result<()> {
        if traj.n() != self.n() {
            return invalid("trajectory resolution differs from the operator");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionObjectiveConfig {
    /// Smoothness weight.
    pub lambda: f64,
    /// Step-size parameter; updates scale with `1 / eta_motion`.
    pub eta_motion: f64,
    /// Number of highest-cost body-point terms used per gradient.
    pub worst_points: usize,
}

impl Default for MotionObjectiveConfig {
    fn default() -> Self {
        MotionObjectiveConfig {
            lambda: 0.1,
            eta_motion: 0.2,
            worst_points: 500,
        }
    }
}

impl MotionObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.eta_motion > 0.0) || self.worst_points == 0 {
            return invalid("require lambda >= 0, eta_motion > 0, worst_points >= 1");
        }
        // each step scales the prior residual by 1 - lambda / eta_motion
        if self.lambda >= 2.0 * self.eta_motion {
            return invalid("lambda must stay below 2 * eta_motion or the descent diverges");
        }
        Ok(())
    }
}

pub fn prior_cost(traj: &Trajectory) -> f64 {
    let mut sum = 0.0;
    let mut prev = traj.start().transpose();
    for row in traj.waypoints().row_iter() {
        sum += (row - &prev).norm_squared();
        prev = row.into_owned();
    }
    sum / (2.0 * traj.dt())
}

/// `A xi + a`, the exact gradient of [`prior_cost`].
pub fn prior_gradient(traj: &Trajectory, op: &SmoothnessOperator) -> Result<DMatrix<f64>> {
    op.check(traj)?;
    let mut g = op.a() * traj.waypoints();
    let pinned: RowDVector<f64> = traj.start().transpose() / op.dt();
    let mut first = g.row_mut(0);
    first -= pinned;
    Ok(g)
}

/// Robot, scene and body samples used by every obstacle term.
#[derive(Clone, Copy, Debug)]
pub struct CollisionModel<'a> {
    pub scene: &'a SceneSdf,
    pub chain: &'a SerialChain,
    pub body_points: &'a [BodyPoint],
    /// Body points closer than this to the final gripper position ignore the
    /// target object.
    pub approach_radius: f64,
}

pub const DEFAULT_APPROACH_RADIUS: f64 = 0.15;

/// Per-configuration kinematics and workspace costs of every body point.
pub(crate) struct PointField {
    pub frames: Vec<Isometry3<f64>>,
    pub x: Vec<Point3<f64>>,
    pub cost: Vec<f64>,
    pub grad: Vec<Vector3<f64>>,
    pub distance: Vec<f64>,
}

impl<'a> CollisionModel<'a> {
    pub fn new(scene: &'a SceneSdf, chain: &'a SerialChain, body_points: &'a [BodyPoint]) -> Self {
        CollisionModel {
            scene,
            chain,
            body_points,
            approach_radius: DEFAULT_APPROACH_RADIUS,
        }
    }

    pub fn includes_target(&self, x: &Point3<f64>, grasp_site: &Point3<f64>) -> bool {
        (x - grasp_site).norm() >= self.approach_radius
    }

    pub fn grasp_site(&self, q_final: &Configuration) -> Result<Point3<f64>> {
        Ok(Point3::from(self.chain.end_effector(q_final)?.translation.vector))
    }

    pub(crate) fn evaluate(&self, q: &Configuration, site: &Point3<f64>) -> Result<PointField> {
        let frames = self.chain.forward_kinematics(q)?;
        let m = self.body_points.len();
        let mut f = PointField {
            frames,
            x: Vec::with_capacity(m),
            cost: Vec::with_capacity(m),
            grad: Vec::with_capacity(m),
            distance: Vec::with_capacity(m),
        };
        for u in self.body_points {
            let x = f.frames[u.link + 1] * u.local;
            let include = self.includes_target(&x, site);
            let (c, g) = self.scene.workspace_cost(&x, include);
            f.distance.push(self.scene.signed_distance(&x, include).distance);
            f.x.push(x);
            f.cost.push(c);
            f.grad.push(g);
        }
        Ok(f)
    }

    fn jacobian(&self, field: &PointField, u: usize) -> Matrix3xX<f64> {
        self.chain
            .point_jacobian_from_frames(&field.frames, self.body_points[u].link, &field.x[u])
    }

    fn fields(&self, traj: &Trajectory) -> Result<Vec<PointField>> {
        let site = self.grasp_site(&traj.endpoint())?;
        (0..=traj.n()).map(|t| self.evaluate(&traj.point(t), &site)).collect()
    }

    /// Single-configuration cost (plain sum over body points) and its gradient.
    pub fn configuration_cost(&self, q: &Configuration) -> Result<(f64, DVector<f64>)> {
        let site = self.grasp_site(q)?;
        let f = self.evaluate(q, &site)?;
        let mut grad = DVector::zeros(q.len());
        let mut cost = 0.0;
        for u in 0..self.body_points.len() {
            if f.cost[u] > 0.0 {
                cost += f.cost[u];
                grad += self.jacobian(&f, u).transpose() * f.grad[u];
            }
        }
        Ok((cost, grad))
    }

    /// Smallest signed distance over `steps` evenly interpolated samples.
    pub fn min_clearance_dense(&self, traj: &Trajectory, steps: usize) -> Result<f64> {
        let site = self.grasp_site(&traj.endpoint())?;
        let mut best = f64::INFINITY;
        for q in interpolate(traj, steps)? {
            let f = self.evaluate(&q, &site)?;
            best = f.distance.iter().copied().fold(best, f64::min);
        }
        Ok(best)
    }

    /// Smallest signed distance of any body point at the waypoints.
    pub fn min_clearance(&self, traj: &Trajectory) -> Result<f64> {
        let site = self.grasp_site(&traj.endpoint())?;
        let mut best = f64::INFINITY;
        for t in 0..=traj.n() {
            let f = self.evaluate(&traj.point(t), &site)?;
            best = f.distance.iter().copied().fold(best, f64::min);
        }
        Ok(best)
    }
}

/// One `(t, u)` summand of the discretized obstacle functional.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObstacleTerm {
    pub t: usize,
    pub u: usize,
    pub value: f64,
}

/// Every non-zero term `c(x(q_t, u)) * |x(q_{t+1}, u) - x(q_t, u)|`, `t < n`.
pub fn obstacle_terms(traj: &Trajectory, model: &CollisionModel) -> Result<Vec<ObstacleTerm>> {
    let fields = model.fields(traj)?;
    Ok(terms_from_fields(&fields))
}

fn terms_from_fields(fields: &[PointField]) -> Vec<ObstacleTerm> {
    let mut terms = Vec::new();
    for t in 0..fields.len() - 1 {
        for u in 0..fields[t].x.len() {
            let c = fields[t].cost[u];
            if c > 0.0 {
                let len = (fields[t + 1].x[u] - fields[t].x[u]).norm();
                if len > 0.0 {
                    terms.push(ObstacleTerm { t, u, value: c * len });
                }
            }
        }
    }
    terms
}

pub fn obstacle_cost(traj: &Trajectory, model: &CollisionModel) -> Result<f64> {
    Ok(obstacle_terms(traj, model)?.iter().map(|t| t.value).sum())
}

/// Largest `worst_points` terms, ties resolved by `(t, u)` order.
pub fn select_worst(mut terms: Vec<ObstacleTerm>, worst_points: usize) -> Vec<ObstacleTerm> {
    terms.sort_by(|a, b| b.value.total_cmp(&a.value).then((a.t, a.u).cmp(&(b.t, b.u))));
    terms.truncate(worst_points);
    terms
}

/// Exact gradient of the given terms with respect to the free waypoints.
pub fn gradient_of_terms(
    traj: &Trajectory,
    model: &CollisionModel,
    terms: &[ObstacleTerm],
) -> Result<DMatrix<f64>> {
    let fields = model.fields(traj)?;
    Ok(accumulate_terms(&fields, model, terms, traj.n(), traj.dof()))
}

fn accumulate_terms(
    fields: &[PointField],
    model: &CollisionModel,
    terms: &[ObstacleTerm],
    n: usize,
    d: usize,
) -> DMatrix<f64> {
    let mut grad = DMatrix::zeros(n, d);
    for term in terms {
        let (t, u) = (term.t, term.u);
        let here = &fields[t];
        let next = &fields[t + 1];
        let dx = next.x[u] - here.x[u];
        let len = dx.norm();
        if len == 0.0 {
            continue;
        }
        let dir = dx / len;
        let c = here.cost[u];
        if t >= 1 {
            let w = here.grad[u] * len - dir * c;
            let g = model.jacobian(here, u).transpose() * w;
            let mut row = grad.row_mut(t - 1);
            row += g.transpose();
        }
        let g = model.jacobian(next, u).transpose() * (dir * c);
        let mut row = grad.row_mut(t);
        row += g.transpose();
    }
    grad
}

/// Gradient accumulated from the `worst_points` largest terms, selected once.
pub fn obstacle_gradient(
    traj: &Trajectory,
    model: &CollisionModel,
    worst_points: usize,
) -> Result<DMatrix<f64>> {
    let fields = model.fields(traj)?;
    let terms = select_worst(terms_from_fields(&fields), worst_points);
    Ok(accumulate_terms(&fields, model, &terms, traj.n(), traj.dof()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionCost {
    pub obstacle: f64,
    pub prior: f64,
    pub total: f64,
}

pub fn motion_cost(
    traj: &Trajectory,
    model: &CollisionModel,
    cfg: &MotionObjectiveConfig,
) -> Result<MotionCost> {
    let obstacle = obstacle_cost(traj, model)?;
    let prior = prior_cost(traj);
    Ok(MotionCost {
        obstacle,
        prior,
        total: obstacle + cfg.lambda * prior,
    })
}

/// `v = grad f_obstacle (truncated) + lambda * grad f_prior`, plus the cost
/// at the same iterate.
pub fn motion_gradient(
    traj: &Trajectory,
    model: &CollisionModel,
    cfg: &MotionObjectiveConfig,
    op: &SmoothnessOperator,
) -> Result<(MotionCost, DMatrix<f64>)> {
    let fields = model.fields(traj)?;
    let terms = terms_from_fields(&fields);
    let obstacle: f64 = terms.iter().map(|t| t.value).sum();
    let worst = select_worst(terms, cfg.worst_points);
    let mut v = accumulate_terms(&fields, model, &worst, traj.n(), traj.dof());
    v += prior_gradient(traj, op)? * cfg.lambda;
    let prior = prior_cost(traj);
    Ok((
        MotionCost {
            obstacle,
            prior,
            total: obstacle + cfg.lambda * prior,
        },
        v,
    ))
}

/// Unconstrained covariant step `xi - A^{-1} v / eta`.
pub fn chomp_step(
    traj: &Trajectory,
    v: &DMatrix<f64>,
    eta_motion: f64,
    op: &SmoothnessOperator,
) -> Result<Trajectory> {
    op.check(traj)?;
    if v.shape() != traj.waypoints().shape() {
        return invalid("gradient shape differs from trajectory");
    }
    let w = traj.waypoints() - op.a_inv() * v / eta_motion;
    Trajectory::new(traj.start().clone(), w)
}

/// Covariant step projected onto the linearized constraint `xi(1) = goal`.
///
/// With `C` selecting the endpoint block, `C A^{-1} C^T` is the scalar
/// `a_inv[n-1, n-1]` times identity, so the projection is applied per joint
/// column and the endpoint lands on `goal` exactly.
pub fn chomp_proj_step(
    traj: &Trajectory,
    goal: &Configuration,
    v: &DMatrix<f64>,
    eta_motion: f64,
    op: &SmoothnessOperator,
) -> Result<Trajectory> {
    op.check(traj)?;
    if goal.len() != traj.dof() {
        return invalid("goal dimension differs from trajectory");
    }
    if v.shape() != traj.waypoints().shape() {
        return invalid("gradient shape differs from trajectory");
    }
    let n = traj.n();
    let last = op.a_inv().column(n - 1);
    let s = op.a_inv()[(n - 1, n - 1)];
    if !(s > 0.0) {
        return Err(Error::NumericalFailure("singular constraint metric".into()));
    }
    let smoothed = op.a_inv() * v;
    let mut w = traj.waypoints().clone();
    for j in 0..traj.dof() {
        let b = traj.waypoints()[(n - 1, j)] - goal[j];
        let correction = (smoothed[(n - 1, j)] / eta_motion - b) / s;
        let mut col = w.column_mut(j);
        col -= smoothed.column(j) / eta_motion;
        col += last * correction;
        // the linear constraint is met exactly; remove rounding residue
        col[n - 1] = goal[j];
    }
    Trajectory::new(traj.start().clone(), w)
}

/// Linear interpolation of `q_0..q_n` to `steps` evenly spaced samples.
pub fn interpolate(traj: &Trajectory, steps: usize) -> Result<Vec<Configuration>> {
    if steps < 2 {
        return invalid("need at least two interpolation steps");
    }
    let n = traj.n();
    let pts: Vec<Configuration> = (0..=n).map(|i| traj.point(i)).collect();
    Ok((0..steps)
        .map(|k| {
            if k + 1 == steps {
                return pts[n].clone();
            }
            let s = k as f64 * n as f64 / (steps - 1) as f64;
            let i = (s.floor() as usize).min(n - 1);
            let f = s - i as f64;
            if f == 0.0 {
                pts[i].clone()
            } else {
                &pts[i] * (1.0 - f) + &pts[i + 1] * f
            }
        })
        .collect())
}
