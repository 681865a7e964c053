//! Online goal selection over a discrete goal set.
//!
//! Each planner iteration produces a unit-norm cost vector over the goals
//! (tail-of-trajectory estimates); a selector turns the cost stream into a
//! distribution on the simplex and the planner follows its mode.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::chain::Configuration;
use crate::error::{invalid, Error, Result};
use crate::trajopt::{motion_cost, CollisionModel, MotionObjectiveConfig, Trajectory};

/// Exponents `k` of the mirror-descent experts, `eta = 2^k ln N`.
pub const MD_EXPERT_EXPONENTS: [i32; 5] = [-2, -1, 0, 2, 4];

#[derive(Clone, Debug, PartialEq)]
pub struct GoalSet {
    goals: Vec<Configuration>,
    feasible: Vec<bool>,
}

impl GoalSet {
    pub fn new(goals: Vec<Configuration>, feasible: Vec<bool>) -> Result<Self> {
        if goals.len() != feasible.len() {
            return invalid("goal and feasibility lists differ in length");
        }
        if let Some(first) = goals.first() {
            if goals.iter().any(|g| g.len() != first.len()) {
                return invalid("goals differ in dimension");
            }
        }
        Ok(GoalSet { goals, feasible })
    }

    pub fn all_feasible(goals: Vec<Configuration>) -> Self {
        let feasible = vec![true; goals.len()];
        GoalSet { goals, feasible }
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn goal(&self, i: usize) -> &Configuration {
        &self.goals[i]
    }

    pub fn goals(&self) -> &[Configuration] {
        &self.goals
    }

    pub fn is_feasible(&self, i: usize) -> bool {
        self.feasible[i]
    }

    pub fn feasible_mask(&self) -> &[bool] {
        &self.feasible
    }

    pub fn feasible_count(&self) -> usize {
        self.feasible.iter().filter(|f| **f).count()
    }

    pub fn replace(&mut self, i: usize, q: Configuration) {
        self.goals[i] = q;
    }
}

/// Divides finite entries by the norm of the finite sub-vector; infinite
/// entries pass through. An all-zero finite part becomes uniform.
pub fn normalize_costs(raw: &[f64]) -> Result<Vec<f64>> {
    let finite: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::NoFeasibleGoal);
    }
    let norm = finite.iter().map(|&i| raw[i] * raw[i]).sum::<f64>().sqrt();
    let uniform = 1.0 / (finite.len() as f64).sqrt();
    Ok(raw
        .iter()
        .map(|&c| {
            if !c.is_finite() {
                f64::INFINITY
            } else if norm > 0.0 {
                c / norm
            } else {
                uniform
            }
        })
        .collect())
}

/// Waypoint index where the tail starts at iteration `i` of `horizon`.
pub fn tail_start_index(i: usize, horizon: usize, n: usize) -> usize {
    ((i * (n + 1)) / horizon.max(1)).min(n)
}

/// Constant-velocity tail from `q_k` to `goal`.
pub fn goal_tail(traj: &Trajectory, i: usize, horizon: usize, goal: &Configuration) -> Result<Trajectory> {
    let k = tail_start_index(i, horizon, traj.n());
    let m = traj.n().saturating_sub(k).max(2);
    Trajectory::linear(&traj.point(k), goal, m)
}

/// Raw (unnormalized) tail motion costs; infeasible goals get `+inf`.
pub fn raw_goal_costs(
    traj: &Trajectory,
    i: usize,
    horizon: usize,
    goals: &GoalSet,
    model: &CollisionModel,
    cfg: &MotionObjectiveConfig,
) -> Result<Vec<f64>> {
    if horizon == 0 || i >= horizon {
        return invalid("iteration must satisfy 0 <= i < N");
    }
    (0..goals.len())
        .map(|g| {
            if !goals.is_feasible(g) {
                return Ok(f64::INFINITY);
            }
            let tail = goal_tail(traj, i, horizon, goals.goal(g))?;
            Ok(motion_cost(&tail, model, cfg)?.total)
        })
        .collect()
}

/// Tail-based cost estimate `c_{i+1}`, unit norm over the feasible goals.
pub fn estimate_goal_costs(
    traj: &Trajectory,
    i: usize,
    horizon: usize,
    goals: &GoalSet,
    model: &CollisionModel,
    cfg: &MotionObjectiveConfig,
) -> Result<Vec<f64>> {
    if goals.feasible_count() == 0 {
        return Err(Error::NoFeasibleGoal);
    }
    normalize_costs(&raw_goal_costs(traj, i, horizon, goals, model, cfg)?)
}

/// Configuration-space distances from `endpoint` to every feasible goal.
pub fn endpoint_distance_costs(endpoint: &Configuration, goals: &GoalSet) -> Result<Vec<f64>> {
    let raw: Vec<f64> = (0..goals.len())
        .map(|g| {
            if goals.is_feasible(g) {
                (goals.goal(g) - endpoint).norm()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    normalize_costs(&raw)
}

fn argmin(c: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in c.iter().enumerate() {
        if v.is_nan() || *v == f64::INFINITY {
            continue;
        }
        if best.is_none_or(|b| *v < c[b]) {
            best = Some(i);
        }
    }
    best
}

fn point_mass(len: usize, at: usize) -> Vec<f64> {
    let mut p = vec![0.0; len];
    p[at] = 1.0;
    p
}

/// Expected cost, ignoring goals that carry no probability.
pub fn expected_cost(c: &[f64], p: &[f64]) -> f64 {
    c.iter()
        .zip(p)
        .filter(|(_, p)| **p > 0.0)
        .map(|(c, p)| c * p)
        .sum()
}

/// Follow the cheapest: all mass on the lowest current cost.
pub fn ftc_update(c: &[f64]) -> Result<Vec<f64>> {
    let at = argmin(c).ok_or(Error::NoFeasibleGoal)?;
    Ok(point_mass(c.len(), at))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostHistory {
    costs: Vec<Vec<f64>>,
    distributions: Vec<Vec<f64>>,
}

impl CostHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, c: Vec<f64>, p: Vec<f64>) -> Result<()> {
        if c.len() != p.len() || self.costs.first().is_some_and(|f| f.len() != c.len()) {
            return invalid("cost/distribution length mismatch");
        }
        self.costs.push(c);
        self.distributions.push(p);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn costs(&self) -> &[Vec<f64>] {
        &self.costs
    }

    pub fn distributions(&self) -> &[Vec<f64>] {
        &self.distributions
    }

    pub fn cumulative_costs(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.costs.first().map_or(0, Vec::len)];
        for c in &self.costs {
            for (t, v) in total.iter_mut().zip(c) {
                *t += v;
            }
        }
        total
    }
}

/// Follow the leader over cost vectors alone.
pub fn ftl_from_costs(costs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = costs.first().ok_or_else(|| Error::InvalidArgument("empty history".into()))?;
    let mut total = vec![0.0; first.len()];
    for c in costs {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    let at = argmin(&total).ok_or(Error::NoFeasibleGoal)?;
    Ok(point_mass(total.len(), at))
}

/// Follow the leader: all mass on the lowest cumulative cost.
pub fn ftl_update(history: &CostHistory) -> Result<Vec<f64>> {
    ftl_from_costs(history.costs())
}

fn check_simplex(p: &[f64], c: &[f64], eta: f64) -> Result<()> {
    if p.len() != c.len() || p.is_empty() {
        return invalid("distribution and cost lengths differ");
    }
    if !(eta >= 0.0) {
        return invalid("learning rate must be non-negative");
    }
    if p.iter().any(|v| !(*v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return invalid("distribution is not on the simplex");
    }
    Ok(())
}

fn finite_min(c: &[f64], p: &[f64]) -> f64 {
    c.iter()
        .zip(p)
        .filter(|(c, p)| **p > 0.0 && c.is_finite())
        .map(|(c, _)| *c)
        .fold(f64::INFINITY, f64::min)
}

/// Exponential weighting: multiply by `exp(-eta c)` and renormalize.
pub fn exp_update(p: &[f64], c: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_simplex(p, c, eta)?;
    let shift = finite_min(c, p);
    if !shift.is_finite() {
        return Err(Error::NoFeasibleGoal);
    }
    let weighted: Vec<f64> = p
        .iter()
        .zip(c)
        .map(|(p, c)| if *p > 0.0 { p * (-eta * (c - shift)).exp() } else { 0.0 })
        .collect();
    let total: f64 = weighted.iter().sum();
    Ok(weighted.into_iter().map(|w| w / total).collect())
}

/// Entropic mirror-descent step `argmin_q eta <c, q> + KL(q || p)` over the
/// simplex. Stationarity of the Lagrangian gives
/// `ln q = ln p - eta c - 1 - mu`; the multiplier `mu` is fixed by the
/// simplex constraint, i.e. a log-sum-exp normalizer.
pub fn md_update(p: &[f64], c: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_simplex(p, c, eta)?;
    let logits: Vec<f64> = p
        .iter()
        .zip(c)
        .map(|(p, c)| if *p > 0.0 { p.ln() - eta * c - 1.0 } else { f64::NEG_INFINITY })
        .collect();
    let peak = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::NoFeasibleGoal);
    }
    let mu = peak + logits.iter().map(|l| (l - peak).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|l| (l - mu).exp()).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdExpert {
    pub exponent: i32,
    pub eta: f64,
    pub p: Vec<f64>,
    /// Sum of `<c_j, p>` using the distribution held before each update.
    pub loss: f64,
}

/// Mirror-descent experts at several learning rates; reports the expert with
/// the lowest cumulative loss (first in exponent order on ties).
#[derive(Clone, Debug, PartialEq)]
pub struct MdEnsemble {
    experts: Vec<MdExpert>,
}

impl MdEnsemble {
    pub fn new(initial: Vec<f64>, horizon: usize, exponents: &[i32]) -> Result<Self> {
        if exponents.is_empty() {
            return invalid("ensemble needs at least one expert");
        }
        let base = (horizon.max(1) as f64).ln();
        Ok(MdEnsemble {
            experts: exponents
                .iter()
                .map(|&k| MdExpert {
                    exponent: k,
                    eta: 2f64.powi(k) * base,
                    p: initial.clone(),
                    loss: 0.0,
                })
                .collect(),
        })
    }

    pub fn experts(&self) -> &[MdExpert] {
        &self.experts
    }

    pub fn update(&mut self, c: &[f64]) -> Result<Vec<f64>> {
        for e in &mut self.experts {
            e.loss += expected_cost(c, &e.p);
            e.p = md_update(&e.p, c, e.eta)?;
        }
        Ok(self.leader().p.clone())
    }

    pub fn leader(&self) -> &MdExpert {
        self.experts
            .iter()
            .fold(&self.experts[0], |best, e| if e.loss < best.loss { e } else { best })
    }
}

/// Mode of the distribution, ties to the lowest index.
pub fn select_goal(p: &[f64]) -> Result<usize> {
    if p.is_empty() || p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return invalid("degenerate distribution");
    }
    if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return invalid("distribution does not sum to one");
    }
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    Ok(best)
}

/// `sum_i <c_i, p_i> - min_g sum_i c_i(g)`; zero for an empty history.
pub fn regret(history: &CostHistory) -> f64 {
    if history.is_empty() {
        return 0.0;
    }
    let incurred: f64 = history
        .costs()
        .iter()
        .zip(history.distributions())
        .map(|(c, p)| expected_cost(c, p))
        .sum();
    let best = history
        .cumulative_costs()
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    incurred - best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorKind {
    Fixed,
    Proj,
    Ftc,
    Ftl,
    Exp,
    Md,
}

impl SelectorKind {
    pub const ALL: [SelectorKind; 6] = [
        SelectorKind::Fixed,
        SelectorKind::Proj,
        SelectorKind::Ftc,
        SelectorKind::Ftl,
        SelectorKind::Exp,
        SelectorKind::Md,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SelectorKind::Fixed => "fixed",
            SelectorKind::Proj => "proj",
            SelectorKind::Ftc => "ftc",
            SelectorKind::Ftl => "ftl",
            SelectorKind::Exp => "exp",
            SelectorKind::Md => "md",
        }
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown selector `{s}`")))
    }
}

/// Running state of one selector during a plan.
#[derive(Clone, Debug)]
pub struct Selector {
    kind: SelectorKind,
    p: Vec<f64>,
    history: CostHistory,
    exp_eta: f64,
    ensemble: Option<MdEnsemble>,
}

impl Selector {
    /// `initial_goal` seeds the fixed/greedy selectors; the weighting
    /// selectors start uniform over the feasible goals.
    pub fn new(kind: SelectorKind, goals: &GoalSet, initial_goal: usize, horizon: usize) -> Result<Self> {
        let feasible = goals.feasible_count();
        if feasible == 0 {
            return Err(Error::NoFeasibleGoal);
        }
        let uniform: Vec<f64> = goals
            .feasible_mask()
            .iter()
            .map(|f| if *f { 1.0 / feasible as f64 } else { 0.0 })
            .collect();
        let p = match kind {
            SelectorKind::Exp | SelectorKind::Md => uniform.clone(),
            _ => point_mass(goals.len(), initial_goal),
        };
        let ensemble = match kind {
            SelectorKind::Md => Some(MdEnsemble::new(uniform, horizon, &MD_EXPERT_EXPONENTS)?),
            _ => None,
        };
        Ok(Selector {
            kind,
            p,
            history: CostHistory::new(),
            exp_eta: ((feasible as f64).ln() / horizon.max(1) as f64).sqrt(),
            ensemble,
        })
    }

    pub fn kind(&self) -> SelectorKind {
        self.kind
    }

    pub fn distribution(&self) -> &[f64] {
        &self.p
    }

    pub fn history(&self) -> &CostHistory {
        &self.history
    }

    /// Consumes `c_{i+1}` and returns `p_{i+1}`.
    pub fn observe(&mut self, c: Vec<f64>) -> Result<&[f64]> {
        let next = match self.kind {
            SelectorKind::Fixed => self.p.clone(),
            SelectorKind::Proj | SelectorKind::Ftc => ftc_update(&c)?,
            SelectorKind::Ftl => {
                let mut costs = self.history.costs().to_vec();
                costs.push(c.clone());
                ftl_from_costs(&costs)?
            }
            SelectorKind::Exp => exp_update(&self.p, &c, self.exp_eta)?,
            SelectorKind::Md => self
                .ensemble
                .as_mut()
                .expect("md selector owns an ensemble")
                .update(&c)?,
        };
        self.history.push(c, next.clone())?;
        self.p = next;
        Ok(&self.p)
    }

    pub fn mode(&self) -> Result<usize> {
        select_goal(&self.p)
    }
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}
