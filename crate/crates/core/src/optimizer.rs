//! Global minimization of the stage objectives and the backward induction
//! that strings the stages together.
//!
//! The objectives are piecewise smooth with kinks on the hyperplanes
//! `s_t + P'K = 0`, so the search is derivative-free: a compass search
//! (coordinate polling with step shrinking) started from a deterministic set
//! of seeds. Every seed is first run to a coarse step size; the best few are
//! then refined to the final tolerance.

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, norm, solve_spd};
use crate::market::{discount_curve, MarketSpec, ScenarioSet};
use crate::policy::PolicyTable;
use crate::recursion::{CoefficientTable, RiskAversionSpec, Side, StageData, StageObjective};
use crate::{Error, Result};

/// Tolerance of the `b - a^2 >= 0` check after each stage.
pub const VALIDITY_EPS: f64 = 1e-8;

const PROJECTION_TOL: f64 = 1e-10;
const PROJECTION_MAX_SWEEPS: usize = 100_000;

/// Which cone the shortage-side fund `K^-` is searched in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortfallCone {
    /// `K^- ∈ -A`: with `Y_t < 0` the holdings `K^- Y_t` stay inside `A`.
    #[default]
    Negated,
    /// `K^- ∈ A`: the fund itself (rather than the holding) lies in `A`.
    Same,
}

/// Polyhedral cone `A = {u : A u >= 0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeConstraint {
    pub n_assets: usize,
    /// Rows of `A`; an empty list is the whole space.
    pub rows: Vec<Vec<f64>>,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub shortfall: ShortfallCone,
}

impl ConeConstraint {
    pub fn new(n_assets: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != n_assets) {
            return Err(Error::Dimension { expected: n_assets, got: r.len() });
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("cone rows must be finite".into()));
        }
        Ok(Self { n_assets, rows, name: None, shortfall: ShortfallCone::default() })
    }

    /// `A = I`: no short positions.
    pub fn no_shorting(n_assets: usize) -> Self {
        let rows = (0..n_assets)
            .map(|i| (0..n_assets).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { n_assets, rows, name: Some("no_shorting".into()), shortfall: ShortfallCone::default() }
    }

    pub fn unconstrained(n_assets: usize) -> Self {
        Self { n_assets, rows: Vec::new(), name: None, shortfall: ShortfallCone::default() }
    }

    pub fn with_shortfall(mut self, shortfall: ShortfallCone) -> Self {
        self.shortfall = shortfall;
        self
    }

    /// `min_i (A u)_i >= -1e-10 ||u||`.
    pub fn contains(&self, u: &[f64]) -> bool {
        let slack = -1e-10 * norm(u);
        self.rows.iter().all(|r| dot(r, u) >= slack)
    }

    /// Whether `k` is an admissible fund for `side`.
    pub fn admits(&self, side: Side, k: &[f64]) -> bool {
        if self.negates(side) {
            let neg: Vec<f64> = k.iter().map(|x| -x).collect();
            self.contains(&neg)
        } else {
            self.contains(k)
        }
    }

    fn negates(&self, side: Side) -> bool {
        side == Side::Minus && self.shortfall == ShortfallCone::Negated
    }

    /// Euclidean projection onto `A` by Dykstra's alternating projections over
    /// the halfspaces `{u : a_i'u >= 0}`.
    pub fn project(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.n_assets {
            return Err(Error::Dimension { expected: self.n_assets, got: u.len() });
        }
        let rows: Vec<(&Vec<f64>, f64)> = self
            .rows
            .iter()
            .map(|r| (r, dot(r, r)))
            .filter(|(_, nn)| *nn > 0.0)
            .collect();
        if rows.is_empty() || self.contains(u) {
            return Ok(u.to_vec());
        }
        let n = u.len();
        let scale = norm(u).max(1.0);
        let mut x = u.to_vec();
        let mut corr = vec![vec![0.0; n]; rows.len()];
        let mut y = vec![0.0; n];
        for _ in 0..PROJECTION_MAX_SWEEPS {
            let mut change = 0.0f64;
            for ((row, nn), p) in rows.iter().zip(corr.iter_mut()) {
                for j in 0..n {
                    y[j] = x[j] + p[j];
                }
                let viol = dot(row, &y).min(0.0) / nn;
                for j in 0..n {
                    let next = y[j] - viol * row[j];
                    p[j] = y[j] - next;
                    change = change.max((next - x[j]).abs());
                    x[j] = next;
                }
            }
            if change <= PROJECTION_TOL * scale && self.contains(&x) {
                return Ok(x);
            }
        }
        Err(Error::ProjectionNotConverged { point: u.to_vec() })
    }

    /// Projection onto the admissible set of `side`.
    pub fn project_for(&self, side: Side, k: &[f64]) -> Result<Vec<f64>> {
        if self.negates(side) {
            let neg: Vec<f64> = k.iter().map(|x| -x).collect();
            Ok(self.project(&neg)?.into_iter().map(|x| -x).collect())
        } else {
            self.project(k)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Lattice seeds per axis.
    pub grid_per_axis: usize,
    /// Upper bound on lattice seeds; larger lattices are subsampled evenly.
    pub max_lattice_points: usize,
    /// Number of coarse winners refined to the final tolerance.
    pub multistart: usize,
    pub initial_step: f64,
    pub shrink: f64,
    /// Step growth after a successful poll, capped at the lattice radius.
    pub expand: f64,
    /// Step size at which the coarse phase stops.
    pub coarse_tolerance: f64,
    /// Step size at which the search is considered converged.
    pub tolerance: f64,
    /// Evaluation budget per stage and side.
    pub max_evaluations: usize,
    /// Include `±(gamma/2) Cov^{-1} E[P]` among the seeds.
    pub analytic_seed: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid_per_axis: 3,
            max_lattice_points: 729,
            multistart: 3,
            initial_step: 0.25,
            shrink: 0.5,
            expand: 2.0,
            coarse_tolerance: 1e-3,
            tolerance: 1e-6,
            max_evaluations: 200_000,
            analytic_seed: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSearch(m.into()));
        if self.grid_per_axis == 0 || self.max_lattice_points == 0 || self.multistart == 0 {
            return bad("counts must be at least 1");
        }
        if self.max_evaluations == 0 {
            return bad("evaluation budget must be at least 1");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink factor must lie in (0, 1)");
        }
        if !(self.expand >= 1.0 && self.expand.is_finite()) {
            return bad("expansion factor must be at least 1");
        }
        if !(self.tolerance > 0.0 && self.coarse_tolerance > 0.0 && self.initial_step > 0.0) {
            return bad("steps and tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedKind {
    /// `±(gamma/2) Cov^{-1} E[P]`, the exact minimizer at the last stage.
    Analytic,
    /// The same side's fund from the following period.
    Previous,
    Origin,
    Lattice(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub t: usize,
    pub side: Side,
    pub evaluations: usize,
    pub seeds: usize,
    pub winner: SeedKind,
    pub converged: bool,
    pub final_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub k: Vec<f64>,
    pub value: f64,
    pub diagnostics: StageDiagnostics,
}

/// `sign * (gamma/2) Cov^{-1} E[P]` for the stage's sample moments.
pub fn analytic_seed(data: &StageData<'_>, side: Side, gamma: f64) -> Vec<f64> {
    let sign = if side == Side::Plus { 1.0 } else { -1.0 };
    match solve_spd(data.cov(), data.mean()) {
        Some(v) => v.into_iter().map(|x| sign * 0.5 * gamma * x).collect(),
        None => vec![0.0; data.n_assets()],
    }
}

fn lattice(n: usize, per_axis: usize, radius: f64, cap: usize) -> Vec<Vec<f64>> {
    let coords: Vec<f64> = if per_axis == 1 {
        vec![0.0]
    } else {
        (0..per_axis)
            .map(|i| -radius + 2.0 * radius * i as f64 / (per_axis - 1) as f64)
            .collect()
    };
    let total = (per_axis as f64).powi(n as i32);
    let count = if total > cap as f64 { cap } else { total as usize };
    let stride = total / count as f64;
    (0..count)
        .map(|j| {
            let mut idx = (j as f64 * stride).floor() as u128;
            (0..n)
                .map(|_| {
                    let c = coords[(idx % per_axis as u128) as usize];
                    idx /= per_axis as u128;
                    c
                })
                .collect()
        })
        .collect()
}

struct Candidate {
    seed: SeedKind,
    x: Vec<f64>,
    fx: f64,
    step: f64,
    last_dir: usize,
}

struct Compass<'a, 'd> {
    f: &'a StageObjective<'d>,
    cone: Option<&'a ConeConstraint>,
    shrink: f64,
    expand: f64,
    max_step: f64,
    evaluations: usize,
    budget: usize,
}

impl Compass<'_, '_> {
    fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }

    fn admissible(&self, x: Vec<f64>) -> Result<Vec<f64>> {
        match self.cone {
            Some(c) => c.project_for(self.f.side(), &x),
            None => Ok(x),
        }
    }

    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        self.f.value(x)
    }

    /// Polls the `2n` coordinate directions, starting with the last successful
    /// one, accepting the first improvement. Returns `true` on convergence to `tol`.
    fn run(&mut self, c: &mut Candidate, tol: f64) -> Result<bool> {
        let n = c.x.len();
        let dirs = 2 * n;
        while c.step >= tol {
            if self.exhausted() {
                return Ok(false);
            }
            let mut moved = false;
            for offset in 0..dirs {
                if self.exhausted() {
                    return Ok(false);
                }
                let d = (c.last_dir + offset) % dirs;
                let mut trial = c.x.clone();
                trial[d / 2] += if d % 2 == 0 { c.step } else { -c.step };
                let trial = self.admissible(trial)?;
                if trial == c.x {
                    continue;
                }
                let ft = self.eval(&trial);
                if ft < c.fx {
                    c.x = trial;
                    c.fx = ft;
                    c.last_dir = d;
                    moved = true;
                    break;
                }
            }
            if moved {
                c.step = (c.step * self.expand).min(self.max_step.max(c.step));
            } else {
                c.step *= self.shrink;
            }
        }
        Ok(true)
    }
}

fn solve_stage(
    f: &StageObjective<'_>,
    t: usize,
    cone: Option<&ConeConstraint>,
    cfg: &SearchConfig,
    previous: Option<&[f64]>,
) -> Result<StageResult> {
    cfg.validate()?;
    let n = f.data().n_assets();
    if let Some(c) = cone {
        if c.n_assets != n {
            return Err(Error::Dimension { expected: n, got: c.n_assets });
        }
    }
    if let Some(p) = previous {
        if p.len() != n {
            return Err(Error::Dimension { expected: n, got: p.len() });
        }
    }
    let analytic = analytic_seed(f.data(), f.side(), f.gamma());
    let radius = 4.0 * norm(&analytic) + 1.0;

    let mut raw: Vec<(SeedKind, Vec<f64>)> = Vec::new();
    if cfg.analytic_seed {
        raw.push((SeedKind::Analytic, analytic));
    }
    if let Some(p) = previous {
        raw.push((SeedKind::Previous, p.to_vec()));
    }
    raw.push((SeedKind::Origin, vec![0.0; n]));
    for (i, x) in lattice(n, cfg.grid_per_axis, radius, cfg.max_lattice_points)
        .into_iter()
        .enumerate()
    {
        raw.push((SeedKind::Lattice(i), x));
    }

    // The coarse phase may spend at most half the budget.
    let mut search = Compass {
        f,
        cone,
        shrink: cfg.shrink,
        expand: cfg.expand,
        max_step: radius.max(cfg.initial_step),
        evaluations: 0,
        budget: cfg.max_evaluations / 2,
    };
    let mut seen: Vec<Vec<f64>> = Vec::new();
    let mut candidates = Vec::new();
    for (seed, x) in raw {
        let x = search.admissible(x)?;
        if seen.contains(&x) {
            continue;
        }
        seen.push(x.clone());
        if search.exhausted() && !candidates.is_empty() {
            break;
        }
        let fx = search.eval(&x);
        candidates.push(Candidate { seed, x, fx, step: cfg.initial_step, last_dir: 0 });
    }
    let seeds = candidates.len();

    let coarse = cfg.coarse_tolerance.max(cfg.tolerance);
    let mut converged = true;
    for c in candidates.iter_mut() {
        converged &= search.run(c, coarse)?;
    }
    // Stable sort keeps seed order among ties.
    candidates.sort_by(|a, b| a.fx.total_cmp(&b.fx));
    search.budget = cfg.max_evaluations;
    for c in candidates.iter_mut().take(cfg.multistart) {
        converged &= search.run(c, cfg.tolerance)?;
    }
    let best = candidates
        .iter()
        .take(cfg.multistart)
        .min_by(|a, b| a.fx.total_cmp(&b.fx))
        .expect("at least one seed is evaluated");
    // A candidate that never reached the final tolerance has a larger step.
    converged &= best.step < cfg.tolerance;

    Ok(StageResult {
        k: best.x.clone(),
        value: best.fx,
        diagnostics: StageDiagnostics {
            t,
            side: f.side(),
            evaluations: search.evaluations,
            seeds,
            winner: best.seed,
            converged,
            final_step: best.step,
        },
    })
}

/// Minimizes `F_t^±` over `R^n`.
#[allow(clippy::too_many_arguments)]
pub fn solve_stage_unconstrained(
    t: usize,
    side: Side,
    coeffs: &CoefficientTable,
    sc: &ScenarioSet,
    gamma: f64,
    curve: &crate::market::DiscountCurve,
    cfg: &SearchConfig,
    previous: Option<&[f64]>,
) -> Result<StageResult> {
    let f = StageObjective::new(StageData::new(t, coeffs, sc, curve)?, side, gamma);
    solve_stage(&f, t, None, cfg, previous)
}

/// Minimizes `F_t^+` over `A` or `F_t^-` over the shortage-side cone.
#[allow(clippy::too_many_arguments)]
pub fn solve_stage_cone(
    t: usize,
    side: Side,
    coeffs: &CoefficientTable,
    sc: &ScenarioSet,
    gamma: f64,
    curve: &crate::market::DiscountCurve,
    cone: &ConeConstraint,
    cfg: &SearchConfig,
    previous: Option<&[f64]>,
) -> Result<StageResult> {
    let f = StageObjective::new(StageData::new(t, coeffs, sc, curve)?, side, gamma);
    solve_stage(&f, t, Some(cone), cfg, previous)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// Per stage and side, in solve order (`t = T-1` first).
    pub stages: Vec<StageDiagnostics>,
    pub scenario_count: usize,
    pub scenario_seed: Option<u64>,
    pub search: SearchConfig,
}

impl SolveDiagnostics {
    pub fn all_converged(&self) -> bool {
        self.stages.iter().all(|s| s.converged)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub policy: PolicyTable,
    pub coefficients: CoefficientTable,
    pub diagnostics: SolveDiagnostics,
}

/// Backward induction from `t = T-1` to `0`: solve both sides, then update the
/// coefficients with the funds found.
pub fn backward_solve(
    market: &MarketSpec,
    risk: &RiskAversionSpec,
    cone: Option<&ConeConstraint>,
    sc: &ScenarioSet,
    cfg: &SearchConfig,
) -> Result<Solution> {
    market.validate()?;
    cfg.validate()?;
    let horizon = market.horizon();
    let n = market.n_assets();
    risk.validate(horizon)?;
    if sc.horizon() != horizon {
        return Err(Error::Dimension { expected: horizon, got: sc.horizon() });
    }
    if sc.n_assets() != n {
        return Err(Error::Dimension { expected: n, got: sc.n_assets() });
    }
    if let Some(c) = cone {
        if c.n_assets != n {
            return Err(Error::Dimension { expected: n, got: c.n_assets });
        }
    }
    let curve = discount_curve(market);
    let mut coeffs = CoefficientTable::terminal(horizon);
    let mut k_plus = vec![vec![0.0; n]; horizon];
    let mut k_minus = vec![vec![0.0; n]; horizon];
    let mut stages = Vec::with_capacity(2 * horizon);

    for t in (0..horizon).rev() {
        let data = StageData::new(t, &coeffs, sc, &curve)?;
        for side in Side::BOTH {
            let f = StageObjective::new(data.clone(), side, risk.gamma(t, side));
            let funds = if side == Side::Plus { &k_plus } else { &k_minus };
            let previous = (t + 1 < horizon).then(|| funds[t + 1].as_slice());
            let res = solve_stage(&f, t, cone, cfg, previous)?;
            stages.push(res.diagnostics);
            match side {
                Side::Plus => k_plus[t] = res.k,
                Side::Minus => k_minus[t] = res.k,
            }
        }
        let (ap, bp) = data.coefficients(Side::Plus, &k_plus[t]);
        let (am, bm) = data.coefficients(Side::Minus, &k_minus[t]);
        coeffs.a_plus[t] = ap;
        coeffs.b_plus[t] = bp;
        coeffs.a_minus[t] = am;
        coeffs.b_minus[t] = bm;
        for side in Side::BOTH {
            let value = coeffs.variance_factor(t, side);
            if !(value >= -VALIDITY_EPS) {
                return Err(Error::Validity { t, side, value });
            }
        }
    }

    Ok(Solution {
        policy: PolicyTable {
            k_plus,
            k_minus,
            curve,
            target: risk.target,
            cone: cone.cloned(),
        },
        coefficients: coeffs,
        diagnostics: SolveDiagnostics {
            stages,
            scenario_count: sc.n_samples(),
            scenario_seed: sc.seed(),
            search: cfg.clone(),
        },
    })
}
