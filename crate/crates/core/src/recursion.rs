//! Stage objectives `F_t^±` under the sample measure and the backward
//! recursion for the coefficients `a_t^±`, `b_t^±`.
//!
//! With `z = s_t + P_t'K`, the next-period surplus is `Y_{t+1} = z * Y_t`. On
//! the plus side (`Y_t >= 0`) the next state is on the plus branch when
//! `z >= 0`; on the minus side (`Y_t < 0`) when `z <= 0`. Both objectives are
//! then one expression:
//!
//! ```text
//! F(K) = rho'^2 K' Cov K + E[(2 rho' a_br + b_br) z^2] - A^2 - 2 rho' A m
//!        - sign * gamma * (A + rho' m),      A = E[a_br z],  m = s_t + E[P]'K
//! ```
//!
//! where `rho' = rho_{t+1}`, `(a_br, b_br)` are the time-`t+1` coefficients
//! of the branch the scenario lands on and `sign` is `+1` for the plus side.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, quad_form};
use crate::market::{scenario_moments, DiscountCurve, ScenarioSet};
use crate::rng::standard_normals;
use crate::{Error, Result};

/// Branch of the piecewise risk aversion: surplus (`Plus`) or shortage (`Minus`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Plus, Side::Minus];

    fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }

    /// Whether a scenario with gross surplus multiplier `z` moves the state
    /// onto the plus branch next period. Ties go to the plus branch.
    #[inline]
    pub fn lands_on_plus(self, z: f64) -> bool {
        match self {
            Side::Plus => z >= 0.0,
            Side::Minus => z <= 0.0,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Plus => "plus",
            Side::Minus => "minus",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskAversionSpec {
    pub gamma_plus: Vec<f64>,
    pub gamma_minus: Vec<f64>,
    /// Investment target `W`.
    pub target: f64,
}

impl RiskAversionSpec {
    pub fn constant(horizon: usize, gamma_plus: f64, gamma_minus: f64, target: f64) -> Self {
        Self {
            gamma_plus: vec![gamma_plus; horizon],
            gamma_minus: vec![gamma_minus; horizon],
            target,
        }
    }

    pub fn gamma(&self, t: usize, side: Side) -> f64 {
        match side {
            Side::Plus => self.gamma_plus[t],
            Side::Minus => self.gamma_minus[t],
        }
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        for v in [&self.gamma_plus, &self.gamma_minus] {
            if v.len() != horizon {
                return Err(Error::Dimension { expected: horizon, got: v.len() });
            }
            if v.iter().any(|g| !g.is_finite()) {
                return Err(Error::Domain("risk aversion coefficients must be finite".into()));
            }
        }
        if !self.target.is_finite() {
            return Err(Error::Domain("target wealth must be finite".into()));
        }
        Ok(())
    }
}

/// `a_t^±`, `b_t^±` for `t = 0..=T`; index `T` holds the terminal zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub a_plus: Vec<f64>,
    pub a_minus: Vec<f64>,
    pub b_plus: Vec<f64>,
    pub b_minus: Vec<f64>,
}

impl CoefficientTable {
    pub fn terminal(horizon: usize) -> Self {
        let z = vec![0.0; horizon + 1];
        Self { a_plus: z.clone(), a_minus: z.clone(), b_plus: z.clone(), b_minus: z }
    }

    pub fn horizon(&self) -> usize {
        self.a_plus.len() - 1
    }

    pub fn a(&self, t: usize, side: Side) -> f64 {
        match side {
            Side::Plus => self.a_plus[t],
            Side::Minus => self.a_minus[t],
        }
    }

    pub fn b(&self, t: usize, side: Side) -> f64 {
        match side {
            Side::Plus => self.b_plus[t],
            Side::Minus => self.b_minus[t],
        }
    }

    /// `b_t^± - (a_t^±)^2`: the terminal variance per unit squared surplus.
    pub fn variance_factor(&self, t: usize, side: Side) -> f64 {
        self.b(t, side) - self.a(t, side).powi(2)
    }

    /// First `(t, side)` where `b - a^2 < -eps`.
    pub fn check_validity(&self, eps: f64) -> Result<()> {
        for t in 0..=self.horizon() {
            for side in Side::BOTH {
                let value = self.variance_factor(t, side);
                if !(value >= -eps) {
                    return Err(Error::Validity { t, side, value });
                }
            }
        }
        Ok(())
    }

    fn set(&mut self, t: usize, side: Side, a: f64, b: f64) {
        match side {
            Side::Plus => {
                self.a_plus[t] = a;
                self.b_plus[t] = b;
            }
            Side::Minus => {
                self.a_minus[t] = a;
                self.b_minus[t] = b;
            }
        }
    }
}

/// Everything about period `t` that does not depend on the side or on `gamma`.
#[derive(Clone, Debug)]
pub struct StageData<'a> {
    samples: &'a [f64],
    n: usize,
    n_samples: usize,
    s: f64,
    rho_next: f64,
    next: [f64; 4],
    mean: Vec<f64>,
    second: DMatrix<f64>,
    cov: DMatrix<f64>,
}

impl<'a> StageData<'a> {
    pub fn new(
        t: usize,
        coeffs: &CoefficientTable,
        sc: &'a ScenarioSet,
        curve: &DiscountCurve,
    ) -> Result<Self> {
        let horizon = sc.horizon();
        if t >= horizon {
            return Err(Error::PeriodOutOfRange { t, horizon });
        }
        if coeffs.horizon() != horizon {
            return Err(Error::Dimension { expected: horizon, got: coeffs.horizon() });
        }
        if curve.horizon() != horizon {
            return Err(Error::Dimension { expected: horizon, got: curve.horizon() });
        }
        let m = scenario_moments(sc, t)?;
        Ok(Self {
            samples: sc.period(t),
            n: sc.n_assets(),
            n_samples: sc.n_samples(),
            s: curve.rate(t),
            rho_next: curve.growth(t + 1),
            next: [
                coeffs.a_plus[t + 1],
                coeffs.a_minus[t + 1],
                coeffs.b_plus[t + 1],
                coeffs.b_minus[t + 1],
            ],
            mean: m.mean,
            second: m.second,
            cov: m.cov,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn riskfree(&self) -> f64 {
        self.s
    }

    /// Whether the Proposition-style coercivity hypothesis
    /// `b_{t+1}^± - (a_{t+1}^±)^2 >= -eps` holds for both branches.
    pub fn coercivity_hypothesis(&self, eps: f64) -> bool {
        let [ap, am, bp, bm] = self.next;
        bp - ap * ap >= -eps && bm - am * am >= -eps
    }

    fn check_dim(&self, k: &[f64]) -> Result<()> {
        if k.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: k.len() });
        }
        Ok(())
    }

    /// `(a_t, b_t)` for the given side and fund `k`.
    pub fn coefficients(&self, side: Side, k: &[f64]) -> (f64, f64) {
        let [ap, am, bp, bm] = self.next;
        let mut a_sum = 0.0;
        let mut b_cross = 0.0;
        let mut b_sq = 0.0;
        for row in self.samples.chunks_exact(self.n) {
            let pk = dot(row, k);
            let z = self.s + pk;
            let (a, b) = if side.lands_on_plus(z) { (ap, bp) } else { (am, bm) };
            a_sum += a * z;
            b_cross += a * z * pk;
            b_sq += b * z * z;
        }
        let inv = 1.0 / self.n_samples as f64;
        let r = self.rho_next;
        let a = r * dot(&self.mean, k) + a_sum * inv;
        let b = r * r * quad_form(&self.second, k) + 2.0 * r * b_cross * inv + b_sq * inv;
        (a, b)
    }
}

/// `F_t^+` or `F_t^-` for a fixed period, side and `gamma`.
#[derive(Clone, Debug)]
pub struct StageObjective<'a> {
    data: StageData<'a>,
    side: Side,
    gamma: f64,
}

impl<'a> StageObjective<'a> {
    pub fn new(data: StageData<'a>, side: Side, gamma: f64) -> Self {
        Self { data, side, gamma }
    }

    pub fn data(&self) -> &StageData<'a> {
        &self.data
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Evaluates the objective. `k` must have `n_assets` entries.
    pub fn value(&self, k: &[f64]) -> f64 {
        let d = &self.data;
        let [ap, am, bp, bm] = d.next;
        let r = d.rho_next;
        let (mut z_up, mut z2_up, mut z_dn, mut z2_dn) = (0.0, 0.0, 0.0, 0.0);
        for row in d.samples.chunks_exact(d.n) {
            let z = d.s + dot(row, k);
            if self.side.lands_on_plus(z) {
                z_up += z;
                z2_up += z * z;
            } else {
                z_dn += z;
                z2_dn += z * z;
            }
        }
        let inv = 1.0 / d.n_samples as f64;
        let (z_up, z2_up, z_dn, z2_dn) = (z_up * inv, z2_up * inv, z_dn * inv, z2_dn * inv);
        let m = d.s + dot(&d.mean, k);
        let big_a = ap * z_up + am * z_dn;
        r * r * quad_form(&d.cov, k) + (2.0 * r * ap + bp) * z2_up + (2.0 * r * am + bm) * z2_dn
            - big_a * big_a
            - 2.0 * r * big_a * m
            - self.side.sign() * self.gamma * (big_a + r * m)
    }

    pub fn try_value(&self, k: &[f64]) -> Result<f64> {
        self.data.check_dim(k)?;
        Ok(self.value(k))
    }
}

pub fn eval_f_plus(
    k: &[f64],
    t: usize,
    coeffs: &CoefficientTable,
    sc: &ScenarioSet,
    gamma_plus: f64,
    curve: &DiscountCurve,
) -> Result<f64> {
    StageObjective::new(StageData::new(t, coeffs, sc, curve)?, Side::Plus, gamma_plus).try_value(k)
}

pub fn eval_f_minus(
    k: &[f64],
    t: usize,
    coeffs: &CoefficientTable,
    sc: &ScenarioSet,
    gamma_minus: f64,
    curve: &DiscountCurve,
) -> Result<f64> {
    StageObjective::new(StageData::new(t, coeffs, sc, curve)?, Side::Minus, gamma_minus)
        .try_value(k)
}

/// Writes `a_t^±`, `b_t^±` from the time-`t+1` entries of `coeffs` and the
/// chosen funds.
pub fn update_coefficients(
    t: usize,
    k_plus: &[f64],
    k_minus: &[f64],
    coeffs: &mut CoefficientTable,
    sc: &ScenarioSet,
    curve: &DiscountCurve,
) -> Result<()> {
    let data = StageData::new(t, coeffs, sc, curve)?;
    data.check_dim(k_plus)?;
    data.check_dim(k_minus)?;
    let (ap, bp) = data.coefficients(Side::Plus, k_plus);
    let (am, bm) = data.coefficients(Side::Minus, k_minus);
    coeffs.set(t, Side::Plus, ap, bp);
    coeffs.set(t, Side::Minus, am, bm);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub t: usize,
    pub directions: usize,
    pub radius: f64,
    /// `b_{t+1}^± - (a_{t+1}^±)^2 >= 0` (up to 1e-8).
    pub hypothesis_holds: bool,
    /// Smallest `F(radius L) - F(radius/10 L)` over directions and both sides.
    pub min_margin: Option<f64>,
    pub passed: bool,
}

const DIRECTION_SEED: u64 = 0x00C0_E4C1_71E5;

/// Deterministic unit directions: the signed coordinate axes first, then
/// normalised Gaussian draws.
pub fn unit_directions(n: usize, count: usize, t: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    for k in 0..count.min(2 * n) {
        let mut e = vec![0.0; n];
        e[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
        out.push(e);
    }
    let mut idx = 0u64;
    while out.len() < count {
        let mut v = vec![0.0; n];
        standard_normals(DIRECTION_SEED, t as u64, idx, &mut v);
        idx += 1;
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            out.push(v.iter().map(|x| x / norm).collect());
        }
    }
    out
}

/// Checks that both stage objectives grow along rays: `F(radius L) > F(radius/10 L)`.
pub fn coercivity_certificate(
    t: usize,
    coeffs: &CoefficientTable,
    sc: &ScenarioSet,
    risk: &RiskAversionSpec,
    curve: &DiscountCurve,
    directions: usize,
    radius: f64,
) -> Result<CoercivityReport> {
    let data = StageData::new(t, coeffs, sc, curve)?;
    let hypothesis_holds = data.coercivity_hypothesis(1e-8);
    let dirs = unit_directions(data.n_assets(), directions, t);
    let mut min_margin: Option<f64> = None;
    for side in Side::BOTH {
        let f = StageObjective::new(data.clone(), side, risk.gamma(t, side));
        for l in &dirs {
            let far: Vec<f64> = l.iter().map(|x| x * radius).collect();
            let near: Vec<f64> = l.iter().map(|x| x * radius / 10.0).collect();
            let margin = f.value(&far) - f.value(&near);
            min_margin = Some(min_margin.map_or(margin, |m| m.min(margin)));
        }
    }
    let passed = hypothesis_holds && min_margin.is_none_or(|m| m > 0.0);
    Ok(CoercivityReport { t, directions: dirs.len(), radius, hypothesis_holds, min_margin, passed })
}
