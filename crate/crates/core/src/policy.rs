//! The time-consistent feedback policy, its closed-form terminal moments and
//! the pre-committed baseline it is compared against.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::linalg::dot;
use crate::market::{discount_curve, scenario_moments, DiscountCurve, MarketSpec, ScenarioSet};
use crate::optimizer::ConeConstraint;
use crate::recursion::{CoefficientTable, Side};
use crate::{Error, Result};

/// Wealth at the start of period `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WealthState {
    pub t: usize,
    pub wealth: f64,
}

impl WealthState {
    pub fn new(t: usize, wealth: f64) -> Self {
        Self { t, wealth }
    }

    /// `Y_t = X_t - rho_t^{-1} W`.
    pub fn surplus(&self, curve: &DiscountCurve, target: f64) -> f64 {
        self.wealth - curve.factor(self.t) * target
    }
}

/// Stage funds `K_t^±`: the holding in risky assets is `K_t^± Y_t`, with the
/// side picked by the sign of the surplus `Y_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub k_plus: Vec<Vec<f64>>,
    pub k_minus: Vec<Vec<f64>>,
    pub curve: DiscountCurve,
    pub target: f64,
    #[serde(default)]
    pub cone: Option<ConeConstraint>,
}

impl PolicyTable {
    /// Holds only the risk-free asset.
    pub fn zero(n_assets: usize, curve: DiscountCurve, target: f64) -> Self {
        let horizon = curve.horizon();
        Self {
            k_plus: vec![vec![0.0; n_assets]; horizon],
            k_minus: vec![vec![0.0; n_assets]; horizon],
            curve,
            target,
            cone: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.k_plus.len()
    }

    pub fn n_assets(&self) -> usize {
        self.k_plus.first().map_or(0, Vec::len)
    }

    pub fn constrained(&self) -> bool {
        self.cone.is_some()
    }

    pub fn fund(&self, t: usize, side: Side) -> &[f64] {
        match side {
            Side::Plus => &self.k_plus[t],
            Side::Minus => &self.k_minus[t],
        }
    }

    /// Checks shapes against a market and, when constrained, cone membership.
    pub fn validate(&self, n_assets: usize, horizon: usize) -> Result<()> {
        if self.k_plus.len() != horizon || self.k_minus.len() != horizon {
            return Err(Error::Dimension { expected: horizon, got: self.k_plus.len().min(self.k_minus.len()) });
        }
        if self.curve.horizon() != horizon {
            return Err(Error::Dimension { expected: horizon, got: self.curve.horizon() });
        }
        for k in self.k_plus.iter().chain(&self.k_minus) {
            if k.len() != n_assets {
                return Err(Error::Dimension { expected: n_assets, got: k.len() });
            }
            if k.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("policy funds must be finite".into()));
            }
        }
        if let Some(c) = &self.cone {
            for t in 0..horizon {
                for side in Side::BOTH {
                    if !c.admits(side, self.fund(t, side)) {
                        return Err(Error::Domain(format!("{side} fund at t={t} lies outside the cone")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Currency amounts held in the risky assets; the rest, `X_t - 1'u`, is risk-free.
    pub fn action(&self, state: WealthState) -> Result<Vec<f64>> {
        let horizon = self.horizon();
        if state.t >= horizon {
            return Err(Error::PeriodOutOfRange { t: state.t, horizon });
        }
        let y = state.surplus(&self.curve, self.target);
        let side = if y >= 0.0 { Side::Plus } else { Side::Minus };
        Ok(self.fund(state.t, side).iter().map(|k| k * y).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Domain(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Domain(format!("policy: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalMoments {
    pub mean: f64,
    pub variance: f64,
}

/// `E[X_T] = rho_0 X_0 + a_0 Y_0`, `Var[X_T] = (b_0 - a_0^2) Y_0^2`, with the
/// side picked by the sign of `Y_0`.
pub fn closed_form_terminal_moments(
    p: &PolicyTable,
    coeffs: &CoefficientTable,
    x0: f64,
) -> TerminalMoments {
    let y = WealthState::new(0, x0).surplus(&p.curve, p.target);
    let side = if y >= 0.0 { Side::Plus } else { Side::Minus };
    let a = coeffs.a(0, side);
    TerminalMoments {
        mean: p.curve.growth(0) * x0 + a * y,
        variance: coeffs.variance_factor(0, side) * y * y,
    }
}

/// Pre-committed mean-variance rule
/// `u_t = -E[PP']^{-1} E[P] s_t (X_t - lambda_0 rho_t^{-1})`, fixed at time 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecommittedPolicy {
    /// `E[P_t P_t']^{-1} E[P_t]` per period.
    pub direction: Vec<Vec<f64>>,
    /// `E[P_t]' E[P_t P_t']^{-1} E[P_t]` per period, each in `(0, 1)`.
    pub theta: Vec<f64>,
    pub curve: DiscountCurve,
    pub gamma: f64,
    pub lambda0: f64,
}

impl PrecommittedPolicy {
    pub fn horizon(&self) -> usize {
        self.theta.len()
    }

    /// `lambda_t = rho_t X_t + (gamma/2) / prod_{k>=t} (1 - theta_k)`: the
    /// multiplier an investor re-solving at `t` from wealth `X_t` would use.
    pub fn lambda_at(&self, t: usize, wealth: f64) -> Result<f64> {
        if t >= self.horizon() {
            return Err(Error::PeriodOutOfRange { t, horizon: self.horizon() });
        }
        let prod: f64 = self.theta[t..].iter().map(|th| 1.0 - th).product();
        Ok(self.curve.growth(t) * wealth + 0.5 * self.gamma / prod)
    }

    pub fn action(&self, state: WealthState) -> Result<Vec<f64>> {
        if state.t >= self.horizon() {
            return Err(Error::PeriodOutOfRange { t: state.t, horizon: self.horizon() });
        }
        let gap = state.wealth - self.lambda0 * self.curve.factor(state.t);
        let scale = -self.curve.rate(state.t) * gap;
        Ok(self.direction[state.t].iter().map(|d| d * scale).collect())
    }
}

/// Builds the pre-committed rule from the sample moments of `sc`.
pub fn precommitted_policy(
    market: &MarketSpec,
    sc: &ScenarioSet,
    gamma: f64,
    x0: f64,
) -> Result<PrecommittedPolicy> {
    market.validate()?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be finite and nonnegative, got {gamma}")));
    }
    let horizon = market.horizon();
    if sc.horizon() != horizon || sc.n_assets() != market.n_assets() {
        return Err(Error::Dimension { expected: horizon, got: sc.horizon() });
    }
    let mut direction = Vec::with_capacity(horizon);
    let mut theta = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let m = scenario_moments(sc, t).map_err(|_| Error::SingularSecondMoment { period: t })?;
        let chol = m.second.clone().cholesky().ok_or(Error::SingularSecondMoment { period: t })?;
        let d: Vec<f64> = chol.solve(&DVector::from_column_slice(&m.mean)).iter().copied().collect();
        theta.push(dot(&m.mean, &d));
        direction.push(d);
    }
    let curve = discount_curve(market);
    let mut p = PrecommittedPolicy { direction, theta, curve, gamma, lambda0: 0.0 };
    p.lambda0 = p.lambda_at(0, x0)?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::generate_scenarios;
    use crate::optimizer::{backward_solve, SearchConfig};
    use crate::recursion::RiskAversionSpec;
    use approx::assert_relative_eq;

    fn table(k: f64) -> PolicyTable {
        let curve = DiscountCurve::from_rates(&[1.05; 3]);
        PolicyTable {
            k_plus: vec![vec![k, -k, 0.5 * k]; 3],
            k_minus: vec![vec![-k, 0.0, -2.0 * k]; 3],
            curve,
            target: 2.0,
            cone: None,
        }
    }

    #[test]
    fn on_target_holds_riskfree() {
        let p = table(0.7);
        let x = p.curve.factor(1) * p.target;
        assert!(p.action(WealthState::new(1, x)).unwrap().iter().all(|u| *u == 0.0));
    }

    #[test]
    fn action_picks_branch_and_is_homogeneous() {
        let p = table(0.7);
        let base = p.curve.factor(2) * p.target;
        let u1 = p.action(WealthState::new(2, base + 1.0)).unwrap();
        let u2 = p.action(WealthState::new(2, base + 2.0)).unwrap();
        assert_eq!(u1, p.k_plus[2]);
        for (a, b) in u1.iter().zip(&u2) {
            assert_relative_eq!(2.0 * a, *b, epsilon = 1e-12);
        }
        let d = p.action(WealthState::new(2, base - 1.0)).unwrap();
        let expect: Vec<f64> = p.k_minus[2].iter().map(|k| -k).collect();
        assert_eq!(d, expect);
    }

    #[test]
    fn action_is_continuous_at_reference() {
        let p = table(1.3);
        let base = p.curve.factor(0) * p.target;
        for side_sign in [1.0, -1.0] {
            let u = p.action(WealthState::new(0, base + side_sign * 1e-9)).unwrap();
            assert!(u.iter().all(|v| v.abs() < 1e-8));
        }
    }

    #[test]
    fn action_out_of_range() {
        assert!(matches!(
            table(1.0).action(WealthState::new(3, 1.0)),
            Err(Error::PeriodOutOfRange { t: 3, horizon: 3 })
        ));
    }

    #[test]
    fn json_round_trip() {
        let mut p = table(0.3);
        p.cone = Some(ConeConstraint::no_shorting(3));
        let back = PolicyTable::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(PolicyTable::from_json("{\"k_plus\": [[1.0,").is_err());
    }

    #[test]
    fn validate_catches_cone_violation_and_shape() {
        let mut p = table(0.3);
        assert!(p.validate(3, 3).is_ok());
        assert!(p.validate(2, 3).is_err());
        p.cone = Some(ConeConstraint::no_shorting(3));
        assert!(p.validate(3, 3).is_err());
    }

    #[test]
    fn on_target_closed_form() {
        let p = table(0.5);
        let c = CoefficientTable { a_plus: vec![0.3; 4], a_minus: vec![-0.2; 4], b_plus: vec![0.2; 4], b_minus: vec![0.1; 4] };
        let x0 = p.curve.factor(0) * p.target;
        let m = closed_form_terminal_moments(&p, &c, x0);
        assert_relative_eq!(m.mean, p.target, epsilon = 1e-12);
        assert_eq!(m.variance, 0.0);
    }

    #[test]
    fn below_target_closed_form_uses_minus_branch() {
        let p = table(0.5);
        let c = CoefficientTable { a_plus: vec![0.3; 4], a_minus: vec![-0.2; 4], b_plus: vec![0.2; 4], b_minus: vec![0.1; 4] };
        let y = 1.0 - 2.0 / 1.05f64.powi(3);
        let m = closed_form_terminal_moments(&p, &c, 1.0);
        assert_relative_eq!(m.mean, 1.05f64.powi(3) - 0.2 * y, epsilon = 1e-12);
        assert_relative_eq!(m.variance, (0.1 - 0.04) * y * y, epsilon = 1e-12);
    }

    #[test]
    fn zero_gamma_closed_form() {
        let spec = MarketSpec::three_index_example();
        let sc = generate_scenarios(&spec, 2000, 3).unwrap();
        let risk = RiskAversionSpec::constant(3, 0.0, 0.0, 2.0);
        let sol = backward_solve(&spec, &risk, None, &sc, &SearchConfig::default()).unwrap();
        let m = closed_form_terminal_moments(&sol.policy, &sol.coefficients, 1.0);
        assert_relative_eq!(m.mean, 1.05f64.powi(3), epsilon = 1e-12);
        assert_eq!(m.variance, 0.0);
    }

    #[test]
    fn precommitted_zero_gamma_is_riskfree() {
        let spec = MarketSpec::three_index_example();
        let sc = generate_scenarios(&spec, 2000, 3).unwrap();
        let p = precommitted_policy(&spec, &sc, 0.0, 1.0).unwrap();
        assert_relative_eq!(p.lambda0, 1.05f64.powi(3), epsilon = 1e-12);
        let u = p.action(WealthState::new(0, 1.0)).unwrap();
        assert!(u.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn precommitted_theta_bounds_and_lambda() {
        let spec = MarketSpec::three_index_example();
        let sc = generate_scenarios(&spec, 5000, 3).unwrap();
        let p = precommitted_policy(&spec, &sc, 1.0, 1.0).unwrap();
        assert!(p.theta.iter().all(|th| *th > 0.0 && *th < 1.0));
        assert!(p.lambda0.is_finite() && p.lambda0 > 1.05f64.powi(3));
        // Re-solving at t = 1 from a wealth the t = 0 rule can reach moves lambda.
        let u0 = p.action(WealthState::new(0, 1.0)).unwrap();
        let x1 = 1.05 + dot(sc.sample(0, 0), &u0);
        let l1 = p.lambda_at(1, x1).unwrap();
        assert!((l1 - p.lambda0).abs() > 1e-6);
    }

    #[test]
    fn one_period_precommitted_matches_time_consistent() {
        let spec = MarketSpec { riskfree: vec![1.05], ..MarketSpec::three_index_example() };
        let sc = generate_scenarios(&spec, 5000, 9).unwrap();
        let pre = precommitted_policy(&spec, &sc, 1.0, 1.0).unwrap();
        // target 0 puts Y_0 = X_0 = 1, so gamma Y_0 equals the constant trade-off
        let risk = RiskAversionSpec::constant(1, 1.0, 1.0, 0.0);
        let sol = backward_solve(&spec, &risk, None, &sc, &SearchConfig::default()).unwrap();
        let u_pre = pre.action(WealthState::new(0, 1.0)).unwrap();
        let u_tc = sol.policy.action(WealthState::new(0, 1.0)).unwrap();
        for (a, b) in u_pre.iter().zip(&u_tc) {
            assert!((a - b).abs() < 1e-4, "{u_pre:?} {u_tc:?}");
        }
    }
}
