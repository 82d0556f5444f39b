//! Forward Monte Carlo of wealth under a feedback rule, and the statistics
//! reported on top of it.

use rayon::prelude::*;

use crate::linalg::dot;
use crate::market::{DiscountCurve, LognormalParams, MarketSpec, ReturnModel, ScenarioSet};
use crate::policy::{PolicyTable, PrecommittedPolicy, WealthState};
use crate::rng::{standard_normals, uniform_index};
use crate::{Error, Result};

/// Anything that maps `(t, X_t)` to risky holdings.
pub trait FeedbackPolicy: Sync {
    fn horizon(&self) -> usize;
    fn n_assets(&self) -> usize;
    fn action(&self, state: WealthState) -> Result<Vec<f64>>;
}

impl FeedbackPolicy for PolicyTable {
    fn horizon(&self) -> usize {
        PolicyTable::horizon(self)
    }
    fn n_assets(&self) -> usize {
        PolicyTable::n_assets(self)
    }
    fn action(&self, state: WealthState) -> Result<Vec<f64>> {
        PolicyTable::action(self, state)
    }
}

impl FeedbackPolicy for PrecommittedPolicy {
    fn horizon(&self) -> usize {
        PrecommittedPolicy::horizon(self)
    }
    fn n_assets(&self) -> usize {
        self.direction.first().map_or(0, Vec::len)
    }
    fn action(&self, state: WealthState) -> Result<Vec<f64>> {
        PrecommittedPolicy::action(self, state)
    }
}

/// Where the excess returns of each path come from.
#[derive(Clone, Copy, Debug)]
pub enum PathSource<'a> {
    /// New draws from the market's return model. A market given by raw
    /// scenarios is resampled with replacement instead.
    Fresh { seed: u64 },
    /// Path `i` uses sample `i` of every period.
    Aligned(&'a ScenarioSet),
    /// Every `(period, path)` picks a uniformly random sample of that period,
    /// so paths follow the set's empirical measure, independent across periods.
    Resample { scenarios: &'a ScenarioSet, seed: u64 },
}

enum Sampler<'a> {
    Lognormal { params: LognormalParams, seed: u64 },
    Aligned(&'a ScenarioSet),
    Resample { sc: &'a ScenarioSet, seed: u64 },
}

impl Sampler<'_> {
    fn draw(&self, t: usize, i: usize, riskfree: f64, z: &mut [f64], out: &mut [f64]) {
        match self {
            Sampler::Lognormal { params, seed } => {
                standard_normals(*seed, t as u64, i as u64, z);
                params.gross_from_normals(z, out);
                for v in out.iter_mut() {
                    *v -= riskfree;
                }
            }
            Sampler::Aligned(sc) => out.copy_from_slice(sc.sample(t, i)),
            Sampler::Resample { sc, seed } => {
                let j = uniform_index(*seed, t as u64, i as u64, sc.n_samples());
                out.copy_from_slice(sc.sample(t, j));
            }
        }
    }
}

/// Wealth quantiles across paths at one date.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WealthQuantiles {
    pub t: usize,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationResult {
    pub x0: f64,
    pub horizon: usize,
    pub n_paths: usize,
    /// `X_1..X_T` for every path, row-major.
    pub paths: Vec<f64>,
    pub quantiles: Vec<WealthQuantiles>,
    pub mean: f64,
    /// Unbiased sample variance of `X_T`.
    pub variance: f64,
    pub stderr_mean: f64,
    /// Large-sample standard error of the variance estimate, `sqrt((m4 - v^2)/N)`.
    pub stderr_variance: f64,
}

impl SimulationResult {
    pub fn path(&self, i: usize) -> &[f64] {
        &self.paths[i * self.horizon..(i + 1) * self.horizon]
    }

    /// `X_t` across paths, `t = 1..=T`.
    pub fn wealth_at(&self, t: usize) -> Vec<f64> {
        (0..self.n_paths).map(|i| self.paths[i * self.horizon + t - 1]).collect()
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.wealth_at(self.horizon)
    }

    /// Fraction of paths with `X_t < level`.
    pub fn fraction_below(&self, t: usize, level: f64) -> f64 {
        let n = self.wealth_at(t).into_iter().filter(|x| *x < level).count();
        n as f64 / self.n_paths as f64
    }
}

/// `X_{t+1} = s_t X_t + P_t'u_t` along `n_paths` paths.
pub fn simulate<P: FeedbackPolicy + ?Sized>(
    policy: &P,
    source: &PathSource<'_>,
    market: &MarketSpec,
    x0: f64,
    n_paths: usize,
) -> Result<SimulationResult> {
    market.validate()?;
    let horizon = market.horizon();
    let n = market.n_assets();
    if policy.horizon() != horizon {
        return Err(Error::Dimension { expected: horizon, got: policy.horizon() });
    }
    if policy.n_assets() != n {
        return Err(Error::Dimension { expected: n, got: policy.n_assets() });
    }
    if n_paths < 2 {
        return Err(Error::TooFewScenarios(n_paths));
    }
    let sampler = match *source {
        PathSource::Fresh { seed } => match &market.return_model {
            ReturnModel::Moments(m) => Sampler::Lognormal { params: m.lognormal()?, seed },
            ReturnModel::Scenarios(sc) => Sampler::Resample { sc, seed },
        },
        PathSource::Aligned(sc) => {
            if sc.n_samples() < n_paths {
                return Err(Error::TooFewScenarios(sc.n_samples()));
            }
            Sampler::Aligned(sc)
        }
        PathSource::Resample { scenarios, seed } => Sampler::Resample { sc: scenarios, seed },
    };
    if let Sampler::Aligned(sc) | Sampler::Resample { sc, .. } = &sampler {
        if sc.n_assets() != n || sc.horizon() != horizon {
            return Err(Error::Dimension { expected: n, got: sc.n_assets() });
        }
    }

    let mut paths = vec![0.0; n_paths * horizon];
    paths.par_chunks_mut(horizon).enumerate().try_for_each(|(i, row)| -> Result<()> {
        let mut z = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut x = x0;
        for t in 0..horizon {
            let s = market.riskfree[t];
            let u = policy.action(WealthState::new(t, x))?;
            sampler.draw(t, i, s, &mut z, &mut p);
            x = s * x + dot(&p, &u);
            row[t] = x;
        }
        Ok(())
    })?;

    let terminal: Vec<f64> = paths.chunks_exact(horizon).map(|r| r[horizon - 1]).collect();
    let nf = n_paths as f64;
    // Shifting by the first path keeps the mean exact when all paths agree.
    let shift = terminal[0];
    let mean = shift + terminal.iter().map(|x| x - shift).sum::<f64>() / nf;
    let (m2, m4) = terminal.iter().fold((0.0, 0.0), |(m2, m4), x| {
        let d2 = (x - mean).powi(2);
        (m2 + d2, m4 + d2 * d2)
    });
    let variance = m2 / (nf - 1.0);
    let pop_var = m2 / nf;
    let stderr_variance = ((m4 / nf - pop_var * pop_var).max(0.0) / nf).sqrt();
    let quantiles = (1..=horizon)
        .map(|t| {
            let mut w: Vec<f64> = paths.chunks_exact(horizon).map(|r| r[t - 1]).collect();
            w.sort_by(f64::total_cmp);
            WealthQuantiles {
                t,
                q05: quantile_sorted(&w, 0.05),
                q25: quantile_sorted(&w, 0.25),
                q50: quantile_sorted(&w, 0.50),
                q75: quantile_sorted(&w, 0.75),
                q95: quantile_sorted(&w, 0.95),
            }
        })
        .collect();

    Ok(SimulationResult {
        x0,
        horizon,
        n_paths,
        paths,
        quantiles,
        mean,
        variance,
        stderr_mean: (variance / nf).sqrt(),
        stderr_variance,
    })
}

/// Linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(E[X_T] - rho_0 X_0) / sd(X_T)`.
pub fn sharpe_ratio(result: &SimulationResult, x0: f64, curve: &DiscountCurve) -> Result<f64> {
    let sd = result.variance.sqrt();
    if !(sd > 1e-12 * result.mean.abs().max(1.0)) {
        return Err(Error::ZeroVariance);
    }
    Ok((result.mean - curve.growth(0) * x0) / sd)
}

/// `q_t`: fraction of the scenarios with `s_t + P_t'K_t^- > 0`, the chance
/// that wealth below target stays below target over period `t`.
pub fn threshold_probabilities(p: &PolicyTable, sc_out: &ScenarioSet) -> Result<Vec<f64>> {
    let horizon = p.horizon();
    if sc_out.horizon() != horizon {
        return Err(Error::Dimension { expected: horizon, got: sc_out.horizon() });
    }
    if sc_out.n_assets() != p.n_assets() {
        return Err(Error::Dimension { expected: p.n_assets(), got: sc_out.n_assets() });
    }
    Ok((0..horizon)
        .map(|t| {
            let s = p.curve.rate(t);
            let k = &p.k_minus[t];
            let stay = sc_out
                .period(t)
                .chunks_exact(k.len())
                .filter(|row| s + dot(row, k) > 0.0)
                .count();
            stay as f64 / sc_out.n_samples() as f64
        })
        .collect())
}

pub const DENSITY_GRID: usize = 512;
pub const DENSITY_MIN_SAMPLES: usize = 100;

/// Gaussian kernel density estimate on a regular grid.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Density {
    pub bandwidth: f64,
    pub x: Vec<f64>,
    pub pdf: Vec<f64>,
}

impl Density {
    /// Trapezoid rule over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.x, &self.pdf)
    }

    /// Local maxima whose height is at least `rel` times the global maximum.
    pub fn mode_count(&self, rel: f64) -> usize {
        let top = self.pdf.iter().cloned().fold(0.0, f64::max);
        let f = &self.pdf;
        (1..f.len() - 1)
            .filter(|&i| f[i] > f[i - 1] && f[i] >= f[i + 1] && f[i] >= rel * top)
            .count()
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) N^{-1/5}`; falls back to whichever
/// spread measure is positive.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Density on 512 points over `[min - 3h, max + 3h]`, rescaled so that the
/// trapezoid integral over the grid is one.
pub fn density_estimate(samples: &[f64], bandwidth: Option<f64>) -> Result<Density> {
    if samples.len() < DENSITY_MIN_SAMPLES {
        return Err(Error::TooFewSamples { got: samples.len(), need: DENSITY_MIN_SAMPLES });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("density samples must be finite".into()));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        return Err(Error::DegenerateSamples);
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::Domain(format!("bandwidth must be positive, got {h}"))),
        None => silverman_bandwidth(samples),
    };
    if !(h > 0.0) {
        return Err(Error::DegenerateSamples);
    }
    let (a, b) = (lo - 3.0 * h, hi + 3.0 * h);
    let step = (b - a) / (DENSITY_GRID - 1) as f64;
    let x: Vec<f64> = (0..DENSITY_GRID).map(|i| a + step * i as f64).collect();
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut pdf: Vec<f64> = x
        .par_iter()
        .map(|&xi| {
            samples.iter().map(|s| (-0.5 * ((xi - s) / h).powi(2)).exp()).sum::<f64>() * norm
        })
        .collect();
    let mass = trapezoid(&x, &pdf);
    for v in pdf.iter_mut() {
        *v /= mass;
    }
    Ok(Density { bandwidth: h, x, pdf })
}
