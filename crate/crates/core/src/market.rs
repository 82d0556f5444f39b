//! Market description, lognormal calibration and the fixed scenario sets that
//! stand in for every expectation.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::is_positive_definite;
use crate::rng::standard_normals;
use crate::{Error, Result};

/// How the mean/std pair of a [`MomentSpec`] is to be read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentConvention {
    /// Mean and std of the simple return `e - 1`; the lognormal is moment-matched
    /// on gross returns.
    #[default]
    Arithmetic,
    /// Mean, std and correlation of the log gross return.
    Log,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentSpec {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub corr: DMatrix<f64>,
    pub convention: MomentConvention,
}

impl MomentSpec {
    pub fn lognormal(&self) -> Result<LognormalParams> {
        match self.convention {
            MomentConvention::Arithmetic => calibrate_lognormal(&self.mean, &self.std, &self.corr),
            MomentConvention::Log => {
                check_corr(&self.corr, self.mean.len())?;
                let n = self.mean.len();
                let sigma = DMatrix::from_fn(n, n, |i, j| {
                    self.std[i] * self.std[j] * self.corr[(i, j)]
                });
                LognormalParams::new(self.mean.clone(), sigma)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum ReturnModel {
    Moments(MomentSpec),
    /// Excess-return scenarios supplied directly; used as-is.
    Scenarios(ScenarioSet),
}

#[derive(Clone, Debug)]
pub struct MarketSpec {
    /// Gross risk-free rate `s_t` of each period.
    pub riskfree: Vec<f64>,
    pub asset_names: Vec<String>,
    pub return_model: ReturnModel,
}

impl MarketSpec {
    pub fn new(
        riskfree: Vec<f64>,
        asset_names: Vec<String>,
        return_model: ReturnModel,
    ) -> Result<Self> {
        let spec = Self { riskfree, asset_names, return_model };
        spec.validate()?;
        Ok(spec)
    }

    /// Three equity indices (SP, EM, MS) over three years with a 5% bank account.
    pub fn three_index_example() -> Self {
        let corr = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.64, 0.79, 0.64, 1.0, 0.75, 0.79, 0.75, 1.0],
        );
        Self {
            riskfree: vec![1.05; 3],
            asset_names: vec!["SP".into(), "EM".into(), "MS".into()],
            return_model: ReturnModel::Moments(MomentSpec {
                mean: vec![0.14, 0.16, 0.17],
                std: vec![0.185, 0.30, 0.24],
                corr,
                convention: MomentConvention::Arithmetic,
            }),
        }
    }

    pub fn horizon(&self) -> usize {
        self.riskfree.len()
    }

    pub fn n_assets(&self) -> usize {
        match &self.return_model {
            ReturnModel::Moments(m) => m.mean.len(),
            ReturnModel::Scenarios(sc) => sc.n_assets(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.riskfree.is_empty() {
            return Err(Error::InvalidMarket("horizon must be at least 1".into()));
        }
        if let Some(s) = self.riskfree.iter().find(|s| !(**s > 1.0 && s.is_finite())) {
            return Err(Error::InvalidMarket(format!("risk-free gross rate {s} must exceed 1")));
        }
        let n = self.n_assets();
        if n == 0 {
            return Err(Error::InvalidMarket("at least one risky asset is required".into()));
        }
        if !self.asset_names.is_empty() && self.asset_names.len() != n {
            return Err(Error::Dimension { expected: n, got: self.asset_names.len() });
        }
        match &self.return_model {
            ReturnModel::Moments(m) => {
                if m.std.len() != n {
                    return Err(Error::Dimension { expected: n, got: m.std.len() });
                }
                check_corr(&m.corr, n)?;
            }
            ReturnModel::Scenarios(sc) => {
                if sc.horizon() != self.horizon() {
                    return Err(Error::Dimension { expected: self.horizon(), got: sc.horizon() });
                }
            }
        }
        Ok(())
    }
}

fn check_corr(corr: &DMatrix<f64>, n: usize) -> Result<()> {
    if corr.nrows() != n || corr.ncols() != n {
        return Err(Error::Dimension { expected: n, got: corr.nrows() });
    }
    for i in 0..n {
        if (corr[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMarket(format!("correlation diagonal entry {i} is not 1")));
        }
        for j in 0..i {
            if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-12 {
                return Err(Error::InvalidMarket("correlation matrix is not symmetric".into()));
            }
        }
    }
    if !is_positive_definite(corr) {
        return Err(Error::InvalidMarket("correlation matrix is not positive definite".into()));
    }
    Ok(())
}

/// Parameters of `log e ~ N(mu, sigma)` for the gross return vector `e`.
#[derive(Clone, Debug)]
pub struct LognormalParams {
    pub mu: Vec<f64>,
    pub sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl LognormalParams {
    pub fn new(mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Calibration("log-return covariance is not positive definite".into()))?
            .unpack();
        Ok(Self { mu, sigma, chol })
    }

    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }

    /// Exact `E[e]`.
    pub fn gross_mean(&self) -> Vec<f64> {
        self.mu
            .iter()
            .enumerate()
            .map(|(i, m)| (m + 0.5 * self.sigma[(i, i)]).exp())
            .collect()
    }

    /// Exact `Cov(e)`.
    pub fn gross_cov(&self) -> DMatrix<f64> {
        let g = self.gross_mean();
        let n = g.len();
        DMatrix::from_fn(n, n, |i, j| g[i] * g[j] * (self.sigma[(i, j)].exp() - 1.0))
    }

    /// Gross return for a vector of independent standard normals.
    pub fn gross_from_normals(&self, z: &[f64], out: &mut [f64]) {
        let n = self.mu.len();
        for i in 0..n {
            let mut x = self.mu[i];
            for j in 0..=i {
                x += self.chol[(i, j)] * z[j];
            }
            out[i] = x.exp();
        }
    }
}

/// Moment-matches a multivariate lognormal to the mean, std and correlation
/// of simple returns.
pub fn calibrate_lognormal(
    mean: &[f64],
    std: &[f64],
    corr: &DMatrix<f64>,
) -> Result<LognormalParams> {
    let n = mean.len();
    if std.len() != n {
        return Err(Error::Dimension { expected: n, got: std.len() });
    }
    if let Some(s) = std.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Domain(format!("standard deviation {s} must be positive")));
    }
    if let Some(m) = mean.iter().find(|m| !(1.0 + **m > 0.0)) {
        return Err(Error::Domain(format!("gross mean 1 + {m} must be positive")));
    }
    check_corr(corr, n)?;
    let g: Vec<f64> = mean.iter().map(|m| 1.0 + m).collect();
    let sigma = DMatrix::from_fn(n, n, |i, j| {
        (std[i] * std[j] * corr[(i, j)] / (g[i] * g[j])).ln_1p()
    });
    if !is_positive_definite(&sigma) {
        return Err(Error::Calibration("implied log-return covariance is not positive definite".into()));
    }
    let mu = (0..n).map(|i| g[i].ln() - 0.5 * sigma[(i, i)]).collect();
    LognormalParams::new(mu, sigma)
}

/// Excess-return samples `P_t^{(i)}`, one row-major `N x n` block per period.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSet {
    n_assets: usize,
    n_samples: usize,
    seed: Option<u64>,
    periods: Vec<Vec<f64>>,
}

impl ScenarioSet {
    pub fn from_periods(n_assets: usize, periods: Vec<Vec<f64>>) -> Result<Self> {
        if n_assets == 0 || periods.is_empty() {
            return Err(Error::InvalidMarket("empty scenario set".into()));
        }
        let len = periods[0].len();
        if len % n_assets != 0 {
            return Err(Error::Dimension { expected: n_assets, got: len % n_assets });
        }
        if let Some(p) = periods.iter().find(|p| p.len() != len) {
            return Err(Error::Dimension { expected: len, got: p.len() });
        }
        let n_samples = len / n_assets;
        if n_samples < 2 {
            return Err(Error::TooFewScenarios(n_samples));
        }
        Ok(Self { n_assets, n_samples, seed: None, periods })
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn horizon(&self) -> usize {
        self.periods.len()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Row-major `N x n` block of period `t`.
    pub fn period(&self, t: usize) -> &[f64] {
        &self.periods[t]
    }

    pub fn sample(&self, t: usize, i: usize) -> &[f64] {
        &self.periods[t][i * self.n_assets..(i + 1) * self.n_assets]
    }

    /// Reads the raw CSV layout: header `period,sample,<asset...>`, one row per
    /// `(period, sample)` holding excess returns.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let n_assets = rdr.headers()?.len().checked_sub(2).filter(|n| *n > 0).ok_or_else(|| {
            Error::ScenarioFile("expected header `period,sample,<asset columns>`".into())
        })?;
        let mut periods: Vec<Vec<(usize, Vec<f64>)>> = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |k: usize| -> Result<f64> {
                record[k].parse::<f64>().map_err(|e| {
                    Error::ScenarioFile(format!("row {}: column {}: {e}", line + 2, k + 1))
                })
            };
            if record.len() != n_assets + 2 {
                return Err(Error::ScenarioFile(format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    record.len(),
                    n_assets + 2
                )));
            }
            let t = parse(0)? as usize;
            let i = parse(1)? as usize;
            let row = (0..n_assets).map(|k| parse(k + 2)).collect::<Result<Vec<_>>>()?;
            if periods.len() <= t {
                periods.resize_with(t + 1, Vec::new);
            }
            periods[t].push((i, row));
        }
        let mut blocks = Vec::with_capacity(periods.len());
        for (t, mut rows) in periods.into_iter().enumerate() {
            rows.sort_by_key(|(i, _)| *i);
            if rows.iter().enumerate().any(|(k, (i, _))| k != *i) {
                return Err(Error::ScenarioFile(format!(
                    "period {t}: sample indices must be 0..N without gaps"
                )));
            }
            blocks.push(rows.into_iter().flat_map(|(_, r)| r).collect());
        }
        Self::from_periods(n_assets, blocks)
    }

    pub fn write_csv<W: Write>(&self, writer: W, asset_names: &[String]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["period".to_string(), "sample".to_string()];
        if asset_names.len() == self.n_assets {
            header.extend(asset_names.iter().cloned());
        } else {
            header.extend((0..self.n_assets).map(|k| format!("asset{k}")));
        }
        wtr.write_record(&header)?;
        for t in 0..self.horizon() {
            for i in 0..self.n_samples {
                let mut rec = vec![t.to_string(), i.to_string()];
                rec.extend(self.sample(t, i).iter().map(|v| format!("{v:e}")));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Draws `n_samples` excess-return scenarios per period. The draw for
/// `(period, sample)` depends only on `(seed, period, sample)`.
pub fn generate_scenarios(spec: &MarketSpec, n_samples: usize, seed: u64) -> Result<ScenarioSet> {
    spec.validate()?;
    if n_samples < 2 {
        return Err(Error::TooFewScenarios(n_samples));
    }
    let moments = match &spec.return_model {
        ReturnModel::Scenarios(sc) => return Ok(sc.clone()),
        ReturnModel::Moments(m) => m,
    };
    let params = moments.lognormal()?;
    let n = params.n_assets();
    let periods = spec
        .riskfree
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            let mut block = vec![0.0; n_samples * n];
            block.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                let mut z = vec![0.0; n];
                standard_normals(seed, t as u64, i as u64, &mut z);
                params.gross_from_normals(&z, row);
                for v in row.iter_mut() {
                    *v -= s;
                }
            });
            block
        })
        .collect();
    Ok(ScenarioSet { n_assets: n, n_samples, seed: Some(seed), periods })
}

/// Discount factors `rho_t^{-1} = prod_{j=t}^{T-1} 1/s_j`, `t = 0..=T`, kept
/// together with the per-period gross rates they were built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscountCurve {
    pub factors: Vec<f64>,
    pub rates: Vec<f64>,
}

impl DiscountCurve {
    pub fn from_rates(riskfree: &[f64]) -> Self {
        let mut factors = vec![1.0; riskfree.len() + 1];
        for t in (0..riskfree.len()).rev() {
            factors[t] = factors[t + 1] / riskfree[t];
        }
        Self { factors, rates: riskfree.to_vec() }
    }

    /// Gross risk-free rate `s_t`.
    pub fn rate(&self, t: usize) -> f64 {
        self.rates[t]
    }

    pub fn horizon(&self) -> usize {
        self.factors.len() - 1
    }

    /// `rho_t^{-1}`.
    pub fn factor(&self, t: usize) -> f64 {
        self.factors[t]
    }

    /// `rho_t`, the risk-free growth from `t` to the horizon.
    pub fn growth(&self, t: usize) -> f64 {
        1.0 / self.factors[t]
    }
}

pub fn discount_curve(spec: &MarketSpec) -> DiscountCurve {
    DiscountCurve::from_rates(&spec.riskfree)
}

/// Sample moments of one period's excess returns.
#[derive(Clone, Debug)]
pub struct ScenarioMoments {
    pub mean: Vec<f64>,
    /// `E[P P']`.
    pub second: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

pub fn scenario_moments(sc: &ScenarioSet, t: usize) -> Result<ScenarioMoments> {
    if t >= sc.horizon() {
        return Err(Error::PeriodOutOfRange { t, horizon: sc.horizon() });
    }
    let n = sc.n_assets();
    let inv_n = 1.0 / sc.n_samples() as f64;
    let mut mean = vec![0.0; n];
    let mut second = DMatrix::zeros(n, n);
    for row in sc.period(t).chunks_exact(n) {
        for i in 0..n {
            mean[i] += row[i];
            for j in 0..=i {
                second[(i, j)] += row[i] * row[j];
            }
        }
    }
    for v in mean.iter_mut() {
        *v *= inv_n;
    }
    for i in 0..n {
        for j in 0..=i {
            second[(i, j)] *= inv_n;
            second[(j, i)] = second[(i, j)];
        }
    }
    let cov = DMatrix::from_fn(n, n, |i, j| second[(i, j)] - mean[i] * mean[j]);
    if !is_positive_definite(&cov) {
        return Err(Error::RankDeficient { period: t });
    }
    Ok(ScenarioMoments { mean, second, cov })
}
