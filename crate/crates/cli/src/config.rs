//! Run configuration: a TOML file whose defaults reproduce the three-index
//! example (T = 3, s = 1.05, X_0 = 1, W = 2, N = 20000).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use tcport_core::{
    ConeConstraint, MarketSpec, MomentConvention, MomentSpec, ReturnModel, RiskAversionSpec,
    ScenarioSet, SearchConfig, ShortfallCone,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Where simulated paths draw their returns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimSource {
    /// New draws with the simulation seed.
    #[default]
    Fresh,
    /// Uniform resampling of the solving scenarios.
    Resample,
    /// Path `i` replays solving scenario `i`.
    Aligned,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn expand(&self, horizon: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            OneOrMany::One(v) => Ok(vec![*v; horizon]),
            OneOrMany::Many(v) if v.len() == horizon => Ok(v.clone()),
            OneOrMany::Many(v) => bail!("{what} has {} entries, expected {horizon}", v.len()),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    /// Another TOML file holding these keys (top level or under `[market]`).
    pub market_file: Option<PathBuf>,
    /// Excess-return scenarios in `period,sample,<assets>` CSV form.
    pub scenarios_file: Option<PathBuf>,
    pub riskfree: Option<Vec<f64>>,
    pub horizon: Option<usize>,
    pub rate: Option<f64>,
    pub assets: Option<Vec<String>>,
    pub mean: Option<Vec<f64>>,
    pub std: Option<Vec<f64>>,
    pub corr: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub convention: MomentConvention,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSection {
    #[serde(default = "one")]
    pub gamma_plus: OneOrMany,
    #[serde(default = "one")]
    pub gamma_minus: OneOrMany,
    #[serde(default = "default_target")]
    pub target: f64,
}

fn one() -> OneOrMany {
    OneOrMany::One(1.0)
}

fn default_target() -> f64 {
    2.0
}

impl Default for RiskSection {
    fn default() -> Self {
        Self { gamma_plus: one(), gamma_minus: one(), target: default_target() }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub scenarios: usize,
    pub seed: u64,
    /// Defaults to `seed + 1`.
    pub sim_seed: Option<u64>,
    pub paths: usize,
    pub x0: f64,
    pub out: PathBuf,
    pub format: Format,
    pub source: SimSource,
    pub bandwidth: Option<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            scenarios: 20_000,
            seed: 42,
            sim_seed: None,
            paths: 100_000,
            x0: 1.0,
            out: PathBuf::from("out"),
            format: Format::Json,
            source: SimSource::Fresh,
            bandwidth: None,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeSection {
    pub preset: Option<String>,
    pub rows: Option<Vec<Vec<f64>>>,
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub shortfall: ShortfallCone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    GammaPlus,
    GammaMinus,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub market: MarketSection,
    #[serde(default)]
    pub risk: RiskSection,
    #[serde(default)]
    pub run: RunSection,
    pub cone: Option<ConeSection>,
    #[serde(default)]
    pub search: SearchConfig,
    pub sweep: Option<SweepSection>,
    /// Directory relative paths in the file are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn sim_seed(&self) -> u64 {
        self.run.sim_seed.unwrap_or(self.run.seed.wrapping_add(1))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base_dir.join(p) }
    }

    pub fn market(&self) -> Result<MarketSpec> {
        let (section, base) = match &self.market.market_file {
            Some(f) => {
                let path = self.resolve(f);
                let text = fs::read_to_string(&path)
                    .with_context(|| format!("cannot read market file {}", path.display()))?;
                let value: toml::Table = toml::from_str(&text)
                    .with_context(|| format!("invalid market file {}", path.display()))?;
                let inner = match value.get("market") {
                    Some(toml::Value::Table(t)) => t.clone(),
                    _ => value,
                };
                let section: MarketSection = inner
                    .try_into()
                    .with_context(|| format!("invalid market file {}", path.display()))?;
                if section.market_file.is_some() {
                    bail!("market file {} may not name another market file", path.display());
                }
                (section, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (self.market.clone(), self.base_dir.clone()),
        };
        build_market(&section, &base)
    }

    pub fn risk(&self, horizon: usize) -> Result<RiskAversionSpec> {
        let risk = RiskAversionSpec {
            gamma_plus: self.risk.gamma_plus.expand(horizon, "gamma_plus")?,
            gamma_minus: self.risk.gamma_minus.expand(horizon, "gamma_minus")?,
            target: self.risk.target,
        };
        risk.validate(horizon)?;
        Ok(risk)
    }

    pub fn cone(&self, n_assets: usize) -> Result<Option<ConeConstraint>> {
        let Some(c) = &self.cone else { return Ok(None) };
        let cone = match (&c.preset, &c.rows, &c.file) {
            (Some(p), None, None) if p == "no_shorting" => ConeConstraint::no_shorting(n_assets),
            (Some(p), None, None) => bail!("unknown cone preset {p:?}"),
            (None, Some(rows), None) => ConeConstraint::new(n_assets, rows.clone())?,
            (None, None, Some(f)) => {
                return load_cone_file(&self.resolve(f), n_assets).map(Some);
            }
            _ => bail!("[cone] needs exactly one of preset, rows or file"),
        };
        Ok(Some(cone.with_shortfall(c.shortfall)))
    }
}

/// A cone file holds `rows = [[..], ..]` and optionally `shortfall`.
pub fn load_cone_file(path: &Path, n_assets: usize) -> Result<ConeConstraint> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read cone file {}", path.display()))?;
    let section: ConeSection =
        toml::from_str(&text).with_context(|| format!("invalid cone file {}", path.display()))?;
    let rows = section
        .rows
        .with_context(|| format!("cone file {} has no rows", path.display()))?;
    Ok(ConeConstraint::new(n_assets, rows)?.with_shortfall(section.shortfall))
}

fn build_market(m: &MarketSection, base: &Path) -> Result<MarketSpec> {
    let riskfree = match (&m.riskfree, m.horizon, m.rate) {
        (Some(r), None, None) => r.clone(),
        (None, h, r) => vec![r.unwrap_or(1.05); h.unwrap_or(3)],
        _ => bail!("give either riskfree or horizon/rate, not both"),
    };
    if let Some(f) = &m.scenarios_file {
        let path = if f.is_absolute() { f.clone() } else { base.join(f) };
        let file = fs::File::open(&path)
            .with_context(|| format!("cannot open scenario file {}", path.display()))?;
        let sc = ScenarioSet::read_csv(file)
            .with_context(|| format!("invalid scenario file {}", path.display()))?;
        let names = m.assets.clone().unwrap_or_default();
        return Ok(MarketSpec::new(riskfree, names, ReturnModel::Scenarios(sc))?);
    }
    let Some(mean) = &m.mean else {
        let mut spec = MarketSpec::three_index_example();
        spec.riskfree = riskfree;
        spec.validate()?;
        return Ok(spec);
    };
    let n = mean.len();
    let std = m.std.clone().context("market.std is required with market.mean")?;
    let corr = m.corr.clone().context("market.corr is required with market.mean")?;
    if corr.len() != n || corr.iter().any(|r| r.len() != n) {
        bail!("market.corr must be {n}x{n}");
    }
    let corr = DMatrix::from_fn(n, n, |i, j| corr[i][j]);
    let names = m.assets.clone().unwrap_or_else(|| (1..=n).map(|i| format!("asset{i}")).collect());
    let spec = MomentSpec { mean: mean.clone(), std, corr, convention: m.convention };
    Ok(MarketSpec::new(riskfree, names, ReturnModel::Moments(spec))?)
}

/// Asset labels for file headers.
pub fn asset_names(market: &MarketSpec) -> Vec<String> {
    if market.asset_names.len() == market.n_assets() {
        market.asset_names.clone()
    } else {
        (1..=market.n_assets()).map(|i| format!("asset{i}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_example() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        let m = cfg.market().unwrap();
        assert_eq!(m.riskfree, vec![1.05; 3]);
        assert_eq!(m.n_assets(), 3);
        assert_eq!(cfg.run.scenarios, 20_000);
        assert_eq!(cfg.sim_seed(), 43);
        let r = cfg.risk(3).unwrap();
        assert_eq!(r.gamma_minus, vec![1.0; 3]);
        assert_eq!(r.target, 2.0);
        assert!(cfg.cone(3).unwrap().is_none());
    }

    #[test]
    fn gamma_lists_and_cone_preset() {
        let cfg: RunConfig = toml::from_str(
            "[risk]\ngamma_plus = [1.0, 2.0, 3.0]\ngamma_minus = 0.5\n[cone]\npreset = \"no_shorting\"\nshortfall = \"same\"\n",
        )
        .unwrap();
        assert_eq!(cfg.risk(3).unwrap().gamma_plus, vec![1.0, 2.0, 3.0]);
        assert!(cfg.risk(2).is_err());
        let c = cfg.cone(3).unwrap().unwrap();
        assert_eq!(c.shortfall, ShortfallCone::Same);
        assert_eq!(c.rows.len(), 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[run]\nscenario = 5\n").is_err());
    }

    #[test]
    fn inline_moments() {
        let cfg: RunConfig = toml::from_str(
            "[market]\nhorizon = 2\nrate = 1.02\nmean = [0.1, 0.08]\nstd = [0.2, 0.15]\ncorr = [[1.0, 0.3], [0.3, 1.0]]\n",
        )
        .unwrap();
        let m = cfg.market().unwrap();
        assert_eq!(m.riskfree, vec![1.02, 1.02]);
        assert_eq!(asset_names(&m), vec!["asset1", "asset2"]);
    }
}
