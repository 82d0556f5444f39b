//! The four subcommands. Every artifact is a pure function of the config and
//! seeds, so repeated runs write byte-identical files.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use tcport_core::simulate::WealthQuantiles;
use tcport_core::*;

use crate::config::{asset_names, Format, RunConfig, SimSource, SweepParameter};

pub const POLICY_FILE: &str = "policy.json";
pub const COEFFICIENTS_FILE: &str = "coefficients.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const SWEEP_FILE: &str = "sweep.csv";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run.out.clone();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

struct Problem {
    market: MarketSpec,
    scenarios: ScenarioSet,
    cone: Option<ConeConstraint>,
}

fn problem(cfg: &RunConfig) -> Result<Problem> {
    let market = cfg.market()?;
    let scenarios = generate_scenarios(&market, cfg.run.scenarios, cfg.run.seed)?;
    let cone = cfg.cone(market.n_assets())?;
    Ok(Problem { market, scenarios, cone })
}

pub fn solve(cfg: &RunConfig) -> Result<PathBuf> {
    let p = problem(cfg)?;
    let risk = cfg.risk(p.market.horizon())?;
    let sol = backward_solve(&p.market, &risk, p.cone.as_ref(), &p.scenarios, &cfg.search)?;
    let dir = out_dir(cfg)?;
    write_json(&dir.join(POLICY_FILE), &sol.policy)?;
    write_json(&dir.join(COEFFICIENTS_FILE), &sol.coefficients)?;
    let cf = closed_form_terminal_moments(&sol.policy, &sol.coefficients, cfg.run.x0);
    write_json(
        &dir.join(DIAGNOSTICS_FILE),
        &json!({
            "search": sol.diagnostics,
            "all_converged": sol.diagnostics.all_converged(),
            "risk": risk,
            "x0": cfg.run.x0,
            "closed_form": cf,
        }),
    )?;
    if cfg.run.format == Format::Csv {
        write_policy_csv(&dir.join("policy.csv"), &sol.policy, &asset_names(&p.market))?;
        write_coefficients_csv(&dir.join("coefficients.csv"), &sol.coefficients)?;
    }
    Ok(dir)
}

fn write_policy_csv(path: &Path, p: &PolicyTable, names: &[String]) -> Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["t".to_string(), "side".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for t in 0..p.horizon() {
        for side in Side::BOTH {
            let mut row = vec![t.to_string(), side.to_string()];
            row.extend(p.fund(t, side).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_coefficients_csv(path: &Path, c: &CoefficientTable) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["t", "a_plus", "a_minus", "b_plus", "b_minus"])?;
    for t in 0..=c.horizon() {
        w.write_record(&[
            t.to_string(),
            c.a_plus[t].to_string(),
            c.a_minus[t].to_string(),
            c.b_plus[t].to_string(),
            c.b_minus[t].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `policy.json`, or a `policy.csv` (`t,side,<assets>`) completed with
/// the config's discount curve, target and cone.
pub fn load_policy(path: &Path, cfg: &RunConfig, market: &MarketSpec) -> Result<PolicyTable> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read policy {}", path.display()))?;
    let policy = if path.extension().is_some_and(|e| e == "csv") {
        policy_from_csv(&text, cfg, market).with_context(|| format!("invalid policy {}", path.display()))?
    } else {
        PolicyTable::from_json(&text).with_context(|| format!("invalid policy {}", path.display()))?
    };
    policy
        .validate(market.n_assets(), market.horizon())
        .with_context(|| format!("policy {} does not match the configured market", path.display()))?;
    Ok(policy)
}

fn policy_from_csv(text: &str, cfg: &RunConfig, market: &MarketSpec) -> Result<PolicyTable> {
    let horizon = market.horizon();
    let n = market.n_assets();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut k_plus = vec![None; horizon];
    let mut k_minus = vec![None; horizon];
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != n + 2 {
            bail!("row {} has {} fields, expected {}", line + 1, rec.len(), n + 2);
        }
        let t: usize = rec[0].parse().with_context(|| format!("row {}: bad period", line + 1))?;
        if t >= horizon {
            bail!("row {}: period {t} outside the horizon {horizon}", line + 1);
        }
        let k = (2..n + 2)
            .map(|i| rec[i].parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("row {}: bad fund entry", line + 1))?;
        match &rec[1] {
            "plus" => k_plus[t] = Some(k),
            "minus" => k_minus[t] = Some(k),
            s => bail!("row {}: unknown side {s:?}", line + 1),
        }
    }
    let collect = |v: Vec<Option<Vec<f64>>>, side: &str| -> Result<Vec<Vec<f64>>> {
        v.into_iter()
            .enumerate()
            .map(|(t, k)| k.with_context(|| format!("missing {side} fund for period {t}")))
            .collect()
    };
    Ok(PolicyTable {
        k_plus: collect(k_plus, "plus")?,
        k_minus: collect(k_minus, "minus")?,
        curve: discount_curve(market),
        target: cfg.risk.target,
        cone: cfg.cone(n)?,
    })
}

#[derive(Serialize)]
struct ClosedFormCheck {
    mean: f64,
    variance: f64,
    z_mean: f64,
    z_variance: Option<f64>,
    mean_within_3se: bool,
    variance_within_3se: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    x0: f64,
    target: f64,
    n_paths: usize,
    source: SimSource,
    seed: u64,
    mean: f64,
    variance: f64,
    stderr_mean: f64,
    stderr_variance: f64,
    sharpe: Option<f64>,
    sharpe_definition: &'static str,
    quantiles: &'a [WealthQuantiles],
    fraction_below_target: Vec<f64>,
    threshold_probabilities: Vec<f64>,
    closed_form: Option<ClosedFormCheck>,
    density: Option<&'a Density>,
}

fn closed_form_check(cf: TerminalMoments, r: &SimulationResult) -> ClosedFormCheck {
    let dm = r.mean - cf.mean;
    let dv = r.variance - cf.variance;
    let z_mean = if r.stderr_mean > 0.0 { dm / r.stderr_mean } else if dm.abs() < 1e-12 { 0.0 } else { f64::INFINITY };
    let z_variance = (r.stderr_variance > 0.0).then(|| dv / r.stderr_variance);
    ClosedFormCheck {
        mean: cf.mean,
        variance: cf.variance,
        z_mean,
        z_variance,
        mean_within_3se: z_mean.abs() <= 3.0,
        variance_within_3se: z_variance.map_or(dv.abs() < 1e-12, |z| z.abs() <= 3.0),
    }
}

pub fn simulate_cmd(cfg: &RunConfig, policy_path: Option<&Path>, paths: Option<usize>) -> Result<PathBuf> {
    let market = cfg.market()?;
    let dir = out_dir(cfg)?;
    let policy_path = policy_path.map(Path::to_path_buf).unwrap_or_else(|| dir.join(POLICY_FILE));
    let policy = load_policy(&policy_path, cfg, &market)?;
    let n_paths = paths.unwrap_or(cfg.run.paths);
    let seed = cfg.sim_seed();
    let solving;
    let source = match cfg.run.source {
        SimSource::Fresh => PathSource::Fresh { seed },
        SimSource::Resample => {
            solving = generate_scenarios(&market, cfg.run.scenarios, cfg.run.seed)?;
            PathSource::Resample { scenarios: &solving, seed }
        }
        SimSource::Aligned => {
            solving = generate_scenarios(&market, cfg.run.scenarios, cfg.run.seed)?;
            PathSource::Aligned(&solving)
        }
    };
    let r = simulate(&policy, &source, &market, cfg.run.x0, n_paths)?;

    let mut w = create(&dir.join("paths.csv"))?;
    let mut header = vec!["path".to_string()];
    header.extend((1..=r.horizon).map(|t| format!("X_{t}")));
    w.write_record(&header)?;
    for i in 0..r.n_paths {
        let mut row = vec![i.to_string()];
        row.extend(r.path(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;

    let density = match density_estimate(&r.terminal(), cfg.run.bandwidth) {
        Ok(d) => Some(d),
        Err(Error::DegenerateSamples | Error::TooFewSamples { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let mut w = create(&dir.join("density.csv"))?;
    w.write_record(["x", "pdf"])?;
    if let Some(d) = &density {
        for (x, f) in d.x.iter().zip(&d.pdf) {
            w.write_record(&[x.to_string(), f.to_string()])?;
        }
    }
    w.flush()?;

    let coeff_path = policy_path.with_file_name(COEFFICIENTS_FILE);
    let closed_form = if coeff_path.exists() {
        let text = fs::read_to_string(&coeff_path)
            .with_context(|| format!("cannot read {}", coeff_path.display()))?;
        let c: CoefficientTable = serde_json::from_str(&text)
            .with_context(|| format!("invalid coefficients {}", coeff_path.display()))?;
        if c.horizon() != policy.horizon() {
            bail!("{} does not match the policy horizon", coeff_path.display());
        }
        Some(closed_form_check(closed_form_terminal_moments(&policy, &c, cfg.run.x0), &r))
    } else {
        None
    };
    let out_of_sample = generate_scenarios(&market, n_paths, seed)?;
    let summary = Summary {
        x0: cfg.run.x0,
        target: policy.target,
        n_paths,
        source: cfg.run.source,
        seed,
        mean: r.mean,
        variance: r.variance,
        stderr_mean: r.stderr_mean,
        stderr_variance: r.stderr_variance,
        sharpe: sharpe_ratio(&r, cfg.run.x0, &policy.curve).ok(),
        sharpe_definition: "(mean(X_T) - rho_0 X_0) / sd(X_T)",
        quantiles: &r.quantiles,
        fraction_below_target: (1..=r.horizon)
            .map(|t| r.fraction_below(t, policy.curve.factor(t) * policy.target))
            .collect(),
        threshold_probabilities: threshold_probabilities(&policy, &out_of_sample)?,
        closed_form,
        density: density.as_ref(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(dir)
}

pub fn sweep(cfg: &RunConfig, parameter: SweepParameter, values: &[f64]) -> Result<PathBuf> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let p = problem(cfg)?;
    let horizon = p.market.horizon();
    let names = asset_names(&p.market);
    let base = cfg.risk(horizon)?;
    let dir = out_dir(cfg)?;
    let mut w = create(&dir.join(SWEEP_FILE))?;
    let mut header = vec!["gamma_plus".to_string(), "gamma_minus".to_string()];
    for t in 0..horizon {
        for side in ["plus", "minus"] {
            header.extend(names.iter().map(|a| format!("k{t}_{side}_{a}")));
        }
        header.extend(["a_plus", "a_minus", "b_plus", "b_minus"].iter().map(|c| format!("{c}{t}")));
    }
    header.push("sharpe".into());
    w.write_record(&header)?;
    let source = PathSource::Fresh { seed: cfg.sim_seed() };
    for &v in values {
        let mut risk = base.clone();
        match parameter {
            SweepParameter::GammaPlus => risk.gamma_plus = vec![v; horizon],
            SweepParameter::GammaMinus => risk.gamma_minus = vec![v; horizon],
        }
        let sol = backward_solve(&p.market, &risk, p.cone.as_ref(), &p.scenarios, &cfg.search)?;
        let r = simulate(&sol.policy, &source, &p.market, cfg.run.x0, cfg.run.paths)?;
        let sharpe = sharpe_ratio(&r, cfg.run.x0, &sol.policy.curve).ok();
        let c = &sol.coefficients;
        let mut row = vec![risk.gamma_plus[0].to_string(), risk.gamma_minus[0].to_string()];
        for t in 0..horizon {
            row.extend(sol.policy.k_plus[t].iter().map(|x| x.to_string()));
            row.extend(sol.policy.k_minus[t].iter().map(|x| x.to_string()));
            row.extend([c.a_plus[t], c.a_minus[t], c.b_plus[t], c.b_minus[t]].iter().map(|x| x.to_string()));
        }
        row.push(sharpe.map_or(String::new(), |s| s.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(dir)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
