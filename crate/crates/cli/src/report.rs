//! Paper-style tables from the artifacts of `solve`, `sweep` and `simulate`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;
use tcport_core::{CoefficientTable, PolicyTable};

use crate::commands::{write_text, COEFFICIENTS_FILE, DIAGNOSTICS_FILE, POLICY_FILE, SWEEP_FILE};

/// One `(gamma+, gamma-)` setting with its funds and coefficients per period.
struct Row {
    gamma_plus: f64,
    gamma_minus: f64,
    k_plus: Vec<Vec<f64>>,
    k_minus: Vec<Vec<f64>>,
    coeffs: [Vec<f64>; 4],
    sharpe: Option<f64>,
}

/// Four decimals, without a sign on zero.
pub fn r4(x: f64) -> String {
    let s = format!("{x:.4}");
    if s == "-0.0000" { "0.0000".into() } else { s }
}

fn vector(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| r4(*x)).collect();
    format!("[{}]", parts.join(","))
}

fn read_sweep(path: &Path) -> Result<(Vec<String>, Vec<Row>)> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let assets: Vec<String> = header
        .iter()
        .filter_map(|h| h.strip_prefix("k0_plus_").map(str::to_string))
        .collect();
    let n = assets.len();
    let horizon = header.iter().filter(|h| h.starts_with("a_plus")).count();
    if n == 0 || horizon == 0 || header.len() != 3 + horizon * (2 * n + 4) {
        bail!("{} does not have the sweep layout", path.display());
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .with_context(|| format!("short row in {}", path.display()))?
                .parse::<f64>()
                .with_context(|| format!("bad number in {}", path.display()))
        };
        let mut row = Row {
            gamma_plus: num(0)?,
            gamma_minus: num(1)?,
            k_plus: Vec::new(),
            k_minus: Vec::new(),
            coeffs: Default::default(),
            sharpe: None,
        };
        let mut i = 2;
        for _ in 0..horizon {
            row.k_plus.push((i..i + n).map(num).collect::<Result<_>>()?);
            i += n;
            row.k_minus.push((i..i + n).map(num).collect::<Result<_>>()?);
            i += n;
            for c in row.coeffs.iter_mut() {
                c.push(num(i)?);
                i += 1;
            }
        }
        row.sharpe = rec.get(i).filter(|s| !s.is_empty()).map(|s| s.parse()).transpose()?;
        rows.push(row);
    }
    Ok((assets, rows))
}

fn read_solve(dir: &Path) -> Result<(Vec<String>, Vec<Row>)> {
    let load = |name: &str| -> Result<String> {
        let p = dir.join(name);
        fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))
    };
    let policy = PolicyTable::from_json(&load(POLICY_FILE)?)?;
    let coeffs: CoefficientTable = serde_json::from_str(&load(COEFFICIENTS_FILE)?)
        .with_context(|| format!("invalid {}", dir.join(COEFFICIENTS_FILE).display()))?;
    let (gp, gm) = match load(DIAGNOSTICS_FILE) {
        Ok(text) => {
            let v: Value = serde_json::from_str(&text)?;
            let first = |k: &str| v["risk"][k][0].as_f64().unwrap_or(f64::NAN);
            (first("gamma_plus"), first("gamma_minus"))
        }
        Err(_) => (f64::NAN, f64::NAN),
    };
    let horizon = policy.horizon();
    let assets = (1..=policy.n_assets()).map(|i| format!("asset{i}")).collect();
    let row = Row {
        gamma_plus: gp,
        gamma_minus: gm,
        k_plus: policy.k_plus,
        k_minus: policy.k_minus,
        coeffs: [
            coeffs.a_plus[..horizon].to_vec(),
            coeffs.a_minus[..horizon].to_vec(),
            coeffs.b_plus[..horizon].to_vec(),
            coeffs.b_minus[..horizon].to_vec(),
        ],
        sharpe: None,
    };
    Ok((assets, vec![row]))
}

/// Writes `report.txt` and `report.csv` into `dir`.
pub fn report(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        bail!("artifact directory {} does not exist", dir.display());
    }
    let (assets, rows) = if dir.join(SWEEP_FILE).exists() {
        read_sweep(&dir.join(SWEEP_FILE))?
    } else if dir.join(POLICY_FILE).exists() {
        read_solve(dir)?
    } else {
        bail!("no {SWEEP_FILE} or {POLICY_FILE} in {}", dir.display());
    };
    if rows.is_empty() {
        bail!("no rows to report in {}", dir.display());
    }
    let horizon = rows[0].k_plus.len();

    let mut txt = String::from("Optimal investment funds and parameters\n");
    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string(), "gamma_plus".into(), "gamma_minus".into()];
    for side in ["plus", "minus"] {
        header.extend(assets.iter().map(|a| format!("k_{side}_{a}")));
    }
    header.extend(["a_plus", "a_minus", "b_plus", "b_minus", "sharpe"].map(String::from));
    csv.write_record(&header)?;

    let width = 2 + assets.len() * 8;
    for t in (0..horizon).rev() {
        txt.push_str(&format!(
            "\n{:>7} {:>7} | {:<w$} {:<w$} | {:>8} {:>8} {:>8} {:>8}\n",
            "gamma+",
            "gamma-",
            format!("K_{t}^+"),
            format!("K_{t}^-"),
            format!("a_{t}^+"),
            format!("a_{t}^-"),
            format!("b_{t}^+"),
            format!("b_{t}^-"),
            w = width
        ));
        for r in &rows {
            let c: Vec<String> = r.coeffs.iter().map(|c| r4(c[t])).collect();
            txt.push_str(&format!(
                "{:>7} {:>7} | {:<w$} {:<w$} | {:>8} {:>8} {:>8} {:>8}\n",
                r4(r.gamma_plus),
                r4(r.gamma_minus),
                vector(&r.k_plus[t]),
                vector(&r.k_minus[t]),
                c[0],
                c[1],
                c[2],
                c[3],
                w = width
            ));
            let mut rec = vec![t.to_string(), r4(r.gamma_plus), r4(r.gamma_minus)];
            rec.extend(r.k_plus[t].iter().chain(&r.k_minus[t]).map(|x| r4(*x)));
            rec.extend(c);
            rec.push(r.sharpe.map_or(String::new(), r4));
            csv.write_record(&rec)?;
        }
    }
    if rows.iter().any(|r| r.sharpe.is_some()) {
        txt.push_str(&format!("\n{:>7} {:>7} | {:>8}\n", "gamma+", "gamma-", "Sharpe"));
        for r in &rows {
            let s = r.sharpe.map_or("-".into(), r4);
            txt.push_str(&format!("{:>7} {:>7} | {:>8}\n", r4(r.gamma_plus), r4(r.gamma_minus), s));
        }
    }
    if let Ok(text) = fs::read_to_string(dir.join("summary.json")) {
        let v: Value = serde_json::from_str(&text).context("invalid summary.json")?;
        let num = |x: &Value| x.as_f64().map_or("-".into(), r4);
        txt.push_str(&format!(
            "\nSimulation ({} paths): mean {} variance {} Sharpe {}\n",
            v["n_paths"], num(&v["mean"]), num(&v["variance"]), num(&v["sharpe"])
        ));
        if let Some(cf) = v.get("closed_form").filter(|c| !c.is_null()) {
            txt.push_str(&format!(
                "Closed form: mean {} variance {} (within 3 s.e.: mean {}, variance {})\n",
                num(&cf["mean"]), num(&cf["variance"]), cf["mean_within_3se"], cf["variance_within_3se"]
            ));
        }
    }
    write_text(&dir.join("report.txt"), &txt)?;
    let bytes = csv.into_inner().context("csv buffer")?;
    fs::write(dir.join("report.csv"), bytes).with_context(|| format!("cannot write {}", dir.join("report.csv").display()))?;
    Ok(())
}
