//! Library side of the `tcport` binary, split out so that tests can drive the
//! commands without spawning processes.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{Format, SweepParameter};

#[derive(Debug, Parser)]
#[command(name = "tcport", version, about = "Time-consistent behavioral portfolio policies")]
pub struct Cli {
    /// TOML run configuration; every key has a default.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Scenario seed (the simulation seed defaults to this plus one).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Scenarios per period.
    #[arg(long, global = true)]
    pub scenarios: Option<usize>,
    /// `no_shorting` or a TOML file with cone rows.
    #[arg(long, global = true)]
    pub cone: Option<String>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Backward induction; writes policy.json, coefficients.json, diagnostics.json.
    Solve,
    /// Forward Monte Carlo of a solved policy; writes paths.csv, summary.json, density.csv.
    Simulate {
        /// Defaults to <out>/policy.json.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Re-solves over a list of risk-aversion values; writes sweep.csv.
    Sweep {
        #[arg(long, value_enum)]
        parameter: Option<SweepParameter>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Text and CSV tables from an artifact directory.
    Report {
        /// Defaults to the output directory.
        dir: Option<PathBuf>,
    },
}

/// Process exit status: numerical failures are distinguished from usage and I/O errors.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|c| matches!(c.downcast_ref::<tcport_core::Error>(), Some(tcport_core::Error::Validity { .. })));
    if numerical { 1 } else { 2 }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => config::RunConfig::load(p)?,
        None => config::RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(n) = cli.scenarios {
        cfg.run.scenarios = n;
    }
    if let Some(o) = cli.out {
        cfg.run.out = o;
    }
    if let Some(f) = cli.format {
        cfg.run.format = f;
    }
    if let Some(c) = cli.cone {
        cfg.cone = Some(if c == "no_shorting" {
            config::ConeSection { preset: Some(c), ..Default::default() }
        } else {
            config::ConeSection { file: Some(std::env::current_dir()?.join(c)), ..Default::default() }
        });
    }
    match cli.command {
        Command::Solve => commands::solve(&cfg).map(drop),
        Command::Simulate { policy, paths } => {
            commands::simulate_cmd(&cfg, policy.as_deref(), paths).map(drop)
        }
        Command::Sweep { parameter, values } => {
            let from_cfg = cfg.sweep.clone();
            let parameter = parameter
                .or(from_cfg.as_ref().map(|s| s.parameter))
                .unwrap_or(SweepParameter::GammaMinus);
            let values = values
                .or(from_cfg.map(|s| s.values))
                .ok_or_else(|| anyhow::anyhow!("sweep needs --values or a [sweep] section"))?;
            commands::sweep(&cfg, parameter, &values).map(drop)
        }
        Command::Report { dir } => report::report(&dir.unwrap_or_else(|| cfg.run.out.clone())),
    }
}
