//! `graphpow` command-line driver.
//!
//! Exit codes: 0 success, 1 internal error, 2 bad input or configuration,
//! 3 numerical failure (no convergence, ill-conditioned, asymmetric operator).

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, ExperimentConfig, RawConfig};

#[derive(Parser)]
#[command(
    name = "graphpow",
    version,
    about = "Graph powering for GCNs: operators, training, attacks, SBM benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distance-k adjacencies, sparsified layers and powered-graph degree histograms.
    Power(Overrides),
    /// Train a GCN (vanilla, vpn or rgcn) over a seed sweep.
    Train(Overrides),
    /// DICE evasion sweep against frozen models.
    Attack(Overrides),
    /// Spectral separation and community recovery on SBM graphs.
    SbmBench(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// Config file (`key = value` with `[section]` headers).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Single seed (shorthand for --seeds N).
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seeds: `N`, `A..B`, `A..=B` or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    /// Power order.
    #[arg(long)]
    r: Option<String>,
    /// Attack rates, comma separated.
    #[arg(long)]
    rates: Option<String>,
    /// Sparsification budget factor (`inf` keeps every far pair).
    #[arg(long)]
    budget_factor: Option<String>,
    /// Raw `section.key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut raw = match &self.config {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        let seed = self.seed.map(|s| s.to_string());
        let pairs = [
            ("run.out", self.out.as_ref()),
            ("run.seeds", self.seeds.as_ref().or(seed.as_ref())),
            ("model.mode", self.mode.as_ref()),
            ("model.r", self.r.as_ref()),
            ("attack.rates", self.rates.as_ref()),
            ("model.budget_factor", self.budget_factor.as_ref()),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                raw.set(k, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                ConfigError::Invalid(format!("--set expects KEY=VALUE, got `{kv}`"))
            })?;
            raw.set(k.trim(), v.trim())?;
        }
        ExperimentConfig::resolve(raw)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if let Some(e) = err.downcast_ref::<graphpow::Error>() {
        use graphpow::Error::*;
        return match e {
            NotConverged { .. } | IllConditioned(..) | NotSymmetric { .. } => 3,
            BudgetExhausted { .. } | OracleRefused(..) => 1,
            _ => 2,
        };
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (ov, f): (&Overrides, fn(&ExperimentConfig) -> anyhow::Result<()>) = match &cli.command {
        Command::Power(o) => (o, commands::power),
        Command::Train(o) => (o, commands::train),
        Command::Attack(o) => (o, commands::attack),
        Command::SbmBench(o) => (o, commands::sbm_bench),
    };
    let cfg = ov.resolve()?;
    f(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
