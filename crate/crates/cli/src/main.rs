//! `sdfspectral`: spectral decomposition of stochastic discount factors from
//! panel CSVs, value-function fixed points, preference calibration,
//! bootstrap intervals and Monte Carlo tables.
//!
//! Exit status: 0 on success, 1 on error, 2 when an eigen-solution fell back
//! to `rho = 1` (or a Monte Carlo cell was flagged for fallbacks).

mod commands;
mod config;
mod data;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use config::{Command, Family, RunConfig, Utility};

#[derive(Debug, Parser)]
#[command(name = "sdfspectral", version, about = "Sieve estimates of long-run SDF components")]
struct Cli {
    /// May also come from the config file.
    #[arg(value_enum)]
    command: Option<Command>,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    state_cols: Option<Vec<String>>,
    /// Gross consumption growth `G_{t+1}`.
    #[arg(long)]
    growth_col: Option<String>,
    /// Gross asset returns `R_{t+1}`.
    #[arg(long, value_delimiter = ',')]
    return_cols: Option<Vec<String>>,
    /// Observed SDF increments `m_t`; bypasses preferences.
    #[arg(long)]
    sdf_col: Option<String>,
    /// Passed through to the series output.
    #[arg(long)]
    date_col: Option<String>,
    #[arg(long, value_enum)]
    basis: Option<Family>,
    /// Basis size: dimension for Hermite and B-spline; sparse uses degree `k - 1` with cap `k`.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    instrument_k: Option<usize>,
    #[arg(long, value_enum)]
    utility: Option<Utility>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    boot_b: Option<usize>,
    /// Expected stationary-bootstrap block length.
    #[arg(long)]
    block: Option<f64>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
}

impl Cli {
    fn as_config(&self) -> RunConfig {
        RunConfig {
            command: self.command,
            input: self.input.clone(),
            design: None,
            state_cols: self.state_cols.clone(),
            growth_col: self.growth_col.clone(),
            return_cols: self.return_cols.clone(),
            sdf_col: self.sdf_col.clone(),
            date_col: self.date_col.clone(),
            basis: self.basis,
            k: self.k,
            instrument_k: self.instrument_k,
            utility: self.utility,
            beta: self.beta,
            gamma: self.gamma,
            boot_b: self.boot_b,
            block: self.block,
            level: self.level,
            seed: self.seed,
            out: self.out.clone(),
            reps: self.reps,
            sizes: self.sizes.clone(),
        }
    }
}

fn limit_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SDFSPECTRAL_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .with_context(|| format!("SDFSPECTRAL_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = limit_threads().and_then(|_| {
        let base = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        commands::run(&base.merged(&cli.as_config()))
    });
    match result {
        Ok(outcome) => {
            for p in &outcome.artifacts {
                println!("{}", p.display());
            }
            if let Some(note) = &outcome.note {
                eprintln!("note: {note}");
            }
            if outcome.fallback {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
