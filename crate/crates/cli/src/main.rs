use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::{ConfigError, Overrides, RunConfig};

/// Classical and time-varying factor models for mortality panels.
#[derive(Debug, Parser)]
#[command(name = "tvfactor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Mortality data file.
    #[arg(long, global = true)]
    input: Option<String>,
    /// Input format: hmd or csv (long `year,age,mx`).
    #[arg(long, global = true)]
    format: Option<String>,
    /// Sex column for HMD tables: female, male or total.
    #[arg(long, global = true)]
    sex: Option<String>,
    /// Highest single age kept.
    #[arg(long = "age-cap", global = true)]
    age_cap: Option<u32>,
    /// Last training year; later years form the holdout.
    #[arg(long = "split-year", global = true)]
    split_year: Option<i32>,
    /// classic, naive, local or hybrid:k.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Forecast horizon in years.
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Boundary for the hybrid method.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Prediction interval coverage in (0, 1).
    #[arg(long, global = true)]
    level: Option<f64>,
    /// Master seed for simulation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat `key = value` configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the classic and time-varying models and export both.
    Fit,
    /// Forecast log rates with intervals; scores them when a holdout exists.
    Forecast,
    /// Estimate the boundary between local and frozen loadings on the holdout.
    Boundary,
    /// Forecast error metrics on the holdout only.
    Evaluate,
    /// Monte Carlo comparison of the forecast methods on simulated panels.
    Simulate,
    /// Classic-model loadings on rolling windows.
    Rollwin,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            input: self.input.clone(),
            format: self.format.clone(),
            sex: self.sex.clone(),
            age_cap: self.age_cap,
            split_year: self.split_year,
            method: self.method.clone(),
            horizon: self.horizon,
            k: self.k,
            level: self.level,
            seed: self.seed,
            out: self.out.clone(),
            threads: self.threads,
        }
    }
}

fn run(cli: &Cli) -> Result<(), ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::Usage(format!("cannot read config file {path}: {e}")))?;
            RunConfig::from_kv(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.apply(cli.overrides())?;
    if let Some(n) = cfg.threads {
        // ignore the error when a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    std::fs::create_dir_all(Path::new(&cfg.out))
        .map_err(|e| ConfigError::Failed(format!("cannot create output directory {}: {e}", cfg.out)))?;
    match cli.command {
        Command::Fit => commands::fit(&cfg),
        Command::Forecast => commands::forecast(&cfg, false),
        Command::Evaluate => commands::forecast(&cfg, true),
        Command::Boundary => commands::boundary(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Rollwin => commands::rollwin(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
