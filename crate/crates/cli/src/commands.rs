use std::path::Path;

use serde_json::json;
use tvfactor::dataio::{build_panel, parse_csv_long, parse_hmd_table, split_panel, MortalityPanel};
use tvfactor::export;
use nalgebra::DVector;
use tvfactor::factor_classic::{fit_classic, fit_classic_centered, rolling_window_loadings, ClassicFit, FactorCount};
use tvfactor::factor_tv::{fit_tv, fit_tv_centered, TvFit};
use tvfactor::forecast::{
    estimate_boundary, forecast_classic, squared_error_metrics, ForecastOptions, Method, MortalityForecast,
    TvForecaster,
};
use tvfactor::kernels::{silverman_bandwidth, KernelFamily, KernelSpec};
use tvfactor::sim::{run_mc, McConfig};
use tvfactor::mse_in_sample;

use crate::config::{ConfigError, Format, RunConfig};

type CmdResult = Result<(), ConfigError>;

/// Horizon used when neither the configuration nor a holdout fixes one.
const DEFAULT_HORIZON: usize = 10;

fn load_panel(cfg: &RunConfig) -> Result<MortalityPanel, ConfigError> {
    let path = cfg
        .input
        .as_deref()
        .ok_or_else(|| ConfigError::Usage("no input file given (use --input)".into()))?;
    if !Path::new(path).is_file() {
        return Err(ConfigError::Usage(format!("input file not found: {path}")));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Usage(format!("cannot read input file {path}: {e}")))?;
    let records = match cfg.format {
        Format::Hmd => parse_hmd_table(&text, cfg.age_cap, cfg.sex)?,
        Format::Csv => parse_csv_long(&text)?
            .into_iter()
            .filter(|r| r.age <= cfg.age_cap)
            .collect(),
    };
    let label = Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(build_panel(&records, cfg.zero_policy, &label)?)
}

/// Training panel and, when a split year is set, the holdout.
fn train_and_holdout(cfg: &RunConfig) -> Result<(MortalityPanel, Option<MortalityPanel>), ConfigError> {
    let panel = load_panel(cfg)?;
    match cfg.split_year {
        Some(y) => {
            let s = split_panel(&panel, y)?;
            Ok((s.train, Some(s.holdout)))
        }
        None => Ok((panel, None)),
    }
}

fn kernel(cfg: &RunConfig, panel: &MortalityPanel) -> Result<Option<KernelSpec>, ConfigError> {
    if cfg.bandwidth.is_none() && cfg.kernel == KernelFamily::Epanechnikov && cfg.boundary_correction {
        return Ok(None);
    }
    let h = cfg
        .bandwidth
        .unwrap_or_else(|| silverman_bandwidth(panel.n_years(), panel.n_ages()));
    Ok(Some(KernelSpec::new(cfg.kernel, h, cfg.boundary_correction)?))
}

fn options(cfg: &RunConfig, horizon: usize) -> ForecastOptions {
    let mut o = ForecastOptions::new(horizon);
    o.level = cfg.level;
    o.grid = cfg.grid;
    o.lambda = cfg.lambda;
    o.lambda_fractions = cfg.lambda_grid.clone();
    o.validation = cfg.validation;
    o
}

fn write(cfg: &RunConfig, name: &str, contents: &str) -> CmdResult {
    let path = Path::new(&cfg.out).join(name);
    std::fs::write(&path, contents)
        .map_err(|e| ConfigError::Failed(format!("cannot write {}: {e}", path.display())))
}

fn fit_tv_for(cfg: &RunConfig, panel: &MortalityPanel) -> Result<TvFit, ConfigError> {
    let kernel = kernel(cfg, panel)?;
    if cfg.centered_input {
        let zero = DVector::zeros(panel.n_ages());
        return Ok(fit_tv_centered(panel.log_rates(), zero, kernel, cfg.factors)?);
    }
    Ok(fit_tv(panel, kernel, cfg.factors)?)
}

fn fit_classic_for(cfg: &RunConfig, panel: &MortalityPanel) -> Result<ClassicFit, ConfigError> {
    if cfg.centered_input {
        let zero = DVector::zeros(panel.n_ages());
        return Ok(fit_classic_centered(panel.log_rates(), zero, cfg.factors)?);
    }
    Ok(fit_classic(panel, cfg.factors)?)
}

pub fn fit(cfg: &RunConfig) -> CmdResult {
    let (train, _) = train_and_holdout(cfg)?;
    let classic = fit_classic_for(cfg, &train)?;
    let tv = fit_tv_for(cfg, &train)?;
    let mse_classic = mse_in_sample(&classic, &train)?;
    let mse_tv = mse_in_sample(&tv, &train)?;

    write(cfg, "a_x.csv", &export::age_effect_csv(train.ages(), &classic.a_x))?;
    write(cfg, "classic_loadings.csv", &export::classic_loadings_csv(train.ages(), &classic))?;
    write(cfg, "classic_factors.csv", &export::factors_csv(train.years(), &classic.factors))?;
    write(cfg, "tv_loadings.csv", &export::tv_loadings_csv(train.years(), train.ages(), &tv))?;
    write(cfg, "tv_factors.csv", &export::factors_csv(train.years(), &tv.factors))?;
    let summary = json!({
        "label": train.label(),
        "n_ages": train.n_ages(),
        "first_year": train.years()[0],
        "last_year": train.years()[train.n_years() - 1],
        "classic": {
            "n_factors": classic.n_factors,
            "explained_ratio": classic.explained_ratio.iter().take(10).collect::<Vec<_>>(),
            "mse": mse_classic,
        },
        "tv": {
            "n_factors": tv.n_factors,
            "kernel": tv.kernel.family.name(),
            "bandwidth": tv.kernel.bandwidth,
            "boundary_correction": tv.kernel.boundary_correction,
            "eigen_shares_at_center": tv.eigen_shares_at_center.iter().take(10).collect::<Vec<_>>(),
            "unit_norm_fallbacks": tv.unit_norm_fallbacks,
            "mse": mse_tv,
        },
        "mse_ratio_tv_to_classic": mse_tv / mse_classic,
    });
    write(cfg, "fit_summary.json", &export::to_json(&summary))
}

fn make_forecast(cfg: &RunConfig, train: &MortalityPanel, horizon: usize) -> Result<MortalityForecast, ConfigError> {
    let opts = options(cfg, horizon);
    match cfg.method {
        Method::Classic => Ok(forecast_classic(&fit_classic_for(cfg, train)?, &opts)?),
        method => {
            let tv = fit_tv_for(cfg, train)?;
            Ok(TvForecaster::new(&tv, opts)?.forecast(method)?)
        }
    }
}

/// Forecasts and, with a holdout, scores them. With `metrics_only` only the
/// metrics file is written and a holdout is required.
pub fn forecast(cfg: &RunConfig, metrics_only: bool) -> CmdResult {
    let (train, holdout) = train_and_holdout(cfg)?;
    if metrics_only && holdout.is_none() {
        return Err(ConfigError::Usage("evaluate needs a holdout (use --split-year)".into()));
    }
    let horizon = cfg
        .horizon
        .or(holdout.as_ref().map(|h| h.n_years()))
        .unwrap_or(DEFAULT_HORIZON);
    let f = make_forecast(cfg, &train, horizon)?;
    let first_year = train.years()[train.n_years() - 1] + 1;

    if !metrics_only {
        write(cfg, "forecast.csv", &export::forecast_csv(train.ages(), first_year, &f))?;
        write(cfg, "loadings_used.csv", &export::loadings_used_csv(train.ages(), first_year, &f))?;
        for (j, ff) in f.factor_forecasts.iter().enumerate() {
            let name = if j == 0 {
                "factor_forecast.csv".to_string()
            } else {
                format!("factor_forecast_{}.csv", j + 1)
            };
            write(cfg, &name, &export::factor_forecast_csv(ff))?;
        }
        let summary = json!({
            "method": f.method.to_string(),
            "horizon": f.horizon,
            "first_year": first_year,
            "level": cfg.level,
            "lambda": f.lambda,
            "loading_sums": f.loading_sums(),
            "arima": f.factor_models.iter().map(export::arima_summary).collect::<Vec<_>>(),
        });
        write(cfg, "forecast_summary.json", &export::to_json(&summary))?;
    }
    if let Some(h) = holdout {
        let m = f.horizon.min(h.n_years());
        let predicted = f.predicted.columns(0, m).into_owned();
        let actual = h.log_rates().columns(0, m).into_owned();
        let metrics = squared_error_metrics(&predicted, &actual)?;
        write(cfg, "metrics.json", &export::to_json(&metrics))?;
    }
    Ok(())
}

pub fn boundary(cfg: &RunConfig) -> CmdResult {
    let (train, holdout) = train_and_holdout(cfg)?;
    let validation =
        holdout.ok_or_else(|| ConfigError::Usage("boundary needs a validation period (use --split-year)".into()))?;
    let tv = fit_tv_for(cfg, &train)?;
    let est = estimate_boundary(&tv, &validation, &options(cfg, validation.n_years()), cfg.boundary_factors)?;
    write(cfg, "boundary.csv", &export::boundary_csv(&est))?;
    let summary = json!({
        "k_hat": est.k_hat,
        "t0": est.t0,
        "validation_years": validation.n_years(),
        "lambda": est.lambda,
        "ssr_min": est.ssr_curve[est.k_hat],
        "factors": match cfg.boundary_factors {
            tvfactor::forecast::BoundaryFactors::Forecast => "forecast",
            tvfactor::forecast::BoundaryFactors::InSample => "in-sample",
        },
    });
    write(cfg, "boundary.json", &export::to_json(&summary))
}

pub fn simulate(cfg: &RunConfig) -> CmdResult {
    let mc = McConfig {
        dgps: cfg.dgps.clone(),
        n: cfg.sim_n,
        t: cfg.sim_t,
        train_lengths: cfg.train_lengths.clone(),
        reps: cfg.reps,
        master_seed: cfg.seed,
        level: cfg.level,
    };
    let report = run_mc(&mc)?;
    write(cfg, "mc_table.csv", &report.to_table_csv())?;
    write(cfg, "mc_report.json", &export::to_json(&report))
}

pub fn rollwin(cfg: &RunConfig) -> CmdResult {
    let (train, _) = train_and_holdout(cfg)?;
    let r = match cfg.factors {
        FactorCount::Fixed(r) => r,
        FactorCount::Cutoff(_) => 1,
    };
    let windows = rolling_window_loadings(&train, cfg.window, r)?;
    write(cfg, "rolling_loadings.csv", &export::rolling_csv(train.ages(), &windows))
}
