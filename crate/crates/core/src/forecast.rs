//! Mortality forecasts from fitted factor models: constant loadings (classic),
//! frozen loadings (naive), locally extrapolated loadings (local) and the
//! hybrid of the last two, plus boundary estimation and error metrics.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataio::MortalityPanel;
use crate::error::{Error, Result};
use crate::factor_classic::ClassicFit;
use crate::factor_tv::{ols_factor, TvFit};
use crate::timeseries::{
    extrapolate_rows, forecast_arima, select_arima, select_lambda, ArimaGrid, ArimaModel, FactorForecast,
    LocalLinearSpec, DEFAULT_LAMBDA_FRACTIONS,
};

/// Default coverage of the reported prediction intervals.
pub const DEFAULT_LEVEL: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Classic,
    Naive,
    Local,
    /// Local extrapolation for the first `k` steps, frozen afterwards.
    Hybrid(usize),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Classic => write!(f, "classic"),
            Method::Naive => write!(f, "naive"),
            Method::Local => write!(f, "local"),
            Method::Hybrid(k) => write!(f, "hybrid:{k}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classic" => Ok(Method::Classic),
            "naive" => Ok(Method::Naive),
            "local" => Ok(Method::Local),
            "hybrid" => Err(Error::Argument("method 'hybrid' needs a boundary, e.g. hybrid:5".into())),
            other => match other.strip_prefix("hybrid:") {
                Some(k) => k
                    .parse()
                    .map(Method::Hybrid)
                    .map_err(|_| Error::Argument(format!("invalid hybrid boundary '{k}'"))),
                None => Err(Error::Argument(format!(
                    "unknown method '{s}' (expected classic, naive, local or hybrid:k)"
                ))),
            },
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Settings shared by every forecast method.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastOptions {
    pub horizon: usize,
    pub level: f64,
    pub grid: ArimaGrid,
    /// Window width for loading extrapolation; selected by validation when absent.
    pub lambda: Option<f64>,
    pub lambda_fractions: Vec<f64>,
    /// Validation size for choosing λ; `min(10, T/5)` when absent.
    pub validation: Option<usize>,
}

impl ForecastOptions {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            level: DEFAULT_LEVEL,
            grid: ArimaGrid::default(),
            lambda: None,
            lambda_fractions: DEFAULT_LAMBDA_FRACTIONS.to_vec(),
            validation: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Argument("horizon must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Argument(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MortalityForecast {
    pub method: Method,
    pub horizon: usize,
    /// `N x H` predicted log rates.
    pub predicted: DMatrix<f64>,
    pub a_x: DVector<f64>,
    /// One forecast per factor.
    pub factor_forecasts: Vec<FactorForecast>,
    pub factor_models: Vec<ArimaModel>,
    /// One matrix per factor: `N x H`, or `N x 1` when loadings are constant.
    pub loadings_used: Vec<DMatrix<f64>>,
    pub lambda: Option<f64>,
}

impl MortalityForecast {
    fn loading(&self, factor: usize, age: usize, h: usize) -> f64 {
        let l = &self.loadings_used[factor];
        l[(age, if l.ncols() == 1 { 0 } else { h })]
    }

    /// `a_x + Σ_j b_{x,j,T+h} k_{j,T+h}` recomputed from the stored parts.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.a_x.len(), self.horizon, |x, h| {
            self.a_x[x]
                + (0..self.factor_forecasts.len())
                    .map(|j| self.loading(j, x, h) * self.factor_forecasts[j].point[h])
                    .sum::<f64>()
        })
    }

    /// Half-widths of the log-rate bands implied by the factor intervals.
    pub fn half_widths(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.a_x.len(), self.horizon, |x, h| {
            (0..self.factor_forecasts.len())
                .map(|j| (self.loading(j, x, h) * self.factor_forecasts[j].half_width(h)).powi(2))
                .sum::<f64>()
                .sqrt()
        })
    }

    /// Column sums of the loadings used, per factor and step.
    pub fn loading_sums(&self) -> Vec<Vec<f64>> {
        self.loadings_used
            .iter()
            .map(|l| l.column_iter().map(|c| c.sum()).collect())
            .collect()
    }
}

fn forecast_factors(factors: &DMatrix<f64>, opts: &ForecastOptions) -> Result<(Vec<ArimaModel>, Vec<FactorForecast>)> {
    let mut models = Vec::with_capacity(factors.ncols());
    let mut forecasts = Vec::with_capacity(factors.ncols());
    for j in 0..factors.ncols() {
        let series: Vec<f64> = factors.column(j).iter().copied().collect();
        let model = select_arima(&series, &opts.grid)?;
        forecasts.push(forecast_arima(&model, &series, opts.horizon, opts.level)?);
        models.push(model);
    }
    Ok((models, forecasts))
}

fn assemble(
    method: Method,
    a_x: &DVector<f64>,
    models: Vec<ArimaModel>,
    forecasts: Vec<FactorForecast>,
    loadings_used: Vec<DMatrix<f64>>,
    lambda: Option<f64>,
) -> MortalityForecast {
    let horizon = forecasts.first().map_or(0, |f| f.horizon);
    let mut out = MortalityForecast {
        method,
        horizon,
        predicted: DMatrix::zeros(a_x.len(), horizon),
        a_x: a_x.clone(),
        factor_forecasts: forecasts,
        factor_models: models,
        loadings_used,
        lambda,
    };
    out.predicted = out.reconstruct();
    out
}

/// Constant loadings with ARIMA forecasts of the factors.
pub fn forecast_classic(fit: &ClassicFit, opts: &ForecastOptions) -> Result<MortalityForecast> {
    opts.validate()?;
    let (models, forecasts) = forecast_factors(&fit.factors, opts)?;
    let loadings = (0..fit.n_factors)
        .map(|j| fit.loadings.columns(j, 1).into_owned())
        .collect();
    Ok(assemble(Method::Classic, &fit.a_x, models, forecasts, loadings, None))
}

/// Forecasts from a time-varying fit. The factor forecast and the extrapolated
/// loading paths are computed once and shared, so every method differs only in
/// which loadings it uses.
#[derive(Debug, Clone)]
pub struct TvForecaster<'a> {
    fit: &'a TvFit,
    opts: ForecastOptions,
    models: Vec<ArimaModel>,
    forecasts: Vec<FactorForecast>,
    local: Option<(f64, Vec<DMatrix<f64>>)>,
}

impl<'a> TvForecaster<'a> {
    pub fn new(fit: &'a TvFit, opts: ForecastOptions) -> Result<Self> {
        opts.validate()?;
        let (models, forecasts) = forecast_factors(&fit.factors, &opts)?;
        Ok(Self {
            fit,
            opts,
            models,
            forecasts,
            local: None,
        })
    }

    /// Builds the forecaster around a given factor forecast (one per factor).
    pub fn with_factor_forecasts(
        fit: &'a TvFit,
        opts: ForecastOptions,
        models: Vec<ArimaModel>,
        forecasts: Vec<FactorForecast>,
    ) -> Result<Self> {
        opts.validate()?;
        if forecasts.len() != fit.n_factors || forecasts.iter().any(|f| f.horizon != opts.horizon) {
            return Err(Error::Argument("factor forecasts do not match the fit and horizon".into()));
        }
        Ok(Self {
            fit,
            opts,
            models,
            forecasts,
            local: None,
        })
    }

    pub fn factor_forecasts(&self) -> &[FactorForecast] {
        &self.forecasts
    }

    /// `N x T` loading paths of one factor.
    fn paths(&self, factor: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.fit.n_ages(), self.fit.n_years(), |x, t| self.fit.loadings[t][(x, factor)])
    }

    /// Chosen window width and the `N x H` extrapolated loadings per factor.
    pub fn local_paths(&mut self) -> Result<(f64, &[DMatrix<f64>])> {
        if self.local.is_none() {
            let paths: Vec<DMatrix<f64>> = (0..self.fit.n_factors).map(|j| self.paths(j)).collect();
            let lambda = match self.opts.lambda {
                Some(l) => l,
                None => {
                    let n = self.fit.n_ages();
                    let t = self.fit.n_years();
                    let pooled = DMatrix::from_fn(n * paths.len(), t, |i, c| paths[i / n][(i % n, c)]);
                    select_lambda(&pooled, self.opts.validation, &self.opts.lambda_fractions)?
                }
            };
            let spec = LocalLinearSpec::new(lambda)?;
            let ext = paths
                .iter()
                .map(|p| extrapolate_rows(p, self.opts.horizon, &spec))
                .collect::<Result<Vec<_>>>()?;
            self.local = Some((lambda, ext));
        }
        let (lambda, ext) = self.local.as_ref().expect("computed above");
        Ok((*lambda, ext))
    }

    pub fn forecast(&mut self, method: Method) -> Result<MortalityForecast> {
        let h = self.opts.horizon;
        let k = match method {
            Method::Classic => {
                return Err(Error::Argument("the classic method needs a classic fit".into()));
            }
            Method::Naive => 0,
            Method::Local => h,
            Method::Hybrid(k) if k > h => {
                return Err(Error::Argument(format!("hybrid boundary {k} exceeds horizon {h}")));
            }
            Method::Hybrid(k) => k,
        };
        let last = self.fit.loadings.last().expect("fit has at least one period").clone();
        let (lambda, ext) = if k > 0 {
            let (l, e) = self.local_paths()?;
            (Some(l), Some(e.to_vec()))
        } else {
            (self.local.as_ref().map(|(l, _)| *l), None)
        };
        let loadings: Vec<DMatrix<f64>> = (0..self.fit.n_factors)
            .map(|j| {
                DMatrix::from_fn(last.nrows(), h, |x, c| match &ext {
                    Some(e) => e[j][(x, c.min(k - 1))],
                    None => last[(x, j)],
                })
            })
            .collect();
        Ok(assemble(
            method,
            &self.fit.a_x,
            self.models.clone(),
            self.forecasts.clone(),
            loadings,
            lambda,
        ))
    }
}

pub fn forecast_tv_naive(fit: &TvFit, opts: &ForecastOptions) -> Result<MortalityForecast> {
    TvForecaster::new(fit, opts.clone())?.forecast(Method::Naive)
}

pub fn forecast_tv_local(fit: &TvFit, opts: &ForecastOptions) -> Result<MortalityForecast> {
    TvForecaster::new(fit, opts.clone())?.forecast(Method::Local)
}

pub fn forecast_tv_hybrid(fit: &TvFit, k: usize, opts: &ForecastOptions) -> Result<MortalityForecast> {
    TvForecaster::new(fit, opts.clone())?.forecast(Method::Hybrid(k))
}

/// Factor values used over the validation window when scoring boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryFactors {
    /// Out-of-sample ARIMA forecasts from the training fit.
    #[default]
    Forecast,
    /// Least squares re-estimates given each candidate's loadings.
    InSample,
}

impl FromStr for BoundaryFactors {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "forecast" => Ok(BoundaryFactors::Forecast),
            "in-sample" | "insample" => Ok(BoundaryFactors::InSample),
            other => Err(Error::Argument(format!("unknown boundary factor source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryEstimate {
    pub k_hat: usize,
    /// `SSR(k)` for `k = 0..=V`.
    pub ssr_curve: Vec<f64>,
    /// Number of training periods.
    pub t0: usize,
    pub lambda: f64,
}

/// Chooses the boundary `k` between locally extrapolated and frozen loadings
/// by minimising the validation sum of squared residuals over all ages.
pub fn estimate_boundary(
    train_fit: &TvFit,
    validation: &MortalityPanel,
    opts: &ForecastOptions,
    factors: BoundaryFactors,
) -> Result<BoundaryEstimate> {
    let v = validation.n_years();
    if v < 2 {
        return Err(Error::Argument(format!("validation window has {v} periods; need at least 2")));
    }
    if validation.n_ages() != train_fit.n_ages() {
        return Err(Error::Argument(format!(
            "validation panel has {} ages, fit has {}",
            validation.n_ages(),
            train_fit.n_ages()
        )));
    }
    let mut opts = opts.clone();
    opts.horizon = v;
    let mut fc = TvForecaster::new(train_fit, opts)?;
    let (lambda, _) = fc.local_paths()?;
    let actual = validation.log_rates();
    let ssr_curve = (0..=v)
        .map(|k| {
            let f = fc.forecast(Method::Hybrid(k))?;
            let fitted = match factors {
                BoundaryFactors::Forecast => f.predicted,
                BoundaryFactors::InSample => refit_factors(&f, actual)?,
            };
            Ok((actual - fitted).iter().map(|e| e * e).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    let k_hat = argmin_first(&ssr_curve);
    debug_assert!(ssr_curve.iter().all(|s| ssr_curve[k_hat] <= *s));
    Ok(BoundaryEstimate {
        k_hat,
        ssr_curve,
        t0: train_fit.n_years(),
        lambda,
    })
}

/// Smallest index attaining the minimum.
fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

fn refit_factors(f: &MortalityForecast, actual: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.a_x.len();
    let r = f.loadings_used.len();
    let mut fitted = DMatrix::zeros(n, f.horizon);
    for h in 0..f.horizon {
        let b = DMatrix::from_fn(n, r, |x, j| f.loading(j, x, h));
        let y = actual.column(h) - &f.a_x;
        let k = ols_factor(&b, &y).ok_or(Error::Rank { t: h + 1 })?;
        let col = &f.a_x + b * k;
        fitted.set_column(h, &col);
    }
    Ok(fitted)
}

/// Squared-error summary over an `N x H` grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub overall: f64,
    /// Averages over ages, one per year.
    pub by_year: Vec<f64>,
    /// Averages over years, one per age.
    pub by_age: Vec<f64>,
}

pub fn squared_error_metrics(predicted: &DMatrix<f64>, actual: &DMatrix<f64>) -> Result<Metrics> {
    if predicted.shape() != actual.shape() {
        return Err(Error::Argument(format!(
            "prediction has shape {:?} but actual values have shape {:?}",
            predicted.shape(),
            actual.shape()
        )));
    }
    let sq = (actual - predicted).map(|e| e * e);
    Ok(Metrics {
        overall: sq.mean(),
        by_year: sq.column_iter().map(|c| c.mean()).collect(),
        by_age: sq.row_iter().map(|r| r.mean()).collect(),
    })
}

/// Mean squared prediction error against the realised panel over the horizon.
pub fn mspe(forecast: &MortalityForecast, actual: &MortalityPanel) -> Result<Metrics> {
    squared_error_metrics(&forecast.predicted, actual.log_rates())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_classic::fit_classic;
    use crate::factor_classic::FactorCount;
    use crate::factor_tv::fit_tv;
    use crate::kernels::KernelSpec;

    fn synthetic_tv(n: usize, t: usize, slope: f64) -> TvFit {
        // loadings linear in t, each period summing to one
        let loadings: Vec<DMatrix<f64>> = (0..t)
            .map(|j| {
                let raw = DMatrix::from_fn(n, 1, |i, _| 1.0 / n as f64 + slope * (i as f64 - (n as f64 - 1.0) / 2.0) * j as f64);
                raw
            })
            .collect();
        let factors = DMatrix::from_fn(t, 1, |j, _| 5.0 - 0.7 * j as f64 + 0.3 * (j as f64 * 1.7).sin());
        TvFit {
            n_factors: 1,
            loadings,
            factors,
            a_x: DVector::from_fn(n, |i, _| -4.0 + 0.05 * i as f64),
            kernel: KernelSpec::default_for(t, n),
            eigen_shares_at_center: vec![1.0],
            unit_norm_fallbacks: vec![],
        }
    }

    #[test]
    fn method_parsing() {
        assert_eq!("classic".parse::<Method>().unwrap(), Method::Classic);
        assert_eq!("hybrid:4".parse::<Method>().unwrap(), Method::Hybrid(4));
        assert!("hybrid".parse::<Method>().is_err());
        assert!("hybrid:x".parse::<Method>().is_err());
        assert!("other".parse::<Method>().is_err());
        assert_eq!(Method::Hybrid(3).to_string(), "hybrid:3");
    }

    #[test]
    fn hybrid_degeneracies_and_shape() {
        let fit = synthetic_tv(6, 40, 0.001);
        let mut fc = TvForecaster::new(&fit, ForecastOptions::new(8)).unwrap();
        let naive = fc.forecast(Method::Naive).unwrap();
        let local = fc.forecast(Method::Local).unwrap();
        let h0 = fc.forecast(Method::Hybrid(0)).unwrap();
        let h8 = fc.forecast(Method::Hybrid(8)).unwrap();
        let h3 = fc.forecast(Method::Hybrid(3)).unwrap();
        assert_eq!(naive.predicted, h0.predicted);
        assert_eq!(naive.loadings_used, h0.loadings_used);
        assert_eq!(local.predicted, h8.predicted);
        assert_eq!(local.loadings_used, h8.loadings_used);
        assert_eq!(naive.factor_forecasts, local.factor_forecasts);
        for c in 0..8 {
            let col = h3.loadings_used[0].column(c);
            if c < 3 {
                assert_eq!(col, local.loadings_used[0].column(c));
            } else {
                assert_eq!(col, h3.loadings_used[0].column(2));
            }
            assert_eq!(naive.loadings_used[0].column(c), fit.loadings[39].column(0));
        }
        assert!(fc.forecast(Method::Hybrid(9)).is_err());
        for f in [&naive, &local, &h3] {
            assert!((f.reconstruct() - &f.predicted).amax() < 1e-12);
        }
    }

    #[test]
    fn linear_loadings_continue_exactly() {
        let fit = synthetic_tv(5, 50, 0.002);
        let f = forecast_tv_local(&fit, &ForecastOptions::new(10)).unwrap();
        for h in 0..10 {
            for i in 0..5 {
                let truth = 0.2 + 0.002 * (i as f64 - 2.0) * (50 + h) as f64;
                assert!((f.loadings_used[0][(i, h)] - truth).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn classic_is_affine_in_factor() {
        let panel = crate::testutil::noisy_panel(10, 40, 3);
        let fit = fit_classic(&panel, FactorCount::Fixed(1)).unwrap();
        let mut f = forecast_classic(&fit, &ForecastOptions::new(3)).unwrap();
        let base = f.predicted.clone();
        for p in f.factor_forecasts[0].point.iter_mut() {
            *p *= 2.0;
        }
        let doubled = f.reconstruct();
        for x in 0..10 {
            for h in 0..3 {
                let a = fit.a_x[x];
                assert!(((doubled[(x, h)] - a) - 2.0 * (base[(x, h)] - a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metrics_identities() {
        let p = DMatrix::from_fn(4, 3, |i, j| (i + j) as f64);
        let a = DMatrix::from_fn(4, 3, |i, j| (i * j) as f64 * 0.5);
        let m = squared_error_metrics(&p, &a).unwrap();
        let by_year = m.by_year.iter().sum::<f64>() / 3.0;
        let by_age = m.by_age.iter().sum::<f64>() / 4.0;
        assert!((m.overall - by_year).abs() < 1e-12 && (m.overall - by_age).abs() < 1e-12);
        let z = squared_error_metrics(&p, &p).unwrap();
        assert_eq!(z.overall, 0.0);
        assert!(z.by_year.iter().chain(&z.by_age).all(|v| *v == 0.0));
        assert!(squared_error_metrics(&p, &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn boundary_curve_and_argmin() {
        let panel = crate::testutil::noisy_panel(12, 50, 9);
        let train = panel.slice_years(0, 42).unwrap();
        let valid = panel.slice_years(42, 50).unwrap();
        let fit = fit_tv(&train, None, FactorCount::Fixed(1)).unwrap();
        for src in [BoundaryFactors::Forecast, BoundaryFactors::InSample] {
            let b = estimate_boundary(&fit, &valid, &ForecastOptions::new(1), src).unwrap();
            assert_eq!(b.ssr_curve.len(), 9);
            assert!(b.ssr_curve.iter().all(|s| b.ssr_curve[b.k_hat] <= *s));
            assert!(b.ssr_curve[..b.k_hat].iter().all(|s| *s > b.ssr_curve[b.k_hat]));
        }
    }

    #[test]
    fn argmin_prefers_first() {
        assert_eq!(argmin_first(&[3.0, 1.0, 1.0, 2.0]), 1);
        assert_eq!(argmin_first(&[0.0, 0.0]), 0);
    }
}
