//! ARIMA(p, d, q) models with an optional mean term on the differenced scale.
//!
//! Estimation maximises the exact Gaussian likelihood of the differenced
//! series, evaluated by a Kalman filter on the ARMA state-space form, after a
//! conditional-sum-of-squares warm start. AR and MA coefficients are searched
//! through partial-autocorrelation reparameterisations so every candidate is
//! stationary and invertible.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::normal::normal_quantile;
use super::optim::{bfgs, hessian};
use crate::error::{Error, Result};

/// Margin by which every AR and MA root modulus must exceed one.
pub const ROOT_MARGIN: f64 = 1e-6;

/// During order selection, candidates with a root this close to the unit
/// circle are passed over in favour of better separated ones.
pub const SELECTION_ROOT_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArimaModel {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub drift: bool,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    /// Mean of the differenced series (zero when `drift` is off).
    pub drift_value: f64,
    pub sigma2: f64,
    pub loglik: f64,
    pub aic: f64,
    /// Standard errors in the order `ar.., ma.., drift`.
    pub stderr: Vec<f64>,
    /// Number of differenced observations entering the likelihood.
    pub n_used: usize,
}

impl ArimaModel {
    pub fn order(&self) -> (usize, usize, usize) {
        (self.p, self.d, self.q)
    }

    /// Number of estimated parameters, counting the innovation variance.
    pub fn n_params(&self) -> usize {
        self.p + self.q + usize::from(self.drift) + 1
    }

    /// True when the model reproduces the series exactly (zero innovation variance).
    pub fn is_exact(&self) -> bool {
        self.sigma2 == 0.0
    }
}

/// Upper bounds of the exhaustive order search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ArimaGrid {
    pub max_p: usize,
    pub max_d: usize,
    pub max_q: usize,
}

impl Default for ArimaGrid {
    fn default() -> Self {
        Self {
            max_p: 3,
            max_d: 2,
            max_q: 3,
        }
    }
}

pub fn difference(series: &[f64], d: usize) -> Vec<f64> {
    let mut w = series.to_vec();
    for _ in 0..d {
        w = w.windows(2).map(|p| p[1] - p[0]).collect();
    }
    w
}

/// Maps unconstrained values to the coefficients of a stationary AR polynomial
/// via partial autocorrelations.
fn pacf_to_coef(raw: &[f64]) -> Vec<f64> {
    let mut phi: Vec<f64> = raw.iter().map(|v| v.tanh()).collect();
    let mut work = phi.clone();
    for j in 1..phi.len() {
        let a = phi[j];
        for k in 0..j {
            work[k] = phi[k] - a * phi[j - k - 1];
        }
        phi[..j].copy_from_slice(&work[..j]);
    }
    phi
}

#[cfg(test)]
/// Inverse of [`pacf_to_coef`]; `None` when the polynomial is not stationary.
fn coef_to_pacf(coef: &[f64]) -> Option<Vec<f64>> {
    let mut phi = coef.to_vec();
    let mut work = phi.clone();
    for j in (1..phi.len()).rev() {
        let a = phi[j];
        if a.abs() >= 1.0 {
            return None;
        }
        for k in 0..j {
            work[k] = (phi[k] + a * phi[j - k - 1]) / (1.0 - a * a);
        }
        phi[..j].copy_from_slice(&work[..j]);
    }
    if phi.iter().any(|v| v.abs() >= 1.0) {
        return None;
    }
    Some(phi.iter().map(|v| v.atanh()).collect())
}

/// Smallest root modulus of `1 - c_1 z - ... - c_k z^k`.
fn min_root_modulus(coef: &[f64]) -> f64 {
    let k = coef.iter().rposition(|c| *c != 0.0).map_or(0, |i| i + 1);
    if k == 0 {
        return f64::INFINITY;
    }
    let companion = DMatrix::from_fn(k, k, |i, j| {
        if i == 0 {
            coef[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let largest = companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max);
    1.0 / largest
}

fn roots_ok(ar: &[f64], ma: &[f64]) -> bool {
    roots_clear(ar, ma, ROOT_MARGIN)
}

fn roots_clear(ar: &[f64], ma: &[f64], margin: f64) -> bool {
    let neg_ma: Vec<f64> = ma.iter().map(|v| -v).collect();
    min_root_modulus(ar) > 1.0 + margin && min_root_modulus(&neg_ma) > 1.0 + margin
}

/// State-space pieces of a zero-mean ARMA process in Harvey's form.
struct StateSpace {
    dim: usize,
    phi: Vec<f64>,
    rvec: Vec<f64>,
}

impl StateSpace {
    fn new(ar: &[f64], ma: &[f64]) -> Self {
        let dim = ar.len().max(ma.len() + 1);
        let mut phi = vec![0.0; dim];
        phi[..ar.len()].copy_from_slice(ar);
        let mut rvec = vec![0.0; dim];
        rvec[0] = 1.0;
        rvec[1..=ma.len()].copy_from_slice(ma);
        Self { dim, phi, rvec }
    }

    /// Stationary state covariance solving `P = T P T' + R R'`.
    fn initial_covariance(&self) -> Option<Vec<f64>> {
        let r = self.dim;
        let m = r * r;
        let tm = |i: usize, j: usize| -> f64 {
            let mut v = if j == 0 { self.phi[i] } else { 0.0 };
            if j == i + 1 {
                v += 1.0;
            }
            v
        };
        let mut a = DMatrix::<f64>::identity(m, m);
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    for l in 0..r {
                        a[(i * r + j, k * r + l)] -= tm(i, k) * tm(j, l);
                    }
                }
            }
        }
        let b = nalgebra::DVector::from_fn(m, |idx, _| self.rvec[idx / r] * self.rvec[idx % r]);
        let p = a.lu().solve(&b)?;
        if p.iter().any(|v| !v.is_finite()) || p[0] <= 0.0 {
            return None;
        }
        Some(p.as_slice().to_vec())
    }
}

/// Output of one pass of the Kalman filter.
struct FilterPass {
    /// Σ v²/F over the counted observations.
    ssq: f64,
    /// Σ ln F over the counted observations.
    sumlog: f64,
    counted: usize,
    /// One-step-ahead predicted state after the last observation.
    next_state: Vec<f64>,
}

/// Runs the filter over `y`; the first `skip` observations update the state
/// but do not enter the likelihood sums.
fn kalman(y: &[f64], ss: &StateSpace, skip: usize) -> Option<FilterPass> {
    let r = ss.dim;
    let mut p = ss.initial_covariance()?;
    let mut a = vec![0.0; r];
    let mut au = vec![0.0; r];
    let mut pu = vec![0.0; r * r];
    let mut tp = vec![0.0; r * r];
    let mut ssq = 0.0;
    let mut sumlog = 0.0;
    let mut steady = false;
    for (t, &obs) in y.iter().enumerate() {
        let f = p[0];
        if !(f > 0.0) || !f.is_finite() {
            return None;
        }
        let v = obs - a[0];
        if t >= skip {
            ssq += v * v / f;
            sumlog += f.ln();
        }
        for i in 0..r {
            au[i] = a[i] + p[i * r] * v / f;
        }
        for i in 0..r {
            a[i] = ss.phi[i] * au[0] + if i + 1 < r { au[i + 1] } else { 0.0 };
        }
        if steady {
            continue;
        }
        for i in 0..r {
            for j in 0..r {
                pu[i * r + j] = p[i * r + j] - p[i * r] * p[j] / f;
            }
        }
        for i in 0..r {
            for j in 0..r {
                tp[i * r + j] = ss.phi[i] * pu[j] + if i + 1 < r { pu[(i + 1) * r + j] } else { 0.0 };
            }
        }
        let mut change = 0.0f64;
        for i in 0..r {
            for j in 0..r {
                let next = tp[i * r] * ss.phi[j]
                    + if j + 1 < r { tp[i * r + j + 1] } else { 0.0 }
                    + ss.rvec[i] * ss.rvec[j];
                change = change.max((next - p[i * r + j]).abs());
                p[i * r + j] = next;
            }
        }
        steady = change < 1e-13;
    }
    Some(FilterPass {
        ssq,
        sumlog,
        counted: y.len().saturating_sub(skip),
        next_state: a,
    })
}

/// Concentrated negative log-likelihood per observation (up to constants).
fn concentrated_objective(wc: &[f64], ar: &[f64], ma: &[f64], skip: usize) -> f64 {
    let ss = StateSpace::new(ar, ma);
    match kalman(wc, &ss, skip) {
        Some(pass) if pass.ssq > 0.0 && pass.counted > 0 => {
            let n = pass.counted as f64;
            0.5 * (pass.ssq / n).ln() + 0.5 * pass.sumlog / n
        }
        _ => f64::INFINITY,
    }
}

fn css_objective(wc: &[f64], ar: &[f64], ma: &[f64]) -> f64 {
    let p = ar.len();
    let mut e = vec![0.0; wc.len()];
    let mut ssq = 0.0;
    for t in p..wc.len() {
        let mut v = wc[t];
        for (i, phi) in ar.iter().enumerate() {
            v -= phi * wc[t - i - 1];
        }
        for (j, theta) in ma.iter().enumerate() {
            if t > j {
                v -= theta * e[t - j - 1];
            }
        }
        e[t] = v;
        ssq += v * v;
    }
    let n = (wc.len() - p) as f64;
    if ssq > 0.0 && ssq.is_finite() {
        0.5 * (ssq / n).ln()
    } else {
        f64::INFINITY
    }
}

struct Layout {
    p: usize,
    q: usize,
    drift: bool,
    center: f64,
    scale: f64,
}

impl Layout {
    /// Natural parameters from the optimiser's unconstrained vector.
    fn unpack(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let ar = pacf_to_coef(&x[..self.p]);
        let ma: Vec<f64> = pacf_to_coef(&x[self.p..self.p + self.q]).iter().map(|v| -v).collect();
        let mu = if self.drift {
            self.center + self.scale * x[self.p + self.q]
        } else {
            0.0
        };
        (ar, ma, mu)
    }
}

fn centered(w: &[f64], mu: f64) -> Vec<f64> {
    w.iter().map(|v| v - mu).collect()
}

/// Fits ARIMA(p, d, q) with the mean term on the differenced scale when `drift`.
pub fn fit_arima(series: &[f64], p: usize, d: usize, q: usize, drift: bool) -> Result<ArimaModel> {
    fit_arima_conditional(series, p, d, q, drift, 0)
}

/// As [`fit_arima`], but the first `skip` differenced observations only
/// condition the filter and are left out of the likelihood. Used to compare
/// candidates with different `d` on a common sample.
pub fn fit_arima_conditional(
    series: &[f64],
    p: usize,
    d: usize,
    q: usize,
    drift: bool,
    skip: usize,
) -> Result<ArimaModel> {
    if series.len() <= p + q + d + 2 + skip {
        return Err(Error::Argument(format!(
            "series of length {} is too short for ARIMA({p},{d},{q})",
            series.len()
        )));
    }
    if drift && d > 1 {
        return Err(Error::Argument("a drift term is only allowed for d <= 1".into()));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("series contains non-finite values".into()));
    }
    let w = difference(series, d);
    let n = w.len();
    let n_used = n - skip;
    let mean = w.iter().sum::<f64>() / n as f64;
    let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let spread = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sd <= 1e-12 * spread.max(f64::MIN_POSITIVE) || sd == 0.0 {
        return exact_fit(p, d, q, drift, mean, spread, n_used);
    }

    let layout = Layout {
        p,
        q,
        drift,
        center: mean,
        scale: sd,
    };
    let k = p + q + usize::from(drift);
    let css = |x: &[f64]| {
        let (ar, ma, mu) = layout.unpack(x);
        css_objective(&centered(&w, mu), &ar, &ma)
    };
    let start = bfgs(css, &vec![0.0; k], 200);
    let mut x0 = start.x;
    if !start.value.is_finite() {
        x0 = vec![0.0; k];
    }
    let ml = |x: &[f64]| {
        let (ar, ma, mu) = layout.unpack(x);
        concentrated_objective(&centered(&w, mu), &ar, &ma, skip)
    };
    let mut best = bfgs(ml, &x0, 300);
    if !best.value.is_finite() || !best.converged {
        let retry = bfgs(ml, &vec![0.0; k], 300);
        if retry.value.is_finite() && (retry.converged || retry.value < best.value) {
            best = retry;
        }
    }
    if !best.value.is_finite() {
        return Err(Error::Estimation(format!(
            "ARIMA({p},{d},{q}) likelihood could not be evaluated"
        )));
    }
    if !best.converged {
        return Err(Error::Estimation(format!(
            "ARIMA({p},{d},{q}) optimiser did not converge (objective {:.6})",
            best.value
        )));
    }
    let (ar, ma, mu) = layout.unpack(&best.x);
    if !roots_ok(&ar, &ma) {
        return Err(Error::Estimation(format!(
            "ARIMA({p},{d},{q}) estimate has a root within {ROOT_MARGIN} of the unit circle"
        )));
    }
    let wc = centered(&w, mu);
    let pass = kalman(&wc, &StateSpace::new(&ar, &ma), skip)
        .ok_or_else(|| Error::Estimation("filter failed at the optimum".into()))?;
    let nf = n_used as f64;
    let sigma2 = pass.ssq / nf;
    let loglik = -0.5 * nf * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0) - 0.5 * pass.sumlog;

    // standard errors from the curvature of the concentrated likelihood in
    // the natural parameters
    let natural = |theta: &[f64]| {
        let ar = &theta[..p];
        let ma = &theta[p..p + q];
        let mu = if drift { theta[p + q] } else { 0.0 };
        if !roots_ok(ar, ma) {
            return f64::INFINITY;
        }
        concentrated_objective(&centered(&w, mu), ar, ma, skip)
    };
    let mut theta: Vec<f64> = ar.iter().chain(&ma).copied().collect();
    if drift {
        theta.push(mu);
    }
    let stderr = standard_errors(&natural, &theta, nf);

    let mut model = ArimaModel {
        p,
        d,
        q,
        drift,
        ar,
        ma,
        drift_value: mu,
        sigma2,
        loglik,
        aic: 0.0,
        stderr,
        n_used,
    };
    model.aic = -2.0 * loglik + 2.0 * model.n_params() as f64;
    Ok(model)
}

fn standard_errors<F: Fn(&[f64]) -> f64>(f: &F, theta: &[f64], n: f64) -> Vec<f64> {
    let k = theta.len();
    if k == 0 {
        return Vec::new();
    }
    let h = hessian(f, theta);
    let info = DMatrix::from_row_slice(k, k, &h) * n;
    match info.clone().cholesky() {
        Some(chol) => {
            let inv = chol.inverse();
            (0..k).map(|i| inv[(i, i)].sqrt()).collect()
        }
        None => {
            log::debug!("information matrix is not positive definite; standard errors unavailable");
            vec![f64::NAN; k]
        }
    }
}

/// Differenced series is constant: exact for a mean-only model.
fn exact_fit(p: usize, d: usize, q: usize, drift: bool, mean: f64, spread: f64, n_used: usize) -> Result<ArimaModel> {
    let residual_free = p == 0 && q == 0 && (drift || mean.abs() <= 1e-12 * spread.max(f64::MIN_POSITIVE));
    if !residual_free {
        return Err(Error::Estimation(format!(
            "differenced series is constant; ARIMA({p},{d},{q}) is not identified"
        )));
    }
    Ok(ArimaModel {
        p,
        d,
        q,
        drift,
        ar: Vec::new(),
        ma: Vec::new(),
        drift_value: if drift { mean } else { 0.0 },
        sigma2: 0.0,
        loglik: f64::INFINITY,
        aic: f64::NEG_INFINITY,
        stderr: if drift { vec![0.0] } else { Vec::new() },
        n_used,
    })
}

/// Candidate orders in the fixed enumeration order used for tie-breaking.
pub fn grid_candidates(grid: &ArimaGrid) -> Vec<(usize, usize, usize, bool)> {
    let mut out = Vec::new();
    for d in 0..=grid.max_d {
        for p in 0..=grid.max_p {
            for q in 0..=grid.max_q {
                out.push((p, d, q, false));
                if d <= 1 {
                    out.push((p, d, q, true));
                }
            }
        }
    }
    out
}

/// Exhaustive AIC search over the grid. All candidates are scored on the same
/// observations (the first `max_d - d` differences only condition the
/// filter). A candidate that fits exactly wins outright. Candidates with a
/// root within [`SELECTION_ROOT_MARGIN`] of the unit circle only compete when
/// no other candidate is left.
pub fn select_arima(series: &[f64], grid: &ArimaGrid) -> Result<ArimaModel> {
    let candidates = grid_candidates(grid);
    let fits: Vec<Option<ArimaModel>> = candidates
        .par_iter()
        .map(|&(p, d, q, drift)| {
            fit_arima_conditional(series, p, d, q, drift, grid.max_d - d)
                .map_err(|e| log::debug!("ARIMA({p},{d},{q}) drift={drift} skipped: {e}"))
                .ok()
        })
        .collect();
    if let Some(exact) = fits.iter().flatten().find(|m| m.is_exact()) {
        return Ok(exact.clone());
    }
    let finite: Vec<ArimaModel> = fits.into_iter().flatten().filter(|m| m.aic.is_finite()).collect();
    let clear: Vec<&ArimaModel> = finite
        .iter()
        .filter(|m| roots_clear(&m.ar, &m.ma, SELECTION_ROOT_MARGIN))
        .collect();
    let pool = if clear.is_empty() { finite.iter().collect() } else { clear };
    pool.into_iter()
        .fold(None, |best: Option<&ArimaModel>, m| match best {
            Some(b) if b.aic <= m.aic => Some(b),
            _ => Some(m),
        })
        .cloned()
        .ok_or_else(|| Error::Estimation("no ARIMA candidate could be fitted".into()))
}

/// Point forecasts with symmetric prediction intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorForecast {
    pub horizon: usize,
    pub point: Vec<f64>,
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FactorForecast {
    pub fn half_width(&self, h: usize) -> f64 {
        0.5 * (self.upper[h] - self.lower[h])
    }
}

/// ψ-weights of the integrated process `θ(B) / (φ(B)(1-B)^d)`, first `h` terms.
pub fn psi_weights(model: &ArimaModel, h: usize) -> Vec<f64> {
    // φ*(B) = φ(B)(1 - B)^d, stored as coefficients c with φ*(B) = 1 - Σ c_i B^i
    let mut poly = vec![1.0];
    poly.extend(model.ar.iter().map(|v| -v));
    for _ in 0..model.d {
        let mut next = vec![0.0; poly.len() + 1];
        for (i, c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c;
        }
        poly = next;
    }
    let c: Vec<f64> = poly[1..].iter().map(|v| -v).collect();
    let mut psi = vec![0.0; h];
    for j in 0..h {
        let mut v = if j == 0 {
            1.0
        } else if j <= model.q {
            model.ma[j - 1]
        } else {
            0.0
        };
        for (i, ci) in c.iter().enumerate() {
            if j > i {
                v += ci * psi[j - i - 1];
            }
        }
        psi[j] = v;
    }
    psi
}

/// Forecasts `horizon` steps beyond the end of `history` (the series the model
/// was fitted to) with `level` prediction intervals.
pub fn forecast_arima(model: &ArimaModel, history: &[f64], horizon: usize, level: f64) -> Result<FactorForecast> {
    if horizon == 0 {
        return Err(Error::Argument("forecast horizon must be at least 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(format!("level must lie in (0, 1), got {level}")));
    }
    if history.len() <= model.d {
        return Err(Error::Argument("history is shorter than the differencing order".into()));
    }
    let mu = model.drift_value;
    let w = difference(history, model.d);
    let mut wf = vec![mu; horizon];
    if !model.is_exact() {
        let ss = StateSpace::new(&model.ar, &model.ma);
        let pass = kalman(&centered(&w, mu), &ss, 0)
            .ok_or_else(|| Error::Estimation("filter failed while forecasting".into()))?;
        let mut state = pass.next_state;
        for f in wf.iter_mut() {
            *f += state[0];
            let first = state[0];
            let next: Vec<f64> = (0..ss.dim)
                .map(|i| ss.phi[i] * first + if i + 1 < ss.dim { state[i + 1] } else { 0.0 })
                .collect();
            state = next;
        }
    }
    // integrate back level by level
    let mut levels: Vec<Vec<f64>> = (0..model.d).map(|k| difference(history, k)).collect();
    let mut current = wf;
    while let Some(base) = levels.pop() {
        let mut last = *base.last().unwrap_or(&0.0);
        current = current
            .into_iter()
            .map(|step| {
                last += step;
                last
            })
            .collect();
    }
    let psi = psi_weights(model, horizon);
    let z = normal_quantile(0.5 * (1.0 + level));
    let mut acc = 0.0;
    let mut lower = Vec::with_capacity(horizon);
    let mut upper = Vec::with_capacity(horizon);
    for (h, point) in current.iter().enumerate() {
        acc += psi[h] * psi[h];
        let half = z * (model.sigma2 * acc).sqrt();
        lower.push(point - half);
        upper.push(point + half);
    }
    Ok(FactorForecast {
        horizon,
        point: current,
        level,
        lower,
        upper,
    })
}
