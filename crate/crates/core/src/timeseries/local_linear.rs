//! Kernel-weighted local linear extrapolation of loading paths.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::KernelFamily;

/// Default grid of window widths, as fractions of the path length.
pub const DEFAULT_LAMBDA_FRACTIONS: [f64; 10] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalLinearSpec {
    /// Window width in time-index units.
    pub lambda: f64,
    pub family: KernelFamily,
}

impl LocalLinearSpec {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Argument(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self {
            lambda,
            family: KernelFamily::Epanechnikov,
        })
    }
}

/// Fits `α + β(t - target)` to `path` (observed at `t = 1..=path.len()`) with
/// weights `K((t - target)/λ)` and returns `α`, the fitted value at `target`.
pub fn local_linear_at(path: &[f64], target: usize, spec: &LocalLinearSpec) -> Result<f64> {
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &y) in path.iter().enumerate() {
        let s = (i + 1) as f64 - target as f64;
        let w = spec.family.density(s / spec.lambda);
        if w <= 0.0 {
            continue;
        }
        s0 += w;
        s1 += w * s;
        s2 += w * s * s;
        t0 += w * y;
        t1 += w * s * y;
    }
    let det = s0 * s2 - s1 * s1;
    if s0 <= 0.0 || det <= 1e-12 * s0 * s2 {
        return Err(Error::Window { target });
    }
    Ok((s2 * t0 - s1 * t1) / det)
}

/// Extrapolates `steps` values beyond the end of `path`, appending each
/// prediction to the path before computing the next.
pub fn local_linear_extrapolate(path: &[f64], steps: usize, spec: &LocalLinearSpec) -> Result<Vec<f64>> {
    let mut extended = path.to_vec();
    extended.reserve(steps);
    for _ in 0..steps {
        let target = extended.len() + 1;
        let next = local_linear_at(&extended, target, spec)?;
        extended.push(next);
    }
    Ok(extended.split_off(path.len()))
}

/// Row-wise extrapolation of an `N x T` matrix of paths; returns `N x steps`.
pub fn extrapolate_rows(paths: &DMatrix<f64>, steps: usize, spec: &LocalLinearSpec) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = (0..paths.nrows())
        .into_par_iter()
        .map(|i| {
            let path: Vec<f64> = paths.row(i).iter().copied().collect();
            local_linear_extrapolate(&path, steps, spec)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(paths.nrows(), steps, |i, j| rows[i][j]))
}

/// Default validation size `min(10, T/5)`, at least one.
pub fn default_validation(t: usize) -> usize {
    (t / 5).clamp(1, 10)
}

/// Picks λ from `fractions · T` by truncating every path `validation` points
/// early, extrapolating those points recursively and pooling squared errors
/// across rows. Near-ties go to the smaller λ.
pub fn select_lambda(paths: &DMatrix<f64>, validation: Option<usize>, fractions: &[f64]) -> Result<f64> {
    let t = paths.ncols();
    let v = validation.unwrap_or_else(|| default_validation(t));
    if v == 0 || v + 2 > t {
        return Err(Error::Argument(format!(
            "validation window {v} does not fit in paths of length {t}"
        )));
    }
    if paths.nrows() == 0 {
        return Err(Error::Argument("no paths supplied".into()));
    }
    let train = paths.columns(0, t - v).into_owned();
    let scores: Vec<(f64, Option<f64>)> = fractions
        .par_iter()
        .map(|&frac| {
            let lambda = frac * t as f64;
            let score = LocalLinearSpec::new(lambda)
                .and_then(|spec| extrapolate_rows(&train, v, &spec))
                .ok()
                .map(|pred| {
                    let mut sse = 0.0;
                    for i in 0..paths.nrows() {
                        for j in 0..v {
                            sse += (pred[(i, j)] - paths[(i, t - v + j)]).powi(2);
                        }
                    }
                    sse / (paths.nrows() * v) as f64
                })
                .filter(|s| s.is_finite());
            (lambda, score)
        })
        .collect();
    let best = scores
        .iter()
        .filter_map(|(_, s)| *s)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::Argument("no window width in the grid is feasible".into()));
    }
    let cut = best * (1.0 + 1e-9) + 1e-20;
    let chosen = scores
        .iter()
        .filter(|(_, s)| s.is_some_and(|s| s <= cut))
        .map(|(l, _)| *l)
        .fold(f64::INFINITY, f64::min);
    Ok(chosen)
}
