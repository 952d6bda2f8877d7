//! Classical factor model with time-invariant loadings (Lee-Carter for one
//! factor), estimated by principal components of the age-centred log rates.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataio::MortalityPanel;
use crate::error::{Error, Result};
use crate::linalg::{cumulative_shares, leading_row_space, trend_slope};
use crate::FactorModel;

/// Default cumulative eigenvalue share used to pick the number of factors.
pub const DEFAULT_CUTOFF: f64 = 0.9;

/// Either a fixed number of factors or the eigenvalue-share cutoff used to choose it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorCount {
    Fixed(usize),
    Cutoff(f64),
}

impl Default for FactorCount {
    fn default() -> Self {
        FactorCount::Cutoff(DEFAULT_CUTOFF)
    }
}

/// Smallest `R` whose leading eigenvalues explain at least `cutoff` of the total.
pub fn select_num_factors(eigenvalues: &[f64], cutoff: f64) -> Result<usize> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::Argument(format!("cutoff must lie in (0, 1), got {cutoff}")));
    }
    if eigenvalues.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Argument("eigenvalues must be finite and nonnegative".into()));
    }
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("all eigenvalues are zero".into()));
    }
    let mut acc = 0.0;
    for (i, v) in eigenvalues.iter().enumerate() {
        acc += v;
        // relative slack so that e.g. 9/10 counts as reaching 0.9
        if acc / total >= cutoff * (1.0 - 1e-12) {
            return Ok(i + 1);
        }
    }
    Ok(eigenvalues.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicFit {
    pub n_factors: usize,
    /// `N x R`, each column summing to one.
    pub loadings: DMatrix<f64>,
    /// `T x R`, rescaled inversely to the loadings.
    pub factors: DMatrix<f64>,
    /// `T x R` principal-component factors before the sum-to-one rescaling,
    /// satisfying `K'K/T = I`.
    pub orthonormal_factors: DMatrix<f64>,
    pub a_x: DVector<f64>,
    /// Spectrum of the centred data's Gram matrix, length `min(N, T)`.
    pub eigenvalues: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    /// Columns whose loadings summed to (almost) zero and were scaled to unit
    /// norm instead.
    pub unit_norm_columns: Vec<usize>,
}

impl FactorModel for ClassicFit {
    fn a_x(&self) -> &DVector<f64> {
        &self.a_x
    }

    fn common_component(&self) -> DMatrix<f64> {
        &self.loadings * self.factors.transpose()
    }
}

/// Fits the classical factor model to the panel, centring on the panel's own age means.
pub fn fit_classic(panel: &MortalityPanel, count: FactorCount) -> Result<ClassicFit> {
    fit_classic_centered(&panel.centered(), panel.a_x().clone(), count)
}

/// Fits the classical factor model to an already centred `N x T` matrix.
pub fn fit_classic_centered(
    centered: &DMatrix<f64>,
    a_x: DVector<f64>,
    count: FactorCount,
) -> Result<ClassicFit> {
    let (n, t) = centered.shape();
    let max_r = n.min(t);
    let probe = match count {
        FactorCount::Fixed(r) if r == 0 || r > max_r => {
            return Err(Error::Argument(format!(
                "factor count {r} must lie in 1..={max_r}"
            )))
        }
        FactorCount::Fixed(r) => r,
        FactorCount::Cutoff(_) => 1,
    };
    // rows = time points
    let data_t = centered.transpose();
    let (eigenvalues, _) = leading_row_space(&data_t, probe)
        .ok_or_else(|| Error::Degenerate("centred data has rank zero".into()))?;
    let r = match count {
        FactorCount::Fixed(r) => r,
        FactorCount::Cutoff(c) => select_num_factors(&eigenvalues, c)?,
    };
    let (_, u) = leading_row_space(&data_t, r).ok_or_else(|| {
        Error::Degenerate(format!("centred data has rank below {r}"))
    })?;

    let sqrt_t = (t as f64).sqrt();
    let mut k_orth = u * sqrt_t;
    for j in 0..r {
        let slope = trend_slope(k_orth.column(j).iter().copied());
        let first = k_orth.column(j).iter().copied().find(|v| *v != 0.0).unwrap_or(0.0);
        if slope > 0.0 || (slope == 0.0 && first < 0.0) {
            k_orth.column_mut(j).neg_mut();
        }
    }
    let b_orth = centered * &k_orth / t as f64;
    let (loadings, factors, unit_norm_columns) = sum_to_one(b_orth, k_orth.clone());

    Ok(ClassicFit {
        n_factors: r,
        loadings,
        factors,
        orthonormal_factors: k_orth,
        a_x,
        explained_ratio: cumulative_shares(&eigenvalues),
        eigenvalues,
        unit_norm_columns,
    })
}

/// Rescales each loading column to sum to one with the factor column scaled
/// inversely. Columns whose sum is negligible are scaled to unit norm.
pub(crate) fn sum_to_one(
    mut loadings: DMatrix<f64>,
    mut factors: DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, Vec<usize>) {
    let mut fallback = Vec::new();
    for j in 0..loadings.ncols() {
        let sum = loadings.column(j).sum();
        let norm = loadings.column(j).norm();
        let scale = if sum.abs() > 1e-10 * norm.max(f64::MIN_POSITIVE) {
            sum
        } else {
            fallback.push(j);
            norm
        };
        if scale == 0.0 {
            continue;
        }
        loadings.column_mut(j).unscale_mut(scale);
        factors.column_mut(j).scale_mut(scale);
    }
    if !fallback.is_empty() {
        warn!("loading columns {fallback:?} sum to ~0; using unit-norm scaling");
    }
    (loadings, factors, fallback)
}

/// Loadings from one rolling window fit.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowLoadings {
    pub start_year: i32,
    pub end_year: i32,
    /// `N x R`.
    pub loadings: DMatrix<f64>,
}

/// Fits the classical model on every contiguous window of `window` years.
pub fn rolling_window_loadings(
    panel: &MortalityPanel,
    window: usize,
    n_factors: usize,
) -> Result<Vec<WindowLoadings>> {
    if window < 3 {
        return Err(Error::Argument(format!("window length {window} is below 3")));
    }
    let t = panel.n_years();
    if window > t {
        return Err(Error::Argument(format!(
            "window length {window} exceeds the {t} available years"
        )));
    }
    (0..=t - window)
        .into_par_iter()
        .map(|start| {
            let sub = panel.slice_years(start, start + window)?;
            let fit = fit_classic(&sub, FactorCount::Fixed(n_factors))?;
            Ok(WindowLoadings {
                start_year: sub.years()[0],
                end_year: sub.years()[window - 1],
                loadings: fit.loadings,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mse_in_sample;
    use crate::testutil::noisy_panel;

    #[test]
    fn factor_count_examples() {
        assert_eq!(select_num_factors(&[9.0, 0.5, 0.5], 0.9).unwrap(), 1);
        assert_eq!(select_num_factors(&[5.0, 4.0, 1.0], 0.9).unwrap(), 2);
        assert_eq!(select_num_factors(&[1.0, 0.0, 0.0], 0.99).unwrap(), 1);
        assert_eq!(select_num_factors(&[1.0, 0.0, 0.0], 0.01).unwrap(), 1);
        assert!(matches!(select_num_factors(&[0.0, 0.0], 0.9), Err(Error::Degenerate(_))));
        assert!(select_num_factors(&[1.0], 1.0).is_err());
    }

    fn rank_one(n: usize, t: usize) -> (DVector<f64>, DVector<f64>, MortalityPanel) {
        let raw = DVector::from_fn(n, |i, _| 0.2 + ((i * 7) % 11) as f64 / 10.0);
        let b = &raw / raw.sum();
        let mut k = DVector::from_fn(t, |j, _| -3.0 * j as f64 + 5.0 * (j as f64 * 0.7).sin());
        k.add_scalar_mut(-k.mean());
        let m = &b * k.transpose();
        (b, k, MortalityPanel::from_matrix(m, "rank1").unwrap())
    }

    #[test]
    fn noiseless_rank_one_recovery() {
        for (n, t) in [(20, 40), (40, 20)] {
            let (b, k, panel) = rank_one(n, t);
            let fit = fit_classic(&panel, FactorCount::Fixed(1)).unwrap();
            assert!((fit.loadings.column(0) - &b).amax() < 1e-10);
            assert!((fit.factors.column(0) - &k).amax() < 1e-10);
            assert!((fit.loadings.column(0).sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn both_gram_routes_agree() {
        let panel = noisy_panel(15, 30, 3);
        let wide = fit_classic(&panel, FactorCount::Fixed(2)).unwrap();
        let tall_data = panel.log_rates().columns(0, 12).into_owned();
        let tall_panel = MortalityPanel::from_matrix(tall_data, "").unwrap();
        let tall = fit_classic(&tall_panel, FactorCount::Fixed(2)).unwrap();
        // cross-check the tall case against an explicit T x T eigen problem
        let (vals, vecs) = crate::linalg::sorted_eigen(tall_panel.centered().transpose() * tall_panel.centered());
        for j in 0..2 {
            let u = vecs.column(j);
            let dot = (u.transpose() * tall.orthonormal_factors.column(j))[0] / 12f64.sqrt();
            assert!((dot.abs() - 1.0).abs() < 1e-8);
            assert!((vals[j] - tall.eigenvalues[j]).abs() < 1e-8 * vals[0]);
        }
        assert_eq!(wide.eigenvalues.len(), 15);
        assert_eq!(tall.eigenvalues.len(), 12);
    }


    #[test]
    fn orthonormal_and_eckart_young() {
        let panel = noisy_panel(25, 40, 9);
        let centered = panel.centered();
        let total: f64 = centered.iter().map(|v| v * v).sum();
        for r in 1..=3 {
            let fit = fit_classic(&panel, FactorCount::Fixed(r)).unwrap();
            let kk = fit.orthonormal_factors.transpose() * &fit.orthonormal_factors / 40.0;
            assert!((kk - DMatrix::identity(r, r)).amax() < 1e-8);
            let resid = &centered - &fit.loadings * fit.factors.transpose();
            let rss: f64 = resid.iter().map(|v| v * v).sum();
            let tail: f64 = fit.eigenvalues[r..].iter().sum();
            assert!((rss - tail).abs() < 1e-8 * total.max(1.0), "{rss} vs {tail}");
            // B'B diagonal before rescaling
            let b_orth = &centered * &fit.orthonormal_factors / 40.0;
            let btb = b_orth.transpose() * &b_orth;
            for i in 0..r {
                for j in 0..r {
                    if i != j {
                        assert!(btb[(i, j)].abs() < 1e-10 * btb[(0, 0)]);
                    }
                }
            }
            for j in 0..r {
                assert!((fit.loadings.column(j).sum() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eckart_young_against_direct_svd() {
        let panel = noisy_panel(12, 20, 4);
        let c = panel.centered();
        let svd = c.clone().svd(true, true);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let fit = fit_classic(&panel, FactorCount::Fixed(2)).unwrap();
        let tail: f64 = sv[2..].iter().map(|s| s * s).sum();
        let mse = mse_in_sample(&fit, &panel).unwrap();
        assert!((mse * 240.0 - tail).abs() < 1e-9);
    }

    #[test]
    fn age_permutation_and_offset() {
        let panel = noisy_panel(10, 30, 5);
        let fit = fit_classic(&panel, FactorCount::Fixed(1)).unwrap();
        let perm: Vec<usize> = (0..10).rev().collect();
        let permuted = DMatrix::from_fn(10, 30, |i, j| panel.log_rates()[(perm[i], j)]);
        let pfit = fit_classic(&MortalityPanel::from_matrix(permuted, "").unwrap(), FactorCount::Fixed(1)).unwrap();
        for i in 0..10 {
            assert!((pfit.loadings[(i, 0)] - fit.loadings[(perm[i], 0)]).abs() < 1e-10);
        }
        assert!((pfit.factors.column(0) - fit.factors.column(0)).amax() < 1e-10);

        let mut shifted = panel.log_rates().clone();
        shifted.row_mut(3).add_scalar_mut(2.5);
        let sfit = fit_classic(&MortalityPanel::from_matrix(shifted, "").unwrap(), FactorCount::Fixed(1)).unwrap();
        assert!((sfit.loadings.column(0) - fit.loadings.column(0)).amax() < 1e-10);
        assert!((sfit.factors.column(0) - fit.factors.column(0)).amax() < 1e-10);
        assert!((sfit.a_x[3] - fit.a_x[3] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn sign_convention_declining_index() {
        let panel = noisy_panel(10, 30, 6);
        let fit = fit_classic(&panel, FactorCount::Fixed(1)).unwrap();
        let slope = trend_slope(fit.orthonormal_factors.column(0).iter().copied());
        assert!(slope <= 0.0);
    }

    #[test]
    fn factor_count_bounds() {
        let panel = noisy_panel(5, 8, 1);
        assert!(fit_classic(&panel, FactorCount::Fixed(6)).is_err());
        assert!(fit_classic(&panel, FactorCount::Fixed(0)).is_err());
        let fit = fit_classic(&panel, FactorCount::Cutoff(0.5)).unwrap();
        assert!(fit.n_factors >= 1);
    }

    #[test]
    fn rolling_window_counts() {
        let panel = noisy_panel(6, 98, 2);
        let w = rolling_window_loadings(&panel, 40, 1).unwrap();
        assert_eq!(w.len(), 59);
        let panel = noisy_panel(6, 85, 2);
        assert_eq!(rolling_window_loadings(&panel, 40, 1).unwrap().len(), 46);
        let single = rolling_window_loadings(&panel, 85, 1).unwrap();
        assert_eq!(single.len(), 1);
        let full = fit_classic(&panel, FactorCount::Fixed(1)).unwrap();
        assert!((&single[0].loadings - &full.loadings).amax() < 1e-12);
        assert!(rolling_window_loadings(&panel, 2, 1).is_err());
        assert!(rolling_window_loadings(&panel, 86, 1).is_err());
    }
}
