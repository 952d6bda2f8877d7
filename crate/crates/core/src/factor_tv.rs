//! Factor model with time-varying loadings, estimated in two stages.
//!
//! Stage one runs a kernel-weighted principal components problem centred at
//! every time point `r`: rows of the centred data are scaled by the square
//! root of the kernel weights and the leading eigenvectors of the weighted
//! `T x T` Gram matrix give the local factors, from which the loadings at `r`
//! follow. Stage two re-estimates the factor at each `t` by least squares on
//! the stage-one loadings at `t`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataio::MortalityPanel;
use crate::error::{Error, Result};
use crate::factor_classic::{select_num_factors, sum_to_one, FactorCount};
use crate::kernels::{weight_vector, KernelSpec};
use crate::linalg::{cumulative_shares, leading_row_space};
use crate::FactorModel;

#[derive(Debug, Clone, PartialEq)]
pub struct TvFit {
    pub n_factors: usize,
    /// One `N x R` loading matrix per time point.
    pub loadings: Vec<DMatrix<f64>>,
    /// `T x R` stage-two factors.
    pub factors: DMatrix<f64>,
    pub a_x: DVector<f64>,
    pub kernel: KernelSpec,
    pub eigen_shares_at_center: Vec<f64>,
    /// `(r, column)` pairs whose loadings summed to ~0 and were scaled to unit norm.
    pub unit_norm_fallbacks: Vec<(usize, usize)>,
}

impl TvFit {
    pub fn n_years(&self) -> usize {
        self.loadings.len()
    }

    pub fn n_ages(&self) -> usize {
        self.a_x.len()
    }

    /// Loading path over time of one age for one factor.
    pub fn loading_path(&self, age_index: usize, factor: usize) -> Vec<f64> {
        self.loadings.iter().map(|b| b[(age_index, factor)]).collect()
    }
}

impl FactorModel for TvFit {
    fn a_x(&self) -> &DVector<f64> {
        &self.a_x
    }

    fn common_component(&self) -> DMatrix<f64> {
        let n = self.n_ages();
        let t = self.n_years();
        DMatrix::from_fn(n, t, |i, j| {
            (0..self.n_factors)
                .map(|c| self.loadings[j][(i, c)] * self.factors[(j, c)])
                .sum()
        })
    }
}

/// Raw output of the weighted principal components problem at one `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPca {
    /// `T x R`; zero outside the kernel support.
    pub factors: DMatrix<f64>,
    /// `N x R`, before sign alignment and rescaling.
    pub loadings: DMatrix<f64>,
    /// Spectrum of the weighted Gram matrix, decreasing.
    pub eigenvalues: Vec<f64>,
}

/// Weighted principal components centred at `r` (1-based) on the centred
/// `N x T` matrix.
pub fn localized_pca_at(
    centered: &DMatrix<f64>,
    r: usize,
    kernel: &KernelSpec,
    n_factors: usize,
) -> Result<LocalPca> {
    let (n, t) = centered.shape();
    if n_factors == 0 || n_factors > n.min(t) {
        return Err(Error::Argument(format!(
            "factor count {n_factors} must lie in 1..={}",
            n.min(t)
        )));
    }
    let weights = weight_vector(r, t, kernel, n_factors)?;
    let support: Vec<usize> = (0..t).filter(|&j| weights[j] > 0.0).collect();
    let weighted = DMatrix::from_fn(support.len(), n, |s, i| {
        weights[support[s]].sqrt() * centered[(i, support[s])]
    });
    let (eigenvalues, u) = leading_row_space(&weighted, n_factors)
        .ok_or(Error::DegenerateWindow {
            r,
            positive: support.len(),
            required: n_factors + 1,
        })?;
    let sqrt_t = (t as f64).sqrt();
    let mut factors = DMatrix::zeros(t, n_factors);
    for (s, &j) in support.iter().enumerate() {
        for c in 0..n_factors {
            factors[(j, c)] = u[(s, c)] * sqrt_t;
        }
    }
    // B = M' K / T restricted to the support
    let loadings = weighted.transpose() * u / sqrt_t;
    Ok(LocalPca {
        factors,
        loadings,
        eigenvalues,
    })
}

/// Orients every loading column so that it sums to a positive value. Columns
/// whose sum is within 1e-12 of zero follow the previous time point instead.
/// Returns, per time point, the sign applied to each column.
pub fn align_signs(loadings: &mut [DMatrix<f64>]) -> Vec<Vec<f64>> {
    let mut signs = Vec::with_capacity(loadings.len());
    for idx in 0..loadings.len() {
        let (done, rest) = loadings.split_at_mut(idx);
        let current = &mut rest[0];
        let mut applied = vec![1.0; current.ncols()];
        for c in 0..current.ncols() {
            let sum = current.column(c).sum();
            let flip = if sum.abs() > 1e-12 {
                sum < 0.0
            } else if let Some(prev) = done.last() {
                current.column(c).dot(&prev.column(c)) < 0.0
            } else {
                current.column(c).iter().copied().find(|v| *v != 0.0).unwrap_or(0.0) < 0.0
            };
            if flip {
                current.column_mut(c).neg_mut();
                applied[c] = -1.0;
            }
        }
        signs.push(applied);
    }
    signs
}

/// Least squares factors given loadings at each time point:
/// `k_t = (B_t'B_t)^-1 B_t' x_t`.
pub fn stage2_factors(centered: &DMatrix<f64>, loadings: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let t = centered.ncols();
    if loadings.len() != t {
        return Err(Error::Argument(format!(
            "{} loading matrices for {t} time points",
            loadings.len()
        )));
    }
    let r = loadings.first().map_or(0, |b| b.ncols());
    let mut factors = DMatrix::zeros(t, r);
    for (j, b) in loadings.iter().enumerate() {
        let k = ols_factor(b, &centered.column(j).into_owned()).ok_or(Error::Rank { t: j + 1 })?;
        factors.row_mut(j).copy_from(&k.transpose());
    }
    Ok(factors)
}

pub(crate) fn ols_factor(b: &DMatrix<f64>, x: &DVector<f64>) -> Option<DVector<f64>> {
    let btb = b.transpose() * b;
    let scale = btb.diagonal().amax();
    if !(scale > 0.0) {
        return None;
    }
    let chol = btb.cholesky()?;
    let diag_min = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if diag_min * diag_min <= 1e-14 * scale {
        return None;
    }
    Some(chol.solve(&(b.transpose() * x)))
}

/// Two-stage estimator over every `r = 1..=T`.
///
/// With no kernel given, uses Epanechnikov with the rule-of-thumb bandwidth
/// and boundary correction. When the factor count is a cutoff it is chosen
/// from the weighted spectrum at `r = ceil(T/2)`.
pub fn fit_tv(panel: &MortalityPanel, kernel: Option<KernelSpec>, count: FactorCount) -> Result<TvFit> {
    fit_tv_centered(&panel.centered(), panel.a_x().clone(), kernel, count)
}

pub fn fit_tv_centered(
    centered: &DMatrix<f64>,
    a_x: DVector<f64>,
    kernel: Option<KernelSpec>,
    count: FactorCount,
) -> Result<TvFit> {
    let (n, t) = centered.shape();
    let kernel = kernel.unwrap_or_else(|| KernelSpec::default_for(t, n));
    kernel.validate()?;
    let center = t.div_ceil(2);
    let probe = localized_pca_at(centered, center, &kernel, 1)?;
    let n_factors = match count {
        FactorCount::Fixed(r) => r,
        FactorCount::Cutoff(c) => select_num_factors(&probe.eigenvalues, c)?,
    };
    let eigen_shares_at_center = cumulative_shares(&probe.eigenvalues);

    let mut loadings = (1..=t)
        .into_par_iter()
        .map(|r| localized_pca_at(centered, r, &kernel, n_factors).map(|p| p.loadings))
        .collect::<Result<Vec<_>>>()?;
    align_signs(&mut loadings);

    let mut unit_norm_fallbacks = Vec::new();
    for (j, b) in loadings.iter_mut().enumerate() {
        let (scaled, _, fallback) = sum_to_one(b.clone(), DMatrix::zeros(1, n_factors));
        *b = scaled;
        unit_norm_fallbacks.extend(fallback.into_iter().map(|c| (j + 1, c)));
    }
    let factors = stage2_factors(centered, &loadings)?;
    Ok(TvFit {
        n_factors,
        loadings,
        factors,
        a_x,
        kernel,
        eigen_shares_at_center,
        unit_norm_fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_classic::fit_classic;
    use crate::kernels::KernelFamily;
    use crate::mse_in_sample;

    fn wavy_panel(n: usize, t: usize, noise: f64) -> MortalityPanel {
        let m = DMatrix::from_fn(n, t, |i, j| {
            let s = j as f64 / t as f64;
            let b = 1.0 + (i as f64 / n as f64) * (2.0 * s - 1.0);
            let k = -0.1 * j as f64 + 0.5 * (j as f64 * 0.4).sin();
            -3.0 + 0.1 * i as f64 + b * k + noise * ((i * 31 + j * 17) as f64).sin()
        });
        MortalityPanel::from_matrix(m, "wavy").unwrap()
    }

    #[test]
    fn constant_rank_one_loadings_recovered_everywhere() {
        let n = 15;
        let t = 50;
        let raw = DVector::from_fn(n, |i, _| 0.5 + (i % 4) as f64 * 0.3);
        let b = &raw / raw.sum();
        let mut k = DVector::from_fn(t, |j, _| 2.0 - 0.4 * j as f64 + (j as f64).cos());
        k.add_scalar_mut(-k.mean());
        let panel = MortalityPanel::from_matrix(&b * k.transpose(), "").unwrap();
        let fit = fit_tv(&panel, None, FactorCount::Fixed(1)).unwrap();
        for bt in &fit.loadings {
            assert!((bt.column(0) - &b).amax() < 1e-8);
        }
        assert!((fit.factors.column(0) - &k).amax() < 1e-8);
    }

    #[test]
    fn uniform_full_width_equals_classic() {
        let panel = wavy_panel(12, 40, 0.05);
        let kernel = KernelSpec::new(KernelFamily::Uniform, 1.5, false).unwrap();
        let tv = fit_tv(&panel, Some(kernel), FactorCount::Fixed(1)).unwrap();
        let cl = fit_classic(&panel, FactorCount::Fixed(1)).unwrap();
        for bt in &tv.loadings {
            assert!((bt - &cl.loadings).amax() < 1e-10);
        }
        assert!((&tv.factors - &cl.factors).amax() < 1e-10);
    }

    #[test]
    fn per_period_sum_to_one_and_finite() {
        let panel = wavy_panel(20, 60, 0.05);
        let fit = fit_tv(&panel, None, FactorCount::Fixed(1)).unwrap();
        for bt in &fit.loadings {
            assert!((bt.column(0).sum() - 1.0).abs() < 1e-10);
            assert!(bt.iter().all(|v| v.is_finite()));
        }
        assert!(fit.unit_norm_fallbacks.is_empty());
    }

    #[test]
    fn stage2_residual_orthogonal_to_loadings() {
        let panel = wavy_panel(20, 60, 0.05);
        let fit = fit_tv(&panel, None, FactorCount::Fixed(2)).unwrap();
        let c = panel.centered();
        for j in 0..60 {
            let b = &fit.loadings[j];
            let resid = c.column(j) - b * fit.factors.row(j).transpose();
            let g = b.transpose() * resid;
            assert!(g.amax() < 1e-8, "{g}");
        }
    }

    #[test]
    fn tv_in_sample_beats_classic() {
        let panel = wavy_panel(20, 60, 0.05);
        let tv = fit_tv(&panel, None, FactorCount::Fixed(1)).unwrap();
        let cl = fit_classic(&panel, FactorCount::Fixed(1)).unwrap();
        let mse_tv = mse_in_sample(&tv, &panel).unwrap();
        let mse_cl = mse_in_sample(&cl, &panel).unwrap();
        assert!(mse_tv < mse_cl, "{mse_tv} vs {mse_cl}");
    }

    #[test]
    fn time_reversal_reverses_loadings() {
        let panel = wavy_panel(12, 45, 0.05);
        let reversed = DMatrix::from_fn(12, 45, |i, j| panel.log_rates()[(i, 44 - j)]);
        let rpanel = MortalityPanel::from_matrix(reversed, "").unwrap();
        let a = fit_tv(&panel, None, FactorCount::Fixed(1)).unwrap();
        let b = fit_tv(&rpanel, None, FactorCount::Fixed(1)).unwrap();
        for j in 0..45 {
            assert!((&a.loadings[j] - &b.loadings[44 - j]).amax() < 1e-8);
        }
    }

    #[test]
    fn align_signs_behaviour() {
        let base: Vec<DMatrix<f64>> = (0..5)
            .map(|j| DMatrix::from_column_slice(3, 1, &[0.2 + 0.01 * j as f64, 0.5, 0.3]))
            .collect();
        let mut already = base.clone();
        align_signs(&mut already);
        assert_eq!(already, base);

        let mut alternating: Vec<DMatrix<f64>> = base
            .iter()
            .enumerate()
            .map(|(j, b)| if j % 2 == 1 { -b } else { b.clone() })
            .collect();
        align_signs(&mut alternating);
        assert_eq!(alternating, base);

        let mut flipped: Vec<DMatrix<f64>> = base.iter().map(|b| -b).collect();
        align_signs(&mut flipped);
        assert_eq!(flipped, base);

        // zero-sum column follows its predecessor
        let mut zero_sum = vec![
            DMatrix::from_column_slice(2, 1, &[1.0, -0.5]),
            DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]),
        ];
        align_signs(&mut zero_sum);
        assert_eq!(zero_sum[1], DMatrix::from_column_slice(2, 1, &[1.0, -1.0]));
    }

    #[test]
    fn stage2_scalar_formula_and_rank_error() {
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0]);
        let b = DMatrix::from_column_slice(3, 1, &[0.2, 0.3, 0.5]);
        let k = stage2_factors(&c, &[b.clone(), b.clone()]).unwrap();
        let ss = 0.04 + 0.09 + 0.25;
        assert!((k[(0, 0)] - (0.2 * 1.0 + 0.3 * 0.5) / ss).abs() < 1e-14);
        assert!((k[(1, 0)] - (0.4 - 0.3 + 1.5) / ss).abs() < 1e-14);
        let zero = DMatrix::zeros(3, 1);
        assert_eq!(stage2_factors(&c, &[b, zero]).unwrap_err(), Error::Rank { t: 2 });
    }

    #[test]
    fn stage2_exact_recovery_with_varying_loadings() {
        let n = 10;
        let t = 8;
        let bs: Vec<DMatrix<f64>> = (0..t)
            .map(|j| {
                let raw = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i * (j + 1)) as f64);
                DMatrix::from_column_slice(n, 1, (&raw / raw.sum()).as_slice())
            })
            .collect();
        let k: Vec<f64> = (0..t).map(|j| 3.0 - 1.3 * j as f64).collect();
        let c = DMatrix::from_fn(n, t, |i, j| bs[j][(i, 0)] * k[j]);
        let est = stage2_factors(&c, &bs).unwrap();
        for j in 0..t {
            assert!((est[(j, 0)] - k[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_window_propagates() {
        let panel = wavy_panel(5, 10, 0.01);
        let kernel = KernelSpec::new(KernelFamily::Epanechnikov, 1e-4, true).unwrap();
        assert!(matches!(
            fit_tv(&panel, Some(kernel), FactorCount::Fixed(1)),
            Err(Error::DegenerateWindow { .. })
        ));
    }

    #[test]
    fn cutoff_selects_from_center_spectrum() {
        let panel = wavy_panel(20, 60, 0.05);
        let fit = fit_tv(&panel, None, FactorCount::Cutoff(0.9)).unwrap();
        let r = fit.n_factors;
        assert!(fit.eigen_shares_at_center[r - 1] >= 0.9 * (1.0 - 1e-12));
        if r > 1 {
            assert!(fit.eigen_shares_at_center[r - 2] < 0.9);
        }
    }
}
