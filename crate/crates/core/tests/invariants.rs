//! Property tests of the structural identities on random panels.

use nalgebra::DMatrix;
use proptest::prelude::*;
use tvfactor::factor_classic::{fit_classic, FactorCount};
use tvfactor::factor_tv::fit_tv;
use tvfactor::forecast::{ForecastOptions, Method, TvForecaster};
use tvfactor::sim::{generate, DgpKind, DgpSpec};
use tvfactor::timeseries::{local_linear_extrapolate, LocalLinearSpec};

fn dgp() -> impl Strategy<Value = DgpKind> {
    prop_oneof![Just(DgpKind::Dgp1), Just(DgpKind::Dgp2), Just(DgpKind::Dgp3)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn classic_identities(kind in dgp(), half_n in 4usize..12, half_t in 10usize..20, seed in any::<u64>(), r in 1usize..3) {
        let d = generate(&DgpSpec::new(kind, 2 * half_n, 2 * half_t, seed)).unwrap();
        let p = d.panel("p").unwrap();
        let fit = fit_classic(&p, FactorCount::Fixed(r)).unwrap();
        let t = p.n_years() as f64;
        let kk = fit.orthonormal_factors.transpose() * &fit.orthonormal_factors / t;
        prop_assert!((kk - DMatrix::identity(r, r)).amax() < 1e-8);
        for j in 0..r {
            if !fit.unit_norm_columns.contains(&j) {
                prop_assert!((fit.loadings.column(j).sum() - 1.0).abs() < 1e-10);
            }
        }
        let c = p.centered();
        let rss: f64 = (&c - &fit.loadings * fit.factors.transpose()).iter().map(|v| v * v).sum();
        let tail: f64 = fit.eigenvalues[r..].iter().sum();
        let total: f64 = fit.eigenvalues.iter().sum();
        prop_assert!((rss - tail).abs() <= 1e-9 * total.max(1.0));
    }

    #[test]
    fn tv_sums_and_hybrid_limits(kind in dgp(), half_n in 4usize..10, half_t in 12usize..20, seed in any::<u64>(), h in 1usize..8) {
        let d = generate(&DgpSpec::new(kind, 2 * half_n, 2 * half_t, seed)).unwrap();
        let p = d.panel("p").unwrap();
        let fit = fit_tv(&p, None, FactorCount::Fixed(1)).unwrap();
        for (t, l) in fit.loadings.iter().enumerate() {
            if !fit.unit_norm_fallbacks.contains(&(t, 0)) {
                prop_assert!((l.column(0).sum() - 1.0).abs() < 1e-10);
            }
        }
        let mut fc = TvForecaster::new(&fit, ForecastOptions::new(h)).unwrap();
        let naive = fc.forecast(Method::Naive).unwrap();
        let local = fc.forecast(Method::Local).unwrap();
        prop_assert_eq!(&naive.predicted, &fc.forecast(Method::Hybrid(0)).unwrap().predicted);
        prop_assert_eq!(&local.predicted, &fc.forecast(Method::Hybrid(h)).unwrap().predicted);
        for f in [&naive, &local] {
            prop_assert!((f.reconstruct() - &f.predicted).amax() <= 1e-12 * f.predicted.amax().max(1.0));
            let ff = &f.factor_forecasts[0];
            for s in 0..h {
                prop_assert!(ff.lower[s] <= ff.point[s] && ff.point[s] <= ff.upper[s]);
            }
        }
    }

    #[test]
    fn affine_paths_extrapolate_exactly(level in -5.0f64..5.0, slope in -1.0f64..1.0, t in 10usize..80, frac in 0.1f64..0.5) {
        let path: Vec<f64> = (1..=t).map(|s| level + slope * s as f64).collect();
        let lambda = (frac * t as f64).max(3.0);
        let ext = local_linear_extrapolate(&path, 25, &LocalLinearSpec::new(lambda).unwrap()).unwrap();
        for (h, v) in ext.iter().enumerate() {
            let truth = level + slope * (t + h + 1) as f64;
            prop_assert!((v - truth).abs() < 1e-10 * truth.abs().max(1.0));
        }
    }
}
