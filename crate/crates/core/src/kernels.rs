//! Kernel weights for localized estimation over the time index.
//!
//! Time points are `1..=T`. The weight of observation `t` for target `r` is
//! `h^-1 K((t - r) / (T h))`; near either end of the sample the weight is
//! divided by the kernel mass that falls inside the observed range.

use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelFamily {
    #[default]
    Epanechnikov,
    Uniform,
}

impl KernelFamily {
    /// Kernel density at `u`; both families are supported on `[-1, 1]`.
    pub fn density(self, u: f64) -> f64 {
        if u.abs() > 1.0 {
            return 0.0;
        }
        match self {
            KernelFamily::Epanechnikov => 0.75 * (1.0 - u * u),
            KernelFamily::Uniform => 0.5,
        }
    }

    fn antiderivative(self, u: f64) -> f64 {
        let u = u.clamp(-1.0, 1.0);
        match self {
            KernelFamily::Epanechnikov => 0.75 * u - 0.25 * u * u * u,
            KernelFamily::Uniform => 0.5 * u,
        }
    }

    /// `∫_lo^hi K(u) du`, exact.
    pub fn integral(self, lo: f64, hi: f64) -> f64 {
        self.antiderivative(hi) - self.antiderivative(lo)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Epanechnikov => "epanechnikov",
            KernelFamily::Uniform => "uniform",
        }
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" => Ok(KernelFamily::Epanechnikov),
            "uniform" => Ok(KernelFamily::Uniform),
            other => Err(Error::Argument(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Kernel family, bandwidth (as a fraction of the sample length) and whether
/// the boundary correction is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
    pub boundary_correction: bool,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64, boundary_correction: bool) -> Result<Self> {
        let spec = Self {
            family,
            bandwidth,
            boundary_correction,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Epanechnikov with the rule-of-thumb bandwidth and boundary correction.
    pub fn default_for(t: usize, n: usize) -> Self {
        Self {
            family: KernelFamily::Epanechnikov,
            bandwidth: silverman_bandwidth(t, n),
            boundary_correction: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::Argument(format!(
                "bandwidth must be positive and finite, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }
}

/// Rule-of-thumb bandwidth `(2.35/√12) T^(-1/5) N^(-1/10)`.
pub fn silverman_bandwidth(t: usize, n: usize) -> f64 {
    2.35 / 12f64.sqrt() * (t as f64).powf(-0.2) * (n as f64).powf(-0.1)
}

/// Kernel weight of observation `t` for the local problem centred at `r`,
/// with `1 <= t, r <= total`.
pub fn boundary_weight(t: usize, r: usize, total: usize, spec: &KernelSpec) -> Result<f64> {
    if t == 0 || r == 0 || t > total || r > total {
        return Err(Error::Argument(format!(
            "indices t={t}, r={r} must lie in 1..={total}"
        )));
    }
    Ok(weight_unchecked(t, r, total, spec))
}

fn weight_unchecked(t: usize, r: usize, total: usize, spec: &KernelSpec) -> f64 {
    let th = total as f64 * spec.bandwidth;
    let u = (t as f64 - r as f64) / th;
    let base = spec.family.density(u) / spec.bandwidth;
    if base == 0.0 || !spec.boundary_correction {
        return base;
    }
    let edge = th.floor() as usize;
    if r <= edge || r > total.saturating_sub(edge) {
        // kernel mass over the observed range 1 <= t <= total; reduces to the
        // one-sided integral unless both edges are within reach
        base / spec.family.integral(-((r - 1) as f64) / th, (total - r) as f64 / th)
    } else {
        base
    }
}

/// Weights `w_t`, `t = 1..=total`, for target `r`. Fails when fewer than
/// `n_factors + 1` weights are strictly positive.
pub fn weight_vector(r: usize, total: usize, spec: &KernelSpec, n_factors: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    if r == 0 || r > total {
        return Err(Error::Argument(format!("r={r} must lie in 1..={total}")));
    }
    let w: Vec<f64> = (1..=total).map(|t| weight_unchecked(t, r, total, spec)).collect();
    let positive = w.iter().filter(|&&v| v > 0.0).count();
    if positive < n_factors + 1 {
        return Err(Error::DegenerateWindow {
            r,
            positive,
            required: n_factors + 1,
        });
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn epa(h: f64) -> KernelSpec {
        KernelSpec::new(KernelFamily::Epanechnikov, h, true).unwrap()
    }

    #[test]
    fn silverman_values() {
        // oracle: mpmath at 30 digits
        assert!((silverman_bandwidth(100, 91) - 0.172_017_685_533_185_4).abs() < 1e-12);
        assert!((silverman_bandwidth(60, 91) - 0.190_520_998_940_024_4).abs() < 1e-12);
        assert!(silverman_bandwidth(200, 91) < silverman_bandwidth(100, 91));
        assert!(silverman_bandwidth(100, 200) < silverman_bandwidth(100, 91));
    }

    #[test]
    fn interior_centre_weight() {
        let s = epa(0.172);
        let w = boundary_weight(50, 50, 100, &s).unwrap();
        assert!((w - 0.75 / 0.172).abs() < 1e-12);
    }

    #[test]
    fn outside_support_is_zero() {
        let s = epa(0.172);
        assert_eq!(boundary_weight(50 + 18, 50, 100, &s).unwrap(), 0.0);
        assert_eq!(boundary_weight(1, 100, 100, &s).unwrap(), 0.0);
    }

    #[test]
    fn first_point_correction() {
        // ∫_0^1 K = 0.75 - 0.25 = 0.5
        let s = epa(0.172);
        let w = boundary_weight(1, 1, 100, &s).unwrap();
        assert!((w - 1.5 / 0.172).abs() < 1e-12);
        let w = boundary_weight(100, 100, 100, &s).unwrap();
        assert!((w - 1.5 / 0.172).abs() < 1e-12);
    }

    #[test]
    fn index_errors() {
        let s = epa(0.2);
        assert!(boundary_weight(0, 1, 10, &s).is_err());
        assert!(boundary_weight(1, 11, 10, &s).is_err());
        assert!(weight_vector(0, 10, &s, 1).is_err());
    }

    #[test]
    fn wide_window_all_positive() {
        let w = weight_vector(3, 5, &epa(2.0), 1).unwrap();
        assert!(w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn riemann_sum_is_one_in_interior() {
        let s = epa(0.1);
        let w = weight_vector(500, 1000, &s, 1).unwrap();
        let mass: f64 = w.iter().sum::<f64>() / 1000.0;
        // midpoint-rule error for the Epanechnikov density is O((Th)^-2)
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
        // boundary-corrected edges integrate to one as well
        let w = weight_vector(1, 1000, &s, 1).unwrap();
        let mass: f64 = w.iter().sum::<f64>() / 1000.0;
        assert!((mass - 1.0).abs() < 1e-2, "{mass}");
    }

    #[test]
    fn tiny_bandwidth_degenerate() {
        let err = weight_vector(3, 5, &epa(1e-3), 1).unwrap_err();
        assert_eq!(
            err,
            Error::DegenerateWindow {
                r: 3,
                positive: 1,
                required: 2
            }
        );
    }

    #[test]
    fn uniform_full_width_is_flat() {
        let s = KernelSpec::new(KernelFamily::Uniform, 1.0, false).unwrap();
        for r in 1..=20 {
            let w = weight_vector(r, 20, &s, 1).unwrap();
            assert!(w.iter().all(|&v| v == w[0]));
        }
    }

    #[test]
    fn nonpositive_bandwidth_rejected() {
        assert!(KernelSpec::new(KernelFamily::Epanechnikov, 0.0, true).is_err());
        assert!(KernelSpec::new(KernelFamily::Epanechnikov, f64::NAN, true).is_err());
    }

    proptest! {
        #[test]
        fn interior_symmetry(total in 30usize..200, h in 0.05f64..0.3, frac in 0.3f64..0.7, d in 0usize..20) {
            let s = epa(h);
            let edge = (total as f64 * h).floor() as usize;
            let r = ((total as f64 * frac) as usize).max(edge + 1);
            prop_assume!(r > edge && r + edge <= total && r > d && r + d <= total);
            let a = boundary_weight(r + d, r, total, &s).unwrap();
            let b = boundary_weight(r - d, r, total, &s).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn correction_preserves_support(total in 10usize..120, h in 0.02f64..0.6, r in 1usize..120, t in 1usize..120) {
            prop_assume!(r <= total && t <= total);
            let on = boundary_weight(t, r, total, &epa(h)).unwrap();
            let off = boundary_weight(t, r, total, &KernelSpec::new(KernelFamily::Epanechnikov, h, false).unwrap()).unwrap();
            prop_assert_eq!(on == 0.0, off == 0.0);
            prop_assert!(on >= off);
        }

        #[test]
        fn reversal_symmetry(total in 10usize..120, h in 0.02f64..0.6, r in 1usize..120, t in 1usize..120) {
            prop_assume!(r <= total && t <= total);
            let s = epa(h);
            let a = boundary_weight(t, r, total, &s).unwrap();
            let b = boundary_weight(total + 1 - t, total + 1 - r, total, &s).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
