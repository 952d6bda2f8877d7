//! Factor models of log mortality with time-invariant and time-varying
//! loadings, their forecasts, and a Monte Carlo harness comparing them.

pub mod dataio;
pub mod error;
pub mod export;
pub mod factor_classic;
pub mod factor_tv;
pub mod forecast;
pub mod kernels;
mod linalg;
pub mod sim;
pub mod timeseries;

use nalgebra::{DMatrix, DVector};

pub use error::{Error, Result};

/// A fitted model of the form `ln m = a_x + common component + error`.
pub trait FactorModel {
    fn a_x(&self) -> &DVector<f64>;

    /// `N x T` fitted common component (excluding `a_x`).
    fn common_component(&self) -> DMatrix<f64>;

    /// `N x T` fitted log rates.
    fn fitted(&self) -> DMatrix<f64> {
        let mut c = self.common_component();
        for mut col in c.column_iter_mut() {
            col += self.a_x();
        }
        c
    }
}

/// Mean squared in-sample residual of a fitted model on its panel.
pub fn mse_in_sample<F: FactorModel>(fit: &F, panel: &dataio::MortalityPanel) -> Result<f64> {
    let fitted = fit.fitted();
    let actual = panel.log_rates();
    if fitted.shape() != actual.shape() {
        return Err(Error::Argument(format!(
            "fit has shape {:?} but panel has shape {:?}",
            fitted.shape(),
            actual.shape()
        )));
    }
    Ok((actual - fitted).iter().map(|e| e * e).sum::<f64>() / actual.len() as f64)
}

/// Formats with 17 significant digits so output round-trips exactly.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}
