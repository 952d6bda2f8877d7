//! Univariate models for the common factor and its loading paths.

mod arima;
mod local_linear;
mod normal;
mod optim;

pub use arima::{
    difference, fit_arima, fit_arima_conditional, forecast_arima, grid_candidates, psi_weights, select_arima,
    ArimaGrid, ArimaModel, FactorForecast, ROOT_MARGIN, SELECTION_ROOT_MARGIN,
};
pub use local_linear::{
    default_validation, extrapolate_rows, local_linear_at, local_linear_extrapolate, select_lambda, LocalLinearSpec,
    DEFAULT_LAMBDA_FRACTIONS,
};
pub use normal::normal_quantile;
