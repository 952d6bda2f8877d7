use thiserror::Error;

/// Errors raised by the estimation, forecasting and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("structure error: {0}")]
    Structure(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("incomplete grid, missing cells (year, age): {holes:?}")]
    Incomplete { holes: Vec<(i32, u32)> },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate kernel window at r={r}: {positive} positive weights, need at least {required}")]
    DegenerateWindow {
        r: usize,
        positive: usize,
        required: usize,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("singular normal matrix at t={t}")]
    Rank { t: usize },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("singular local design at target {target}: window too narrow")]
    Window { target: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
