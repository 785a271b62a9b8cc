use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("SVD failed to converge on a {rows}x{cols} matrix")]
    Decomposition { rows: usize, cols: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("singular values {i} and {j} are within {tol:e} of each other")]
    Degenerate { i: usize, j: usize, tol: f64 },

    #[error("brute-force oracle needs {p} solver runs pairs, limit is {limit}")]
    SizeGuard { p: usize, limit: usize },

    #[error(
        "target relative error {target} is infeasible; the unobserved entries alone give {min_rel_error}"
    )]
    Calibration { target: f64, min_rel_error: f64 },

    #[error("no converged rows to select from")]
    Selection,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
