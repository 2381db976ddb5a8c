use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:e} below -{clip_tol:e})")]
    NotPsd { eigenvalue: f64, clip_tol: f64 },

    #[error("knockoff construction failed: {0}")]
    Construction(String),

    #[error("no extension needed: n = {n} already satisfies n >= (d+1)p = {required}")]
    NoExtensionNeeded { n: usize, required: usize },

    #[error("cannot estimate sigma: need n > p (n = {n}, p = {p})")]
    CannotEstimateSigma { n: usize, p: usize },

    #[error("degenerate lambda grid: response is orthogonal to every column")]
    DegenerateGrid,

    #[error("coordinate descent did not converge at lambda index {lambda_index} after {sweeps} sweeps")]
    NonConvergence { lambda_index: usize, sweeps: usize },
}

impl Error {
    /// True for failures of the numerical kernels, as opposed to bad arguments.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPsd { .. } | Error::Construction(_) | Error::DegenerateGrid
        )
    }
}
