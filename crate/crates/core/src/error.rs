use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (pivot {pivot:e} at index {index})")]
    NotPsd { index: usize, pivot: f64 },

    #[error("matrix is singular (min pivot {min_pivot:e})")]
    Singular { min_pivot: f64 },

    #[error("knockoff feasibility 0 <= diag(s) <= 2*Sigma violated (most negative pivot {pivot:e} at index {index})")]
    Infeasible { index: usize, pivot: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("cannot debias: support size {support} is not below n = {n}")]
    SupportTooLarge { support: usize, n: usize },

    #[error("precision matrix does not have a forest pattern: {0}")]
    NotForest(String),

    #[error("degenerate sample correlation {r} between {i} and {j}")]
    DegenerateCorrelation { i: usize, j: usize, r: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for configuration and argument errors, as opposed to numerical
    /// failures.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => true,
            Error::Trial { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Trial { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
