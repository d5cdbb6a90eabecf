use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {matrix} at row {row}, column {col}")]
    NonFiniteValue {
        matrix: &'static str,
        row: usize,
        col: usize,
    },

    #[error("too few rows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("fraction {0} is not in the open interval (0, 1)")]
    BadFraction(f64),

    #[error("column {0} is empty")]
    EmptyColumn(usize),

    #[error("feature {0} has zero sample variance")]
    ZeroVariance(usize),

    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("break grid for feature {0} is empty")]
    EmptyGrid(usize),

    #[error("variance estimate is zero for feature {feature} at break {brk}; the statistic is undefined")]
    DegenerateVariance { feature: usize, brk: f64 },

    #[error("non-finite statistic {0}")]
    NonFinite(f64),

    #[error("FDR level {0} is not in (0, 1]")]
    BadLevel(f64),

    #[error("autocorrelation {0} must satisfy |rho| < 1")]
    BadRho(f64),

    #[error("Cholesky factorization failed")]
    CholeskyFailure,

    #[error("row has {got} entries but the model needs {needed}")]
    ShortRow { needed: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset has no knockoff columns")]
    MissingKnockoffs,

    #[error("feature index {index} out of range for p = {p}")]
    FeatureOutOfRange { index: usize, p: usize },

    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
