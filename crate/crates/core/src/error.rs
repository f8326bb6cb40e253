use thiserror::Error;

/// Errors raised across the estimation and selection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Levy specification: {0}")]
    InvalidSpec(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate scale at observation {index}: S = {value:e} below guard {guard:e}")]
    DegenerateScale { index: usize, value: f64, guard: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("trajectory exploded at fine step {step}: |X| = {value:e}")]
    Explosion { step: usize, value: f64 },

    #[error("optimizer failed: no start produced a finite objective for {0}")]
    AllStartsFailed(String),

    #[error("singular matrix {name}: condition number {condition:e}{hint}")]
    Singular { name: String, condition: f64, hint: String },

    #[error("matrix {0} is not positive semidefinite")]
    NotPsd(String),

    #[error("unknown coefficient name {0:?}")]
    UnknownCoefficient(String),

    #[error("quadrature underflow: {0}")]
    QuadratureUnderflow(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("data error at line {line}: {message}")]
    Data { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the failure is numerical (as opposed to a data or usage problem).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateScale { .. }
                | Error::NonFinite(_)
                | Error::Explosion { .. }
                | Error::AllStartsFailed(_)
                | Error::Singular { .. }
                | Error::NotPsd(_)
                | Error::QuadratureUnderflow(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
