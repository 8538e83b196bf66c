use std::io;

/// Every failure the library can report.
///
/// Variants map one-to-one onto CLI exit codes through [`Error::exit_code`].
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("chain is not mixing: {0}")]
    NonMixing(String),
    #[error("perturbation budget is zero (ergodicity coefficient {0})")]
    ZeroBudget(f64),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("epsilon {eps} is infeasible: M + eps*P has an entry of {min_entry}")]
    InfeasibleEpsilon { eps: f64, min_entry: f64 },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("mask is not symmetric at ({0}, {1})")]
    AsymmetricMask(usize, usize),
    #[error("objective gradient vanishes on the feasible set")]
    DegenerateObjective,
    #[error("feasible perturbation space is empty")]
    EmptyFeasibleSpace,
    #[error("multiplier system is rank deficient beyond the constant gauge ({0} components)")]
    SingularMultiplierSystem(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("coefficients are orthogonal to the feasible space")]
    ZeroProjection,
    #[error("invalid parameter: {0}")]
    ParameterError(String),
    #[error("no boxes retained by the estimator")]
    EmptyEstimate,
    #[error("state left the guard region at step {step}")]
    NumericalBlowup { step: usize },
    #[error("log series diverges: spectral radius of M - I is {0:.4}")]
    SeriesDivergence(f64),
    #[error("eigenvalue {re} + {im}i lies on the negative real axis")]
    ComplexLogBranch { re: f64, im: f64 },
    #[error("unknown observable `{0}`")]
    UnknownObservable(String),
    #[error("profile grids do not match")]
    GridMismatch,
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("linear algebra backend: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ParameterError(_) | Error::Parse(_) | Error::LengthMismatch { .. } => 2,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
            Error::EmptyEstimate => 4,
            Error::NonMixing(_) | Error::ZeroBudget(_) | Error::SingularSystem(_) => 5,
            Error::InfeasibleEpsilon { .. } => 6,
            Error::DegenerateObjective
            | Error::EmptyFeasibleSpace
            | Error::SingularMultiplierSystem(_)
            | Error::ZeroProjection => 7,
            Error::SeriesDivergence(_) | Error::ComplexLogBranch { .. } => 8,
            Error::NumericalBlowup { .. } => 9,
            _ => 10,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
