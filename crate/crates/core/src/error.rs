use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("duplicate observation (i={i}, j={j}, t={t})")]
    DuplicateRow { i: usize, j: usize, t: usize },

    #[error("unbalanced panel: {0}")]
    UnbalancedPanel(String),

    #[error("structure violation: {0}")]
    StructureViolation(String),

    #[error("fixed effect level {level} of block {block} has no observations")]
    DegenerateLevel { block: String, level: usize },

    #[error("outcome {value} at row {row} is outside the support of the {family} family")]
    Support { family: String, row: usize, value: f64 },

    #[error("malformed input at row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("unsupported specification: {0}")]
    UnsupportedSpec(String),

    #[error("{stage} did not converge after {iterations} iterations (score {score:e})")]
    Convergence {
        stage: &'static str,
        iterations: usize,
        score: f64,
        /// Last coefficient iterate.
        beta: Vec<f64>,
    },

    #[error("perfect separation: level {level} of block {block} has constant outcomes")]
    Separation { block: String, level: usize },

    #[error("singular Hessian for the structural parameters (beta not identified)")]
    SingularHessian,

    #[error("dense oracle guard exceeded: n={n}, L={l}")]
    OracleTooLarge { n: usize, l: usize },

    #[error("W-hat is singular")]
    SingularW,

    #[error("degenerate group {group}: grouped sum of second derivatives is zero")]
    DegenerateGroup { group: String },

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),
}

/// Coarse failure classes, used by the command line front end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Validation,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Dimension(_)
            | Error::DuplicateRow { .. }
            | Error::UnbalancedPanel(_)
            | Error::StructureViolation(_)
            | Error::DegenerateLevel { .. }
            | Error::Support { .. }
            | Error::MalformedRow { .. }
            | Error::UnsupportedSpec(_)
            | Error::Io(_) => ErrorClass::Validation,
            Error::InvalidConfig(_) => ErrorClass::Usage,
            Error::Convergence { .. }
            | Error::Separation { .. }
            | Error::SingularHessian
            | Error::OracleTooLarge { .. }
            | Error::SingularW
            | Error::DegenerateGroup { .. }
            | Error::Simulation(_) => ErrorClass::Numerical,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
