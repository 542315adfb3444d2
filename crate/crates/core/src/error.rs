use thiserror::Error;

/// Errors raised by the library.
///
/// Numerical non-convergence of the fixed-point iteration is deliberately
/// not an error: it is reported through [`crate::solver::SolveReport`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("domain error in {function}: argument {value} {detail}")]
    Domain {
        function: &'static str,
        value: f64,
        detail: &'static str,
    },

    #[error("domain error at state {state}: {message}")]
    StateDomain { state: usize, message: String },

    #[error("non-finite quantity: {0}")]
    NonFinite(String),

    #[error("fixed-point iteration from the {start} start did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        start: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("bisection bracket [{lo}, {hi}] does not cross the target {target}: values {value_lo} and {value_hi}")]
    Bracket {
        lo: f64,
        hi: f64,
        value_lo: f64,
        value_hi: f64,
        target: f64,
    },

    #[error("value is not strictly increasing in the constant payment on the bracket")]
    NotMonotone,

    #[error("panel data failed validation ({} problem(s)); first: {}", .0.len(), .0.first().map(|p| p.to_string()).unwrap_or_default())]
    InvalidPanel(Vec<RowProblem>),

    #[error("transition estimation: {0}")]
    Transition(String),

    #[error("likelihood ratio statistic {statistic} is negative beyond slack; the restricted fit beats the unrestricted one")]
    InconsistentFits { statistic: f64 },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One rejected row of a panel dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RowProblem {
    /// Zero-based data row (header excluded).
    pub row: usize,
    pub message: String,
}

impl std::fmt::Display for RowProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}: {}", self.row, self.message)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.into(),
        message: message.into(),
    }
}
