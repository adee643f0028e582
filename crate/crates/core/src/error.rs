use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A half-maximum crossing is missing on at least one side of the peak.
    #[error("peak truncated: {0}")]
    PeakTruncated(String),

    #[error("inconsistent budget: measured efficiency {measured} exceeds the geometric bound {bound}")]
    InconsistentBudget { measured: f64, bound: f64 },

    /// The measured width is already below the predicted one.
    #[error("no blur needed: measured FWHM {measured:e} m is below predicted {predicted:e} m")]
    NoBlurNeeded { measured: f64, predicted: f64 },

    #[error("fit did not converge after {iterations} iterations (last p_quarter = {p_quarter:e} W, asymptote = {asymptote:e} /s)")]
    FitNotConverged {
        iterations: usize,
        p_quarter: f64,
        asymptote: f64,
    },

    #[error("singular normal matrix: {0}")]
    SingularNormalMatrix(String),

    #[error("every pixel of the scan failed to fit")]
    EmptyMap,

    #[error("malformed data at line {line}: {message}")]
    Data { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
