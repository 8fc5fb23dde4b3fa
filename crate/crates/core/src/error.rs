use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    /// The integrated state left the finite range (|x| > 1e12 or NaN/inf).
    #[error("integration diverged after t = {last_time}")]
    Divergence { last_time: f64 },

    #[error("singular fit: {reason}")]
    SingularFit {
        reason: String,
        /// Null-space directions of the regressor, in (x, u) coordinates.
        deficient_directions: Vec<Vec<f64>>,
    },

    #[error("control coefficient is unidentifiable: recorded control is zero")]
    UnidentifiableControl,

    #[error("record does not cover the partition; uncovered knots: {uncovered:?}")]
    Coverage { uncovered: Vec<f64> },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("costate must be nonzero")]
    TrivialCostate,

    #[error("infeasible transfer: {0}")]
    InfeasibleTransfer(String),

    #[error("shooting did not converge (best terminal residual {best_residual:e})")]
    ShootingNonConvergence { best_residual: f64 },

    #[error("reference generation failed: {0}")]
    Generation(String),

    #[error("time rescaling requires f0 > 0; got {value} at sample {index} (t = {time})")]
    RescaleDomain { index: usize, time: f64, value: f64 },

    #[error("value {value} outside the domain [{lower}, {upper}]")]
    Domain { value: f64, lower: f64, upper: f64 },

    #[error("piece {index}: {source}")]
    Piece {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn at_piece(self, index: usize) -> Self {
        Error::Piece {
            index,
            source: Box::new(self),
        }
    }

    /// The innermost error, with piece annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Piece { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self.root(), Error::InfeasibleTransfer(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
