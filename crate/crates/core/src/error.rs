use thiserror::Error;

/// Errors raised by the graph, numerics and testing engines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("hypothesis {0} has already been removed from the graph")]
    NodeAlreadyRemoved(usize),

    #[error("hypothesis index {index} out of range for {k} hypotheses")]
    IndexOutOfRange { index: usize, k: usize },

    #[error("closure over {k} hypotheses exceeds the maximum of {max}")]
    ClosureTooLarge { k: usize, max: usize },

    #[error("{name} must lie in {range}, got {value}")]
    OutOfRange {
        name: &'static str,
        range: &'static str,
        value: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),

    #[error("correlation matrix is not positive semi-definite")]
    NotPositiveSemiDefinite,

    #[error("no sign change on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    RootNotBracketed {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid index set: {0}")]
    InvalidSubset(String),

    #[error("missing {stage} p-value for hypothesis {index}")]
    MissingMarginal { stage: &'static str, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures of the numerical kernel (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RootNotBracketed { .. } | Error::Numerical(_) | Error::NotPositiveSemiDefinite
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::OutOfRange {
            name,
            range: "[0, 1]",
            value,
        })
    }
}
