use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    /// Command run out of order for the state file.
    #[error("lifecycle: {0}")]
    Lifecycle(String),

    /// State file edited after the fact or from another design.
    #[error("state integrity: {0}")]
    Integrity(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        source: gmcp_core::Error,
    },

    #[error(transparent)]
    Sim(#[from] gmcp_sim::SimError),
}

impl From<gmcp_core::Error> for CliError {
    fn from(source: gmcp_core::Error) -> Self {
        CliError::Core {
            context: "computation failed".into(),
            source,
        }
    }
}

impl CliError {
    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        let numerical = match self {
            CliError::Core { source, .. } => source.is_numerical(),
            CliError::Sim(gmcp_sim::SimError::Core(e)) => e.is_numerical(),
            _ => false,
        };
        if numerical {
            2
        } else {
            1
        }
    }
}

pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, gmcp_core::Error> {
    fn context(self, what: impl Into<String>) -> Result<T> {
        self.map_err(|source| CliError::Core {
            context: what.into(),
            source,
        })
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_exit_with_two() {
        let numerical = CliError::from(gmcp_core::Error::Numerical("no convergence".into()));
        assert_eq!(numerical.exit_code(), 2);
        let sim = CliError::Sim(gmcp_sim::SimError::Core(gmcp_core::Error::NotPositiveSemiDefinite));
        assert_eq!(sim.exit_code(), 2);
        let bad = CliError::from(gmcp_core::Error::InvalidGraph("weights".into()));
        assert_eq!(bad.exit_code(), 1);
        assert_eq!(CliError::Lifecycle("x".into()).exit_code(), 1);
    }
}
