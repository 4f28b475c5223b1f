use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value violates a documented invariant.
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    /// An observation cannot have been produced by the saturation map.
    #[error("inconsistent observation y={y}: outside [{l}, {u}] but equal to neither L={lower} nor U={upper}")]
    InconsistentObservation {
        y: f64,
        l: f64,
        u: f64,
        lower: f64,
        upper: f64,
    },

    /// A matrix that must be symmetric positive definite is not (numerically).
    #[error("matrix conditioning: {0}")]
    Conditioning(String),

    /// An iterative solver stopped before meeting its tolerance.
    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NoConvergence { iterations: usize, gradient_norm: f64 },

    /// A failure attributed to one step of an observation stream.
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// A failure attributed to one Monte Carlo replication.
    #[error("replication {replication}: {source}")]
    AtReplication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    /// Too many replications failed for the experiment to be meaningful.
    #[error("{failed} of {total} replications failed (first: {first})")]
    Experiment {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("snapshot format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_replication(self, replication: usize) -> Self {
        Error::AtReplication {
            replication,
            source: Box::new(self),
        }
    }

    /// Coarse category used by the command-line front end to pick an exit code.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Invalid { .. } | Error::Config(_) => ErrorCategory::Config,
            Error::Io(_) | Error::Format(_) => ErrorCategory::Io,
            Error::AtStep { source, .. } | Error::AtReplication { source, .. } => {
                source.category()
            }
            Error::InconsistentObservation { .. }
            | Error::Conditioning(_)
            | Error::NoConvergence { .. }
            | Error::Experiment { .. } => ErrorCategory::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numeric,
    Io,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
