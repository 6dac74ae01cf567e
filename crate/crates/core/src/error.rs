use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCategory {
    Parse,
    Structural,
    Config,
    Assumption,
    Singularity,
    NonConvergence,
    Infeasible,
    Divergence,
    Unsupported,
    Breakdown,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("parse error in {field}: {reason}")]
    Parse { field: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("singular matrix{}: condition number {cond:.3e}", stage_suffix(*.stage))]
    Singular { stage: Option<usize>, cond: f64 },

    #[error("no convergence after {iters} iterations (last residual {residual:.3e})")]
    NonConvergence { iters: usize, residual: f64 },

    #[error("infeasible risk budget: {0}")]
    Infeasible(String),

    #[error("closed loop diverged at step {step}")]
    Divergence { step: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("exponential-cost recursion broke down at stage {stage} (theta = {theta})")]
    Breakdown { stage: usize, theta: f64 },

    #[error("index {index} out of range for schedule of length {len}")]
    OutOfRange { index: usize, len: usize },
}

fn stage_suffix(stage: Option<usize>) -> String {
    match stage {
        Some(t) => format!(" at stage {t}"),
        None => String::new(),
    }
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn parse(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Attach a stage index to a singularity error raised by a single step.
    pub fn at_stage(self, t: usize) -> Self {
        match self {
            Error::Singular { stage: None, cond } => Error::Singular {
                stage: Some(t),
                cond,
            },
            other => other,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Dimension(_) | Error::Invalid { .. } | Error::OutOfRange { .. } => {
                ErrorCategory::Structural
            }
            Error::Parse { .. } => ErrorCategory::Parse,
            Error::Config(_) => ErrorCategory::Config,
            Error::Assumption(_) => ErrorCategory::Assumption,
            Error::Singular { .. } => ErrorCategory::Singularity,
            Error::NonConvergence { .. } => ErrorCategory::NonConvergence,
            Error::Infeasible(_) => ErrorCategory::Infeasible,
            Error::Divergence { .. } => ErrorCategory::Divergence,
            Error::Unsupported(_) => ErrorCategory::Unsupported,
            Error::Breakdown { .. } => ErrorCategory::Breakdown,
        }
    }
}
