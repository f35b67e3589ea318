use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("min-MLU solver did not converge after {phases} phases (upper {upper}, lower {lower})")]
    Convergence { phases: usize, upper: f64, lower: f64 },

    #[error("could not sample a connected variation after {attempts} attempts")]
    Sampling { attempts: usize },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }

    pub(crate) fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    /// True for errors caused by bad input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. } | Error::Validation(_) | Error::Config(_) | Error::Shape { .. } => true,
            Error::Json(e) => !e.is_io(),
            _ => false,
        }
    }
}
