use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("sinkhorn did not converge after {iterations} iterations (marginal violation {violation:e})")]
    Convergence { iterations: usize, violation: f64 },

    #[error("non-finite state encountered at integration step {step}")]
    NonFinite { step: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("all responsibilities underflowed at t = {t}; query points inside the coupling support")]
    DensityUnderflow { t: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            got,
        })
    }
}
