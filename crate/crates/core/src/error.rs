use thiserror::Error;

/// Errors produced by the tomography engine.
#[derive(Debug, Error)]
pub enum QstError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error(
        "{what} needs exact enumeration over {requested} units but the cap is {cap}; \
         use a sampling-based path or raise the cap"
    )]
    Capacity {
        what: &'static str,
        requested: usize,
        cap: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, QstError>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(QstError::Dimension {
            context,
            expected,
            got,
        })
    }
}
