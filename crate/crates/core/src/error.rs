use thiserror::Error;

/// Errors raised by the raster, loss, level-set and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("coordinate ({x}, {y}) outside sampling domain {width}x{height}")]
    OutOfDomain {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("no foreground")]
    NoForeground,

    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("object below coarsening scale")]
    BelowCoarseningScale,

    #[error("training diverged at iteration {iteration}: total loss {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("malformed {format} data at byte {offset}: {message}")]
    Format {
        format: &'static str,
        offset: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
