use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Values outside an operation's domain (e.g. labels not in {0,1}).
    #[error("{op}: {detail}")]
    Value { op: &'static str, detail: String },

    /// A computation produced NaN/Inf where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Malformed on-disk data (image, manifest, checkpoint, config).
    #[error("{path}: {detail}{}", offset.map(|o| format!(" (at byte {o})")).unwrap_or_default())]
    Format {
        path: String,
        detail: String,
        offset: Option<usize>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn value(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Value {
            op,
            detail: detail.into(),
        }
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>, offset: Option<usize>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
            offset,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
