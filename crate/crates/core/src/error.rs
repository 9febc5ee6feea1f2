use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{what}: expected {expected} channels, got {actual}")]
    ChannelMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        what: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}")]
    Precondition(String),

    #[error("failed to load weights from {path}: {reason}")]
    WeightLoad { path: PathBuf, reason: String },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("non-finite loss {loss} at iteration {iteration} (samples: {ids:?})")]
    NonFiniteLoss {
        loss: f64,
        iteration: usize,
        ids: Vec<String>,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    SafeTensors(#[from] safetensors::SafeTensorError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(what: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            what,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
