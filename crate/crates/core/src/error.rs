use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library. Variants are grouped by the module
/// that produces them so CLI messages can be tagged with their origin.
#[derive(Debug, Error)]
pub enum Error {
    #[error("[kgdata] {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("[kgdata] {0}")]
    Data(String),

    #[error("[diff] shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("[diff] zero-norm embedding")]
    ZeroNorm,

    #[error("[diff] non-finite gradient")]
    NonFiniteGradient,

    #[error("[diff] {0}")]
    Diff(String),

    #[error("[completion] {0}")]
    Sampling(String),

    #[error("[alignment] {0}")]
    Alignment(String),

    #[error("[entr] degenerate pre-training entropy")]
    DegenerateEntropy,

    #[error("[train] {0}")]
    Train(String),

    #[error("[train] invalid config: {0}")]
    Config(String),

    #[error("[eval] {0}")]
    Eval(String),

    #[error("[synth] {0}")]
    Synth(String),

    #[error("checkpoint/data mismatch")]
    CheckpointMismatch,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
