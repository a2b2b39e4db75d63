use std::path::{Path, PathBuf};

use pemp_tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("empty {0} region")]
    EmptyRegion(&'static str),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),
    #[error("{stage} stage diverged at step {step} (episode class {class_id}, query image {query})")]
    Diverged {
        stage: &'static str,
        step: usize,
        class_id: usize,
        query: usize,
    },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("metrics: {0}")]
    Metrics(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
