use std::path::{Path, PathBuf};

use thiserror::Error;

use endorse_abstractor::ModelError;
use endorse_core::{CorpusError, EmbeddingError, EndorsementError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing artifact {0}; run the earlier stage first")]
    MissingArtifact(PathBuf),
    #[error("{path}: unexpected artifact ({reason})")]
    Artifact { path: PathBuf, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("cluster {cluster}: {source}")]
    Endorsement {
        cluster: String,
        #[source]
        source: EndorsementError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no cluster has a reference summary to train on")]
    NoTrainingData,
    #[error("regression thresholds violated: {}", .0.join("; "))]
    Regression(Vec<String>),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
