use std::path::PathBuf;

use thiserror::Error;
use umaea_numcore::NumError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("no entity has an image; disable the visual modality for this dataset")]
    NoAvailableImages,
    #[error("requested R_img {requested} exceeds the maximum {max} available for {dataset}")]
    RateAboveAvailability {
        requested: f64,
        max: f64,
        dataset: String,
    },
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("non-finite {component} loss at stage {stage}, epoch {epoch}")]
    NonFiniteLoss {
        component: String,
        stage: String,
        epoch: usize,
    },
    #[error("stage {0} requires a completed stage-1 model")]
    MissingStage1(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
