use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One attempt made by a retrying client, kept for error reports.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Attempt {
    pub attempt: u32,
    pub outcome: String,
    pub waited_ms: u64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("training error: {0}")]
    Training(String),

    /// A backend call failed after all retries. `ids` carries the ids of the
    /// records whose request failed, when the caller knows them.
    #[error("backend error: {message}")]
    Backend {
        message: String,
        ids: Vec<String>,
        attempts: Vec<Attempt>,
    },

    #[error("mock backend: prompt matches no known template")]
    UnknownPrompt,

    #[error("concept extraction failed for {doc_id}: {msg}")]
    Extraction {
        doc_id: String,
        msg: String,
        raw: String,
    },

    #[error("concept parse error: {0}")]
    ConceptParse(String),

    #[error("question parse error: {0}")]
    QuestionParse(String),

    #[error("node {0:?} has no neighbours in the requested sub-graph")]
    NoNeighbors(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("target error {target} is unreachable: irreducible error is {floor}")]
    UnreachableTarget { target: f64, floor: f64 },

    #[error("target error {target} is above the curve's range (max {max})")]
    TargetOutOfRange { target: f64, max: f64 },

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    pub fn backend(message: impl Into<String>) -> Error {
        Error::Backend {
            message: message.into(),
            ids: Vec::new(),
            attempts: Vec::new(),
        }
    }
}
