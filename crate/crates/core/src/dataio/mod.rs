//! Dataset and grid-table formats, ingestion, and dev-set sampling.

mod dataset;
mod grid;
mod sample;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{Dataset, DatasetSummary, DeclaredCounts, Document, Manifest, QaPair, DATASET_FORMAT_VERSION};
pub use grid::{Completeness, GridCosts, GridKey, GridTable, GRID_FORMAT_VERSION};
pub use sample::{sample_dev, SamplePlan, SampleReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected dev or test)")),
        }
    }
}

/// Position of a problem inside an input file.
#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub path: String,
    pub line: Option<usize>,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}", self.path, line),
            None => f.write_str(&self.path),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{at}: {source}")]
    Io { at: Location, source: std::io::Error },
    #[error("{at}: schema violation: {message}")]
    Schema { at: Location, message: String },
    #[error("{at}: duplicate id `{id}`")]
    DuplicateId { at: Location, id: String },
    #[error("{at}: question `{qid}` references missing document `{doc_id}`")]
    DanglingReference { at: Location, qid: String, doc_id: String },
    #[error("{at}: unsupported format version {found} (expected {expected})")]
    Version { at: Location, found: u32, expected: u32 },
    #[error("grid table was built for space {found}, active space is {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("{at}: score {score} outside [0, 1]")]
    ScoreOutOfRange { at: Location, score: String },
    #[error("{at}: duplicate grid key ({key})")]
    DuplicateKey { at: Location, key: String },
    #[error("invalid sample plan: {0}")]
    InvalidPlan(String),
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io { at: Location { path: path.display().to_string(), line: None }, source }
    }

    pub(crate) fn schema(path: &std::path::Path, line: Option<usize>, message: impl Into<String>) -> Self {
        DataError::Schema { at: Location { path: path.display().to_string(), line }, message: message.into() }
    }
}
