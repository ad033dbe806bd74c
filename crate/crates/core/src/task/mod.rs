//! Tabular task ingestion: dataset representation, task metadata and the
//! train/test split shared by every evaluation.

mod dataset;
mod spec;
mod split;

use std::path::PathBuf;

use thiserror::Error;

pub use dataset::{load_dataset, ColumnData, Dataset};
pub use spec::{ColumnKind, ColumnSpec, TaskSpec, TaskType};
pub use split::{make_split, split_rows, SplitPlan, TRAIN_FRACTION};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("malformed metadata {path}: {source}")]
    Metadata {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("metadata column `{0}` is not present in the CSV")]
    UnknownColumn(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("label column `{column}`: {reason}")]
    Label { column: String, reason: String },
    #[error("cannot split dataset: {0}")]
    Split(String),
}
