//! File formats: prediction matrices, datasets, grids and reports.

mod dataset;
mod matrix;
mod report;

use thiserror::Error;

use crate::learners::GridError;
use crate::pipeline::LearnerError;
use crate::store::StoreError;

pub use dataset::{read_dataset, DatasetOptions};
pub use matrix::{parse_prediction_matrix, read_prediction_matrix, write_prediction_matrix, PredictionMatrix, MISSING};
pub use report::{from_json, to_json, ReportDocument, StudyDocument, TOOL_NAME};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

/// Reads and expands a grid specification file.
pub fn read_grid(path: &std::path::Path) -> Result<crate::learners::ConfigGrid, IoError> {
    let spec = crate::learners::GridSpec::from_json(&read_file(path)?)?;
    Ok(crate::learners::expand_grid(&spec)?)
}
