//! The learning-method abstraction the protocols drive.

use thiserror::Error;

use crate::metrics::Labels;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("cannot train on an empty training set")]
    EmptyTrainingSet,
    #[error("unsupported task: {0}")]
    Unsupported(String),
    #[error("invalid hyper-parameter: {0}")]
    InvalidParam(String),
    #[error("feature arity mismatch: model has {expected}, input has {got}")]
    Arity { expected: usize, got: usize },
    #[error("training failed: {0}")]
    Failed(String),
}

/// A set of configurations over one dataset.
///
/// `fit(j, rows)` is the closure of the learning method grounded at
/// configuration `j`, applied to the samples `rows`; every call is one model
/// training. Implementations must be deterministic.
pub trait Pipeline: Sync {
    type Model: Send + Sync;

    fn labels(&self) -> &Labels;

    fn config_ids(&self) -> Vec<String>;

    fn fit(&self, config: usize, rows: &[usize]) -> Result<Self::Model, LearnerError>;

    fn predict(&self, model: &Self::Model, rows: &[usize]) -> Result<Vec<f64>, LearnerError>;

    fn n_samples(&self) -> usize {
        self.labels().len()
    }

    fn n_configs(&self) -> usize {
        self.config_ids().len()
    }
}
