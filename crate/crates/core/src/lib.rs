//! Bootstrap bias-corrected cross-validation.
//!
//! Tuning a learner by cross-validation and reporting the winner's
//! cross-validated loss is optimistically biased. This crate implements the
//! bootstrap correction over pooled out-of-sample predictions (BBC), its
//! early-dropping variant (BCED) and the reference protocols it is compared
//! against (CV, CVT, NCV, TT), together with a synthetic bias study.

#[cfg(feature = "cli")]
pub mod cli;
pub mod io;
pub mod learners;
pub mod metrics;
mod par;
pub mod pipeline;
pub mod protocols;
pub mod resampling;
pub mod selection;
pub mod simulation;
pub mod store;

pub use metrics::{Labels, Metric, MetricError};
pub use pipeline::{LearnerError, Pipeline};
pub use protocols::{ProtocolError, ProtocolKind, ProtocolReport};
pub use resampling::{FoldPlan, SeedPlan};
pub use selection::SelectionMode;
pub use store::PredictionStore;
