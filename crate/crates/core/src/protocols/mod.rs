//! Estimation protocols: CV, CVT, NCV, TT, BBC and BCED.
//!
//! Every protocol works in loss orientation internally and converts to the
//! metric's native orientation only when it fills a [`ProtocolReport`].

mod bbc;
mod bced;
mod count;
mod cv;
mod tt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Metric, MetricError};
use crate::pipeline::{LearnerError, Pipeline};
use crate::resampling::{FoldPlan, ResampleError};
use crate::selection::{SelectionError, SelectionMode};
use crate::store::{PredictionStore, StoreError};

pub use bbc::{bbc, bbc_traced, BbcResult, BbcSettings, BbcTrace};
pub use bced::{bced_on_store, run_bced, BcedOutcome, BcedSettings};
pub use count::count_models;
pub use cv::{run_cv, run_cvt, run_cvt_repeated, run_ncv};
pub use tt::{tt_correct, TtResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("configuration {config} failed on fold {fold}: {source}")]
    Learner {
        config: usize,
        fold: usize,
        source: LearnerError,
    },
    #[error("every configuration failed")]
    AllConfigsFailed,
    #[error("fold plan covers {plan} samples but the data has {data}")]
    PlanMismatch { plan: usize, data: usize },
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    Cv,
    Cvt,
    Ncv,
    Tt,
    Bbc,
    Bced,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Cv => "cv",
            ProtocolKind::Cvt => "cvt",
            ProtocolKind::Ncv => "ncv",
            ProtocolKind::Tt => "tt",
            ProtocolKind::Bbc => "bbc",
            ProtocolKind::Bced => "bced",
        }
    }
}

impl std::fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One configuration dropped by the early-dropping test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropEvent {
    /// 1-based fold after which the test ran.
    pub fold: usize,
    pub config: usize,
    pub config_id: String,
    pub p_hat: f64,
}

/// A configuration excluded because its learner failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedConfig {
    pub config: usize,
    pub config_id: String,
    pub fold: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub protocol: ProtocolKind,
    pub metric: Metric,
    pub selection_mode: SelectionMode,
    /// Performance estimate in the metric's native orientation.
    pub estimate: f64,
    /// The same estimate as a loss.
    pub loss: f64,
    /// Percentile interval, native orientation, `lb <= ub`.
    pub ci: Option<[f64; 2]>,
    pub selected_config: usize,
    pub selected_config_id: String,
    pub models_trained: u64,
    /// `L_b` per bootstrap iteration, loss orientation.
    pub per_bootstrap_losses: Option<Vec<f64>>,
    pub drop_trace: Option<Vec<DropEvent>>,
    pub failed_configs: Vec<FailedConfig>,
    /// Uncorrected estimate of the selected configuration (native).
    pub cvt_estimate: Option<f64>,
    /// Additive bias estimate, loss orientation.
    pub tt_bias: Option<f64>,
}

impl ProtocolReport {
    pub(crate) fn new(
        protocol: ProtocolKind,
        metric: Metric,
        selection_mode: SelectionMode,
        loss: f64,
        selected_config: usize,
        selected_config_id: String,
    ) -> Self {
        ProtocolReport {
            protocol,
            metric,
            selection_mode,
            estimate: metric.from_loss(loss),
            loss,
            ci: None,
            selected_config,
            selected_config_id,
            models_trained: 0,
            per_bootstrap_losses: None,
            drop_trace: None,
            failed_configs: Vec::new(),
            cvt_estimate: None,
            tt_bias: None,
        }
    }

    pub(crate) fn with_loss_ci(mut self, lb: f64, ub: f64) -> Self {
        let (a, b) = (self.metric.from_loss(lb), self.metric.from_loss(ub));
        self.ci = Some([a.min(b), a.max(b)]);
        self
    }
}

/// A protocol result plus the final model and, where one exists, the pooled
/// out-of-sample predictions.
pub struct ProtocolRun<M> {
    pub report: ProtocolReport,
    pub model: M,
    pub store: Option<PredictionStore>,
}

impl<M> std::fmt::Debug for ProtocolRun<M> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProtocolRun")
            .field("report", &self.report)
            .field("store", &self.store.as_ref().map(|s| s.n_samples()))
            .finish_non_exhaustive()
    }
}

pub(crate) fn check_plan<P: Pipeline>(pipeline: &P, plan: &FoldPlan) -> Result<(), ProtocolError> {
    if plan.n_samples() != pipeline.n_samples() {
        return Err(ProtocolError::PlanMismatch {
            plan: plan.n_samples(),
            data: pipeline.n_samples(),
        });
    }
    Ok(())
}
