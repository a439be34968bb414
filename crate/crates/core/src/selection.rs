//! Configuration selection over pooled out-of-sample predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Metric, MetricError};
use crate::store::{PredictionStore, RowWeights, Scorer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("no rows to select on")]
    NoRows,
    #[error("no alive configuration has enough predictions on the selected rows")]
    NoEligibleConfig,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// How a configuration's loss over a set of rows is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// One loss over all present predictions of the rows, pooled across folds
    /// and repeats.
    #[default]
    Pooled,
    /// Mean of the per-fold losses (one fold per repeat and fold id).
    FoldAveraged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionOutcome {
    pub best_index: usize,
    /// Loss per configuration; `None` for dropped configurations or those
    /// without enough present predictions.
    pub losses: Vec<Option<f64>>,
}

impl SelectionOutcome {
    pub fn best_loss(&self) -> f64 {
        self.losses[self.best_index].expect("winner has a loss")
    }
}

/// Minimum-average-loss selection on `rows` among `alive` configurations,
/// pooled mode. Ties go to the lowest configuration index.
pub fn css(
    store: &PredictionStore,
    rows: &[usize],
    alive: &[bool],
    metric: Metric,
) -> Result<SelectionOutcome, SelectionError> {
    if rows.is_empty() {
        return Err(SelectionError::NoRows);
    }
    let scorer = Scorer::new(store, metric);
    select(
        &scorer,
        &RowWeights::from_rows(store.n_samples(), rows),
        alive,
        SelectionMode::Pooled,
    )
}

/// Selection on weighted rows with an explicit mode.
pub fn select(
    scorer: &Scorer<'_>,
    rows: &RowWeights,
    alive: &[bool],
    mode: SelectionMode,
) -> Result<SelectionOutcome, SelectionError> {
    if rows.total() == 0.0 {
        return Err(SelectionError::NoRows);
    }
    let mut losses = Vec::with_capacity(alive.len());
    for (j, &is_alive) in alive.iter().enumerate() {
        losses.push(if is_alive {
            config_loss(scorer, j, rows, mode)?
        } else {
            None
        });
    }
    let best_index = argmin(&losses).ok_or(SelectionError::NoEligibleConfig)?;
    Ok(SelectionOutcome { best_index, losses })
}

pub fn config_loss(
    scorer: &Scorer<'_>,
    config: usize,
    rows: &RowWeights,
    mode: SelectionMode,
) -> Result<Option<f64>, MetricError> {
    match mode {
        SelectionMode::Pooled => scorer.pooled_loss(config, rows),
        SelectionMode::FoldAveraged => fold_averaged_loss(scorer, config, rows),
    }
}

/// Mean over (repeat, fold) groups of the group loss; groups without enough
/// present predictions are skipped.
pub fn fold_averaged_loss(scorer: &Scorer<'_>, config: usize, rows: &RowWeights) -> Result<Option<f64>, MetricError> {
    let store = scorer.store();
    let mut sum = 0.0;
    let mut groups = 0usize;
    for r in 0..store.n_repeats() {
        for k in 0..store.n_folds() {
            let loss = scorer.filtered_loss(config, rows, |i, rr| rr == r && store.fold_of(i, r) == k)?;
            if let Some(l) = loss {
                sum += l;
                groups += 1;
            }
        }
    }
    Ok((groups > 0).then(|| sum / groups as f64))
}

/// Index of the smallest value, lowest index on ties.
pub fn argmin(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            match best {
                Some((_, b)) if v >= b => {}
                _ => best = Some((j, v)),
            }
        }
    }
    best.map(|(j, _)| j)
}
