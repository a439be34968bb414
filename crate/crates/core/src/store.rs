//! The pooled out-of-sample prediction tensor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{LabelView, Labels, Metric, MetricError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("store needs at least one configuration")]
    NoConfigs,
    #[error("store needs at least one repeat")]
    NoRepeats,
    #[error("fold bookkeeping has {got} entries, expected {expected}")]
    FoldShape { got: usize, expected: usize },
    #[error("fold id {fold} out of range for {k} folds")]
    FoldOutOfRange { fold: usize, k: usize },
    #[error("prediction for sample {sample}, configuration {config}, repeat {repeat} is not finite")]
    NonFinite {
        sample: usize,
        config: usize,
        repeat: usize,
    },
    #[error("duplicate configuration id '{0}'")]
    DuplicateConfig(String),
}

/// `N × C × R` out-of-sample predictions with a presence mask.
///
/// Cell `(i, j, r)` is the prediction of configuration `j` for sample `i`
/// made in repeat `r` by the model that held out `i`'s fold. Absent cells
/// come from folds that were never run (incomplete CV) or from dropped and
/// failed configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionStore {
    labels: Labels,
    config_ids: Vec<String>,
    repeats: usize,
    folds: usize,
    /// `[r * n + i]`, 0-based fold ids.
    fold_of: Vec<usize>,
    /// `[(j * repeats + r) * n + i]`
    values: Vec<f64>,
    present: Vec<bool>,
}

impl PredictionStore {
    /// An empty store (all cells absent).
    pub fn new(
        labels: Labels,
        config_ids: Vec<String>,
        repeats: usize,
        folds: usize,
        fold_of: Vec<usize>,
    ) -> Result<Self, StoreError> {
        if config_ids.is_empty() {
            return Err(StoreError::NoConfigs);
        }
        if repeats == 0 {
            return Err(StoreError::NoRepeats);
        }
        let n = labels.len();
        if fold_of.len() != n * repeats {
            return Err(StoreError::FoldShape {
                got: fold_of.len(),
                expected: n * repeats,
            });
        }
        if let Some(&fold) = fold_of.iter().find(|&&f| f >= folds) {
            return Err(StoreError::FoldOutOfRange { fold, k: folds });
        }
        let mut seen = std::collections::HashSet::new();
        for id in &config_ids {
            if !seen.insert(id.as_str()) {
                return Err(StoreError::DuplicateConfig(id.clone()));
            }
        }
        let cells = n * config_ids.len() * repeats;
        Ok(PredictionStore {
            labels,
            config_ids,
            repeats,
            folds,
            fold_of,
            values: vec![0.0; cells],
            present: vec![false; cells],
        })
    }

    /// A complete single-repeat store from per-configuration columns.
    pub fn from_columns(
        labels: Labels,
        config_ids: Vec<String>,
        folds: usize,
        fold_of: Vec<usize>,
        columns: &[Vec<f64>],
    ) -> Result<Self, StoreError> {
        let mut store = Self::new(labels, config_ids, 1, folds, fold_of)?;
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                store.set(i, j, 0, v)?;
            }
        }
        Ok(store)
    }

    #[inline]
    fn cell(&self, sample: usize, config: usize, repeat: usize) -> usize {
        (config * self.repeats + repeat) * self.labels.len() + sample
    }

    pub fn set(&mut self, sample: usize, config: usize, repeat: usize, value: f64) -> Result<(), StoreError> {
        if !value.is_finite() {
            return Err(StoreError::NonFinite { sample, config, repeat });
        }
        let c = self.cell(sample, config, repeat);
        self.values[c] = value;
        self.present[c] = true;
        Ok(())
    }

    pub fn clear(&mut self, sample: usize, config: usize, repeat: usize) {
        let c = self.cell(sample, config, repeat);
        self.values[c] = 0.0;
        self.present[c] = false;
    }

    pub fn get(&self, sample: usize, config: usize, repeat: usize) -> Option<f64> {
        let c = self.cell(sample, config, repeat);
        self.present[c].then(|| self.values[c])
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_configs(&self) -> usize {
        self.config_ids.len()
    }

    pub fn n_repeats(&self) -> usize {
        self.repeats
    }

    pub fn n_folds(&self) -> usize {
        self.folds
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn config_ids(&self) -> &[String] {
        &self.config_ids
    }

    pub fn fold_of(&self, sample: usize, repeat: usize) -> usize {
        self.fold_of[repeat * self.labels.len() + sample]
    }

    /// Predictions of one configuration in one repeat (absent cells read 0).
    pub fn column(&self, config: usize, repeat: usize) -> &[f64] {
        let start = self.cell(0, config, repeat);
        &self.values[start..start + self.labels.len()]
    }

    pub fn column_mask(&self, config: usize, repeat: usize) -> &[bool] {
        let start = self.cell(0, config, repeat);
        &self.present[start..start + self.labels.len()]
    }

    pub fn is_complete(&self) -> bool {
        self.present.iter().all(|&p| p)
    }

    pub fn column_complete(&self, config: usize) -> bool {
        (0..self.repeats).all(|r| self.column_mask(config, r).iter().all(|&p| p))
    }

    /// Number of present cells of `config` over `rows` and all repeats.
    pub fn present_count(&self, config: usize, rows: &[usize]) -> usize {
        (0..self.repeats)
            .map(|r| {
                let mask = self.column_mask(config, r);
                rows.iter().filter(|&&i| mask[i]).count()
            })
            .sum()
    }

    /// Copy of this store keeping only `repeat`.
    pub fn single_repeat(&self, repeat: usize) -> PredictionStore {
        let n = self.labels.len();
        let mut out = PredictionStore {
            labels: self.labels.clone(),
            config_ids: self.config_ids.clone(),
            repeats: 1,
            folds: self.folds,
            fold_of: self.fold_of[repeat * n..(repeat + 1) * n].to_vec(),
            values: Vec::with_capacity(n * self.n_configs()),
            present: Vec::with_capacity(n * self.n_configs()),
        };
        for j in 0..self.n_configs() {
            out.values.extend_from_slice(self.column(j, repeat));
            out.present.extend_from_slice(self.column_mask(j, repeat));
        }
        out
    }

    /// Stacks stores that share labels and configurations as repeats.
    pub fn stack_repeats(stores: &[PredictionStore]) -> Result<PredictionStore, StoreError> {
        let first = stores.first().ok_or(StoreError::NoRepeats)?;
        let n = first.n_samples();
        let c = first.n_configs();
        let repeats: usize = stores.iter().map(|s| s.repeats).sum();
        let mut fold_of = Vec::with_capacity(n * repeats);
        for s in stores {
            fold_of.extend_from_slice(&s.fold_of);
        }
        let folds = stores.iter().map(|s| s.folds).max().unwrap_or(0);
        let mut out = PredictionStore::new(first.labels.clone(), first.config_ids.clone(), repeats, folds, fold_of)?;
        for j in 0..c {
            let mut r_out = 0;
            for s in stores {
                for r in 0..s.repeats {
                    let mask = s.column_mask(j, r);
                    let col = s.column(j, r);
                    for i in 0..n {
                        if mask[i] {
                            out.set(i, j, r_out, col[i])?;
                        }
                    }
                    r_out += 1;
                }
            }
        }
        Ok(out)
    }
}

/// Sample-level weights: how many times each sample enters a computation.
///
/// The same weight applies to every repeat of a sample, which is what keeps
/// repeated predictions of one instance together under resampling.
#[derive(Clone, Debug, PartialEq)]
pub struct RowWeights {
    weights: Vec<f64>,
    total: f64,
}

impl RowWeights {
    pub fn from_rows(n: usize, rows: &[usize]) -> Self {
        let mut weights = vec![0.0; n];
        for &i in rows {
            weights[i] += 1.0;
        }
        RowWeights {
            total: rows.len() as f64,
            weights,
        }
    }

    pub fn from_counts(counts: &[u32]) -> Self {
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        RowWeights {
            total: weights.iter().sum(),
            weights,
        }
    }

    pub fn all(n: usize) -> Self {
        RowWeights {
            weights: vec![1.0; n],
            total: n as f64,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Rows with non-zero weight, each repeated by its weight, ascending.
    pub fn expand(&self) -> Vec<usize> {
        let mut rows = Vec::new();
        for (i, &w) in self.weights.iter().enumerate() {
            for _ in 0..(w as usize) {
                rows.push(i);
            }
        }
        rows
    }
}

/// Loss evaluator over a store for one metric.
///
/// Pointwise metrics are precomputed into per-cell losses so that a weighted
/// pooled loss is a dot product; ranking metrics gather the weighted cells and
/// evaluate the metric on them.
pub struct Scorer<'a> {
    store: &'a PredictionStore,
    metric: Metric,
    /// Per-cell loss, 0 where absent; same layout as the store.
    cell_loss: Option<Vec<f64>>,
    /// 1.0 where present, 0.0 where absent.
    presence: Vec<f64>,
    complete: Vec<bool>,
}

impl<'a> Scorer<'a> {
    pub fn new(store: &'a PredictionStore, metric: Metric) -> Self {
        let n = store.n_samples();
        let cell_loss = metric.is_pointwise().then(|| {
            let y = store.labels.values();
            store
                .values
                .iter()
                .zip(&store.present)
                .enumerate()
                .map(|(c, (&v, &p))| {
                    if p {
                        metric.pointwise_loss(y[c % n], v).unwrap_or(0.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        });
        let presence = store.present.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
        let complete = (0..store.n_configs()).map(|j| store.column_complete(j)).collect();
        Scorer {
            store,
            metric,
            cell_loss,
            presence,
            complete,
        }
    }

    pub fn store(&self) -> &PredictionStore {
        self.store
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Pooled loss of `config` over the weighted rows and all repeats.
    ///
    /// Returns `Ok(None)` when fewer than `metric.min_samples()` weighted
    /// cells are present.
    pub fn pooled_loss(&self, config: usize, rows: &RowWeights) -> Result<Option<f64>, MetricError> {
        let n = self.store.n_samples();
        let repeats = self.store.repeats;
        match &self.cell_loss {
            Some(losses) => {
                let mut sum = 0.0;
                let mut count = 0.0;
                for r in 0..repeats {
                    let start = (config * repeats + r) * n;
                    sum += dot(rows.weights(), &losses[start..start + n]);
                    count += if self.complete[config] {
                        rows.total()
                    } else {
                        dot(rows.weights(), &self.presence[start..start + n])
                    };
                }
                if count < self.metric.min_samples() as f64 {
                    return Ok(None);
                }
                Ok(Some(sum / count))
            }
            None => {
                let (labels, preds) = self.gather(config, rows, |_, _| true);
                if preds.len() < self.metric.min_samples() {
                    return Ok(None);
                }
                let view = LabelView {
                    values: &labels.0,
                    events: labels.1.as_deref(),
                };
                self.metric.loss(view, &preds).map(Some)
            }
        }
    }

    /// Pooled loss restricted to cells whose (sample, repeat) satisfies `keep`.
    pub(crate) fn filtered_loss<F>(&self, config: usize, rows: &RowWeights, keep: F) -> Result<Option<f64>, MetricError>
    where
        F: Fn(usize, usize) -> bool,
    {
        let (labels, preds) = self.gather(config, rows, keep);
        if preds.len() < self.metric.min_samples() {
            return Ok(None);
        }
        let view = LabelView {
            values: &labels.0,
            events: labels.1.as_deref(),
        };
        self.metric.loss(view, &preds).map(Some)
    }

    /// Sample indices, with multiplicity, of the repeat-`repeat` cells of
    /// `config` that a pooled loss over `rows` reads.
    pub fn weighted_cells(&self, config: usize, rows: &RowWeights, repeat: usize) -> Vec<usize> {
        let mask = self.store.column_mask(config, repeat);
        let mut out = Vec::new();
        for (i, &w) in rows.weights().iter().enumerate() {
            if mask[i] {
                out.extend(std::iter::repeat_n(i, w as usize));
            }
        }
        out
    }

    #[allow(clippy::type_complexity)]
    fn gather<F>(&self, config: usize, rows: &RowWeights, keep: F) -> ((Vec<f64>, Option<Vec<bool>>), Vec<f64>)
    where
        F: Fn(usize, usize) -> bool,
    {
        let store = self.store;
        let y = store.labels.values();
        let events = store.labels.events();
        let mut ys = Vec::new();
        let mut es = events.map(|_| Vec::new());
        let mut preds = Vec::new();
        for r in 0..store.repeats {
            let col = store.column(config, r);
            let mask = store.column_mask(config, r);
            for (i, &w) in rows.weights().iter().enumerate() {
                if w == 0.0 || !mask[i] || !keep(i, r) {
                    continue;
                }
                for _ in 0..(w as usize) {
                    ys.push(y[i]);
                    if let (Some(es), Some(ev)) = (es.as_mut(), events) {
                        es.push(ev[i]);
                    }
                    preds.push(col[i]);
                }
            }
        }
        ((ys, es), preds)
    }
}

/// Dot product with a fixed 8-way accumulation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}
