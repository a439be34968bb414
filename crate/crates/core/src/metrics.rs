//! Loss and performance functions over prediction vectors.
//!
//! Every metric is exposed in its native orientation (AUC as AUC) and can be
//! folded into a loss with [`Metric::as_loss`], so that selection code only
//! ever minimizes.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("label and prediction lengths differ ({labels} vs {predictions})")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("empty input")]
    Empty,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("label {0} is not binary (expected 0 or 1)")]
    NonBinaryLabel(f64),
    #[error("metric needs event indicators (survival labels)")]
    MissingEvents,
    #[error("degenerate metric input: {0}")]
    Degenerate(&'static str),
}

/// Whether larger values of a metric are worse or better.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Loss,
    Gain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    ZeroOne,
    SquaredError,
    Auc,
    CIndex,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::ZeroOne, Metric::SquaredError, Metric::Auc, Metric::CIndex];

    pub fn orientation(self) -> Orientation {
        match self {
            Metric::ZeroOne | Metric::SquaredError => Orientation::Loss,
            Metric::Auc | Metric::CIndex => Orientation::Gain,
        }
    }

    /// Smallest number of predictions the metric can be computed on.
    pub fn min_samples(self) -> usize {
        match self {
            Metric::ZeroOne | Metric::SquaredError => 1,
            Metric::Auc | Metric::CIndex => 2,
        }
    }

    /// True when the metric is the mean of a per-sample loss.
    pub fn is_pointwise(self) -> bool {
        self.orientation() == Orientation::Loss
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::ZeroOne => "zero-one",
            Metric::SquaredError => "squared-error",
            Metric::Auc => "auc",
            Metric::CIndex => "c-index",
        }
    }

    pub fn as_loss(self, value: f64) -> f64 {
        match self.orientation() {
            Orientation::Loss => value,
            Orientation::Gain => 1.0 - value,
        }
    }

    /// Inverse of [`Metric::as_loss`].
    pub fn from_loss(self, loss: f64) -> f64 {
        self.as_loss(loss)
    }

    /// Per-sample loss for pointwise metrics; `None` for ranking metrics.
    pub fn pointwise_loss(self, label: f64, prediction: f64) -> Option<f64> {
        match self {
            Metric::ZeroOne => Some(if label == prediction { 0.0 } else { 1.0 }),
            Metric::SquaredError => {
                let d = label - prediction;
                Some(d * d)
            }
            Metric::Auc | Metric::CIndex => None,
        }
    }

    /// Evaluates the metric in its native orientation.
    pub fn evaluate(self, labels: LabelView<'_>, predictions: &[f64]) -> Result<f64, MetricError> {
        match self {
            Metric::ZeroOne => zero_one_loss(labels.values, predictions),
            Metric::SquaredError => squared_error(labels.values, predictions),
            Metric::Auc => auc(labels.values, predictions),
            Metric::CIndex => {
                let events = labels.events.ok_or(MetricError::MissingEvents)?;
                concordance_index(labels.values, events, predictions)
            }
        }
    }

    /// Evaluates the metric and converts it to loss orientation.
    pub fn loss(self, labels: LabelView<'_>, predictions: &[f64]) -> Result<f64, MetricError> {
        self.evaluate(labels, predictions).map(|v| self.as_loss(v))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zero-one" | "zero_one" | "01" => Ok(Metric::ZeroOne),
            "squared-error" | "squared_error" | "mse" => Ok(Metric::SquaredError),
            "auc" => Ok(Metric::Auc),
            "c-index" | "c_index" | "cindex" => Ok(Metric::CIndex),
            other => Err(format!("unknown metric '{other}'")),
        }
    }
}

/// Ground truth for a set of samples.
///
/// Survival labels store the observed time in `values` and the event
/// indicator in `events`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    values: Vec<f64>,
    events: Option<Vec<bool>>,
}

/// Borrowed labels, possibly a gathered subset.
#[derive(Clone, Copy, Debug)]
pub struct LabelView<'a> {
    pub values: &'a [f64],
    pub events: Option<&'a [bool]>,
}

impl<'a> LabelView<'a> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Labels {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricError> {
        check_labels(&values)?;
        Ok(Labels { values, events: None })
    }

    pub fn survival(times: Vec<f64>, events: Vec<bool>) -> Result<Self, MetricError> {
        check_labels(&times)?;
        if times.len() != events.len() {
            return Err(MetricError::LengthMismatch {
                labels: times.len(),
                predictions: events.len(),
            });
        }
        Ok(Labels {
            values: times,
            events: Some(events),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn events(&self) -> Option<&[bool]> {
        self.events.as_deref()
    }

    pub fn is_survival(&self) -> bool {
        self.events.is_some()
    }

    pub fn view(&self) -> LabelView<'_> {
        LabelView {
            values: &self.values,
            events: self.events.as_deref(),
        }
    }

    /// True when every label value is integral (class ids).
    pub fn is_discrete(&self) -> bool {
        !self.is_survival() && self.values.iter().all(|v| v.fract() == 0.0)
    }

    /// Gathers the labels at `rows` (repeats allowed).
    pub fn gather(&self, rows: &[usize]) -> Labels {
        Labels {
            values: rows.iter().map(|&i| self.values[i]).collect(),
            events: self.events.as_ref().map(|e| rows.iter().map(|&i| e[i]).collect()),
        }
    }

    /// Stratum of each sample: class id for discrete labels, event flag for
    /// survival labels, `None` for continuous labels.
    pub(crate) fn strata(&self) -> Option<Vec<i64>> {
        if let Some(events) = &self.events {
            return Some(events.iter().map(|&e| e as i64).collect());
        }
        if self.is_discrete() {
            return Some(self.values.iter().map(|&v| v as i64).collect());
        }
        None
    }
}

fn check_labels(values: &[f64]) -> Result<(), MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    Ok(())
}

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<(), MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::LengthMismatch {
            labels: y.len(),
            predictions: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(i) = y.iter().zip(yhat).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    Ok(())
}

/// Fraction of positions where the prediction differs from the label.
pub fn zero_one_loss(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check_pair(y, yhat)?;
    let wrong = y.iter().zip(yhat).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / y.len() as f64)
}

pub fn squared_error(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check_pair(y, yhat)?;
    let sum: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / y.len() as f64)
}

/// Rank-based (Mann-Whitney) area under the ROC curve; tied scores count ½.
///
/// Labels must be 0 or 1 with at least one of each.
pub fn auc(y: &[f64], scores: &[f64]) -> Result<f64, MetricError> {
    check_pair(y, scores)?;
    let mut positives = 0usize;
    for &label in y {
        if label == 1.0 {
            positives += 1;
        } else if label != 0.0 {
            return Err(MetricError::NonBinaryLabel(label));
        }
    }
    let negatives = y.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::Degenerate("auc needs both classes"));
    }

    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // Sum of 1-based mid-ranks of the positives, doubled to stay integral.
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let twice_mid_rank = (start + 1 + end) as u64;
        let tied_pos = order[start..end].iter().filter(|&&i| y[i] == 1.0).count() as u64;
        twice_rank_sum += tied_pos * twice_mid_rank;
        start = end;
    }
    let p = positives as u64;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// Harrell's concordance index.
///
/// A pair is comparable when the sample with the strictly earlier time had
/// an event; it is concordant when that sample received the higher risk
/// score. Tied risk scores count ½.
pub fn concordance_index(times: &[f64], events: &[bool], risk: &[f64]) -> Result<f64, MetricError> {
    check_pair(times, risk)?;
    if events.len() != times.len() {
        return Err(MetricError::LengthMismatch {
            labels: times.len(),
            predictions: events.len(),
        });
    }
    let mut comparable = 0u64;
    let mut twice_concordant = 0u64;
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        for j in 0..times.len() {
            if times[i] < times[j] {
                comparable += 1;
                twice_concordant += match risk[i].partial_cmp(&risk[j]) {
                    Some(Ordering::Greater) => 2,
                    Some(Ordering::Equal) => 1,
                    _ => 0,
                };
            }
        }
    }
    if comparable == 0 {
        return Err(MetricError::Degenerate("c-index has no comparable pairs"));
    }
    Ok(twice_concordant as f64 / (2.0 * comparable as f64))
}
