//! Small built-in learners and grid expansion.
//!
//! The learners exist to drive the protocols end to end with cheap,
//! deterministic and countable trainings; they make no attempt at
//! competitive accuracy.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::metrics::{Labels, Metric};
use crate::pipeline::{LearnerError, Pipeline};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    Majority,
    Knn,
    #[serde(alias = "logistic")]
    LinearLogistic,
    Stump,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Majority => "majority",
            LearnerKind::Knn => "knn",
            LearnerKind::LinearLogistic => "linear-logistic",
            LearnerKind::Stump => "stump",
        }
    }

    fn allowed_params(self) -> &'static [&'static str] {
        match self {
            LearnerKind::Majority => &[],
            LearnerKind::Knn => &["k", "distance"],
            LearnerKind::LinearLogistic => &["l2", "learning_rate", "iterations"],
            LearnerKind::Stump => &["min_leaf"],
        }
    }
}

impl FromStr for LearnerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "majority" => Ok(LearnerKind::Majority),
            "knn" => Ok(LearnerKind::Knn),
            "linear-logistic" | "logistic" => Ok(LearnerKind::LinearLogistic),
            "stump" => Ok(LearnerKind::Stump),
            other => Err(format!("unknown learner '{other}'")),
        }
    }
}

/// A hyper-parameter value.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl PartialEq for ParamValue {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ParamValue::Int(a), ParamValue::Int(b)) => a == b,
            (ParamValue::Float(a), ParamValue::Float(b)) => a.to_bits() == b.to_bits(),
            (ParamValue::Text(a), ParamValue::Text(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for ParamValue {}

impl Hash for ParamValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            ParamValue::Int(v) => (0u8, v).hash(state),
            ParamValue::Float(v) => (1u8, v.to_bits()).hash(state),
            ParamValue::Text(v) => (2u8, v).hash(state),
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v:?}"),
            ParamValue::Text(v) => f.write_str(v),
        }
    }
}

impl ParamValue {
    fn from_json(v: &Value) -> Result<Self, LearnerError> {
        match v {
            Value::Number(n) => Ok(match n.as_i64() {
                Some(i) => ParamValue::Int(i),
                None => ParamValue::Float(n.as_f64().unwrap_or(f64::NAN)),
            }),
            Value::String(s) => Ok(ParamValue::Text(s.clone())),
            other => Err(LearnerError::InvalidParam(format!("unsupported value {other}"))),
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Float(v) => Some(*v),
            ParamValue::Text(_) => None,
        }
    }
}

/// A learner plus its hyper-parameter values.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    pub learner: LearnerKind,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl Configuration {
    pub fn new(learner: LearnerKind) -> Self {
        Configuration {
            learner,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: ParamValue) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    /// Canonical identifier, e.g. `knn(distance=euclidean,k=3)`.
    pub fn id(&self) -> String {
        if self.params.is_empty() {
            return self.learner.name().to_string();
        }
        let params: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{}({})", self.learner.name(), params.join(","))
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        let allowed = self.learner.allowed_params();
        if let Some(name) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(LearnerError::InvalidParam(format!(
                "{} does not take '{name}'",
                self.learner.name()
            )));
        }
        match self.learner {
            LearnerKind::Majority => {}
            LearnerKind::Knn => {
                self.int_param("k", 1, 1)?;
                Distance::from_config(self)?;
            }
            LearnerKind::LinearLogistic => {
                LogisticSettings::from_config(self)?;
            }
            LearnerKind::Stump => {
                self.int_param("min_leaf", 1, 1)?;
            }
        }
        Ok(())
    }

    fn int_param(&self, name: &str, default: i64, min: i64) -> Result<usize, LearnerError> {
        match self.params.get(name) {
            None => Ok(default as usize),
            Some(ParamValue::Int(v)) if *v >= min => Ok(*v as usize),
            Some(other) => Err(LearnerError::InvalidParam(format!(
                "'{name}' must be an integer >= {min}, got {other}"
            ))),
        }
    }

    fn float_param(&self, name: &str, default: f64, valid: impl Fn(f64) -> bool) -> Result<f64, LearnerError> {
        match self.params.get(name) {
            None => Ok(default),
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() && valid(x) => Ok(x),
                _ => Err(LearnerError::InvalidParam(format!("'{name}' has invalid value {v}"))),
            },
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Ordered, duplicate-free list of configurations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigGrid {
    configurations: Vec<Configuration>,
}

impl ConfigGrid {
    pub fn new(configurations: Vec<Configuration>) -> Result<Self, GridError> {
        if configurations.is_empty() {
            return Err(GridError::Empty);
        }
        let mut seen = std::collections::HashSet::new();
        for c in &configurations {
            c.validate().map_err(|e| GridError::Invalid(c.id(), e))?;
            if !seen.insert(c) {
                return Err(GridError::Duplicate(c.id()));
            }
        }
        Ok(ConfigGrid { configurations })
    }

    pub fn len(&self) -> usize {
        self.configurations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configurations.is_empty()
    }

    pub fn get(&self, index: usize) -> &Configuration {
        &self.configurations[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Configuration> {
        self.configurations.iter()
    }

    pub fn ids(&self) -> Vec<String> {
        self.configurations.iter().map(Configuration::id).collect()
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid is empty")]
    Empty,
    #[error("axis '{0}' is empty")]
    EmptyAxis(String),
    #[error("axis '{axis}' repeats value {value}")]
    DuplicateValue { axis: String, value: String },
    #[error("duplicate configuration {0}")]
    Duplicate(String),
    #[error("configuration {0}: {1}")]
    Invalid(String, LearnerError),
    #[error("malformed grid specification: {0}")]
    Malformed(String),
}

/// Grid specification: per learner, an ordered map from hyper-parameter name
/// to its axis of values (a scalar is a one-value axis).
///
/// ```json
/// {"grid": [
///   {"learner": "knn", "params": {"k": [1, 3, 5], "distance": ["euclidean", "manhattan"]}},
///   {"learner": "majority"}
/// ]}
/// ```
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct GridSpec {
    pub grid: Vec<LearnerAxes>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct LearnerAxes {
    pub learner: LearnerKind,
    #[serde(default)]
    pub params: serde_json::Map<String, Value>,
}

impl GridSpec {
    pub fn from_json(text: &str) -> Result<Self, GridError> {
        serde_json::from_str(text).map_err(|e| GridError::Malformed(e.to_string()))
    }
}

/// Cartesian product of every block's axes, first axis varying slowest.
pub fn expand_grid(spec: &GridSpec) -> Result<ConfigGrid, GridError> {
    let mut configurations = Vec::new();
    for block in &spec.grid {
        let mut axes: Vec<(String, Vec<ParamValue>)> = Vec::new();
        for (name, raw) in &block.params {
            let raw_values = match raw {
                Value::Array(items) => items.clone(),
                scalar => vec![scalar.clone()],
            };
            if raw_values.is_empty() {
                return Err(GridError::EmptyAxis(name.clone()));
            }
            let mut values = Vec::with_capacity(raw_values.len());
            for v in &raw_values {
                let pv = ParamValue::from_json(v).map_err(|e| GridError::Invalid(block.learner.name().into(), e))?;
                if values.contains(&pv) {
                    return Err(GridError::DuplicateValue {
                        axis: name.clone(),
                        value: pv.to_string(),
                    });
                }
                values.push(pv);
            }
            axes.push((name.clone(), values));
        }
        let mut index = vec![0usize; axes.len()];
        loop {
            let mut config = Configuration::new(block.learner);
            for (a, (name, values)) in axes.iter().enumerate() {
                config.params.insert(name.clone(), values[index[a]].clone());
            }
            configurations.push(config);
            // odometer increment, last axis fastest
            let mut a = axes.len();
            loop {
                if a == 0 {
                    break;
                }
                a -= 1;
                index[a] += 1;
                if index[a] < axes[a].1.len() {
                    break;
                }
                index[a] = 0;
                if a == 0 {
                    a = usize::MAX;
                    break;
                }
            }
            if axes.is_empty() || a == usize::MAX {
                break;
            }
        }
    }
    ConfigGrid::new(configurations)
}

/// Numeric feature matrix with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Labels,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Labels) -> Result<Self, LearnerError> {
        if rows.len() != labels.len() {
            return Err(LearnerError::Arity {
                expected: labels.len(),
                got: rows.len(),
            });
        }
        let n_features = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * n_features);
        for row in rows {
            if row.len() != n_features {
                return Err(LearnerError::Arity {
                    expected: n_features,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(LearnerError::Failed("non-finite feature value".into()));
            }
            features.extend(row);
        }
        Ok(Dataset {
            features,
            n_features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }
}

/// What a trained model outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictMode {
    /// Class id.
    Label,
    /// Score for class 1 of a binary problem.
    Score,
    /// Real-valued regression output.
    Value,
    /// Risk score for survival data: the negated predicted time.
    Risk,
}

impl PredictMode {
    pub fn for_metric(metric: Metric) -> Self {
        match metric {
            Metric::ZeroOne => PredictMode::Label,
            Metric::Auc => PredictMode::Score,
            Metric::SquaredError => PredictMode::Value,
            Metric::CIndex => PredictMode::Risk,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distance {
    Euclidean,
    Manhattan,
}

impl Distance {
    fn from_config(config: &Configuration) -> Result<Self, LearnerError> {
        match config.params.get("distance") {
            None => Ok(Distance::Euclidean),
            Some(ParamValue::Text(s)) if s == "euclidean" => Ok(Distance::Euclidean),
            Some(ParamValue::Text(s)) if s == "manhattan" => Ok(Distance::Manhattan),
            Some(other) => Err(LearnerError::InvalidParam(format!("unknown distance {other}"))),
        }
    }

    fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Distance::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LogisticSettings {
    l2: f64,
    learning_rate: f64,
    iterations: usize,
}

impl LogisticSettings {
    fn from_config(config: &Configuration) -> Result<Self, LearnerError> {
        Ok(LogisticSettings {
            l2: config.float_param("l2", 0.0, |v| v >= 0.0)?,
            learning_rate: config.float_param("learning_rate", 0.1, |v| v > 0.0)?,
            iterations: config.int_param("iterations", 100, 0)?,
        })
    }
}

/// Summary of the training targets that constant predictors need.
#[derive(Clone, Debug, PartialEq)]
pub struct Leaf {
    pub class: f64,
    pub positive_rate: f64,
    pub mean: f64,
}

impl Leaf {
    fn fit(targets: &[f64]) -> Leaf {
        let n = targets.len().max(1) as f64;
        Leaf {
            class: majority_class(targets.iter().copied()),
            positive_rate: targets.iter().filter(|&&t| t == 1.0).count() as f64 / n,
            mean: targets.iter().sum::<f64>() / n,
        }
    }

    fn output(&self, mode: PredictMode) -> f64 {
        match mode {
            PredictMode::Label => self.class,
            PredictMode::Score => self.positive_rate,
            PredictMode::Value => self.mean,
            PredictMode::Risk => -self.mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Constant {
        leaf: Leaf,
        mode: PredictMode,
        /// Set when a learner fell back to the constant predictor (e.g.
        /// logistic regression on single-class data).
        fallback: bool,
    },
    Knn {
        k: usize,
        distance: Distance,
        n_features: usize,
        points: Vec<f64>,
        /// Dataset row id of each stored point; breaks distance ties.
        row_ids: Vec<usize>,
        targets: Vec<f64>,
        mode: PredictMode,
    },
    Logistic {
        weights: Vec<f64>,
        bias: f64,
        center: Vec<f64>,
        scale: Vec<f64>,
        mode: PredictMode,
    },
    Stump {
        feature: usize,
        threshold: f64,
        left: Leaf,
        right: Leaf,
        mode: PredictMode,
    },
}

fn majority_class(values: impl Iterator<Item = f64>) -> f64 {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v as i64).or_default() += 1;
    }
    // BTreeMap iterates ascending, so the first maximum is the lowest class
    let mut best = (0i64, 0usize);
    for (&class, &count) in &counts {
        if count > best.1 {
            best = (class, count);
        }
    }
    best.0 as f64
}

fn check_targets(labels: &Labels, rows: &[usize], mode: PredictMode) -> Result<Vec<f64>, LearnerError> {
    let values = labels.values();
    let targets: Vec<f64> = rows.iter().map(|&i| values[i]).collect();
    match mode {
        PredictMode::Label if !labels.is_discrete() => Err(LearnerError::Unsupported(
            "class prediction needs integral labels".into(),
        )),
        PredictMode::Score if targets.iter().any(|&t| t != 0.0 && t != 1.0) => {
            Err(LearnerError::Unsupported("scores need binary 0/1 labels".into()))
        }
        _ => Ok(targets),
    }
}

/// Trains `config` on the given dataset rows.
pub fn train(
    config: &Configuration,
    data: &Dataset,
    rows: &[usize],
    mode: PredictMode,
) -> Result<TrainedModel, LearnerError> {
    config.validate()?;
    if rows.is_empty() {
        return Err(LearnerError::EmptyTrainingSet);
    }
    let targets = check_targets(data.labels(), rows, mode)?;
    match config.learner {
        LearnerKind::Majority => Ok(TrainedModel::Constant {
            leaf: Leaf::fit(&targets),
            mode,
            fallback: false,
        }),
        LearnerKind::Knn => {
            let d = data.n_features();
            let mut points = Vec::with_capacity(rows.len() * d);
            for &i in rows {
                points.extend_from_slice(data.row(i));
            }
            Ok(TrainedModel::Knn {
                k: config.int_param("k", 1, 1)?,
                distance: Distance::from_config(config)?,
                n_features: d,
                points,
                row_ids: rows.to_vec(),
                targets,
                mode,
            })
        }
        LearnerKind::LinearLogistic => train_logistic(config, data, rows, &targets, mode),
        LearnerKind::Stump => Ok(train_stump(
            config.int_param("min_leaf", 1, 1)?,
            data,
            rows,
            &targets,
            mode,
        )),
    }
}

fn train_logistic(
    config: &Configuration,
    data: &Dataset,
    rows: &[usize],
    targets: &[f64],
    mode: PredictMode,
) -> Result<TrainedModel, LearnerError> {
    if !matches!(mode, PredictMode::Label | PredictMode::Score) {
        return Err(LearnerError::Unsupported(
            "logistic regression is a binary classifier".into(),
        ));
    }
    if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(LearnerError::Unsupported("logistic regression needs 0/1 labels".into()));
    }
    if targets.iter().all(|&t| t == targets[0]) {
        return Ok(TrainedModel::Constant {
            leaf: Leaf::fit(targets),
            mode,
            fallback: true,
        });
    }
    let settings = LogisticSettings::from_config(config)?;
    let d = data.n_features();
    let n = rows.len() as f64;
    let mut center = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for &i in rows {
        for (c, x) in center.iter_mut().zip(data.row(i)) {
            *c += x / n;
        }
    }
    for &i in rows {
        for f in 0..d {
            let dev = data.row(i)[f] - center[f];
            scale[f] += dev * dev / n;
        }
    }
    for s in scale.iter_mut() {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| (0..d).map(|f| (data.row(i)[f] - center[f]) / scale[f]).collect())
        .collect();
    let mut weights = vec![0.0; d];
    let mut bias = 0.0;
    for _ in 0..settings.iterations {
        let mut grad = vec![0.0; d];
        let mut grad_bias = 0.0;
        for (xi, &yi) in x.iter().zip(targets) {
            let err = sigmoid(dot(&weights, xi) + bias) - yi;
            for (g, v) in grad.iter_mut().zip(xi) {
                *g += err * v / n;
            }
            grad_bias += err / n;
        }
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= settings.learning_rate * (g + settings.l2 * *w);
        }
        bias -= settings.learning_rate * grad_bias;
    }
    Ok(TrainedModel::Logistic {
        weights,
        bias,
        center,
        scale,
        mode,
    })
}

fn train_stump(min_leaf: usize, data: &Dataset, rows: &[usize], targets: &[f64], mode: PredictMode) -> TrainedModel {
    let classify = matches!(mode, PredictMode::Label | PredictMode::Score);
    let n = rows.len();
    let classes: Vec<i64> = {
        let mut c: Vec<i64> = targets.iter().map(|&t| t as i64).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..data.n_features() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            data.row(rows[a])[f]
                .total_cmp(&data.row(rows[b])[f])
                .then(rows[a].cmp(&rows[b]))
        });
        let total_sum: f64 = targets.iter().sum();
        let total_sq: f64 = targets.iter().map(|t| t * t).sum();
        let mut total_counts = vec![0usize; classes.len()];
        if classify {
            for &t in targets {
                total_counts[classes.binary_search(&(t as i64)).unwrap()] += 1;
            }
        }
        let mut left_counts = vec![0usize; classes.len()];
        let (mut left_sum, mut left_sq) = (0.0, 0.0);
        for pos in 0..n.saturating_sub(1) {
            let t = targets[order[pos]];
            if classify {
                left_counts[classes.binary_search(&(t as i64)).unwrap()] += 1;
            }
            left_sum += t;
            left_sq += t * t;
            let here = data.row(rows[order[pos]])[f];
            let next = data.row(rows[order[pos + 1]])[f];
            let n_left = pos + 1;
            let n_right = n - n_left;
            if here == next || n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let impurity = if classify {
                let left_max = *left_counts.iter().max().unwrap();
                let right_max = total_counts.iter().zip(&left_counts).map(|(t, l)| t - l).max().unwrap();
                (n - left_max - right_max) as f64
            } else {
                let right_sum = total_sum - left_sum;
                let right_sq = total_sq - left_sq;
                (left_sq - left_sum * left_sum / n_left as f64) + (right_sq - right_sum * right_sum / n_right as f64)
            };
            let threshold = (here + next) / 2.0;
            if best.is_none_or(|(b, _, _)| impurity < b) {
                best = Some((impurity, f, threshold));
            }
        }
    }
    match best {
        None => TrainedModel::Constant {
            leaf: Leaf::fit(targets),
            mode,
            fallback: false,
        },
        Some((_, feature, threshold)) => {
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for (&i, &t) in rows.iter().zip(targets) {
                if data.row(i)[feature] <= threshold {
                    left.push(t);
                } else {
                    right.push(t);
                }
            }
            TrainedModel::Stump {
                feature,
                threshold,
                left: Leaf::fit(&left),
                right: Leaf::fit(&right),
                mode,
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl TrainedModel {
    pub fn is_fallback(&self) -> bool {
        matches!(self, TrainedModel::Constant { fallback: true, .. })
    }

    fn n_features(&self) -> Option<usize> {
        match self {
            TrainedModel::Constant { .. } => None,
            TrainedModel::Knn { n_features, .. } => Some(*n_features),
            TrainedModel::Logistic { weights, .. } => Some(weights.len()),
            TrainedModel::Stump { .. } => None,
        }
    }

    /// Predicts one feature row.
    pub fn predict_row(&self, x: &[f64]) -> Result<f64, LearnerError> {
        if let Some(d) = self.n_features() {
            if d != x.len() {
                return Err(LearnerError::Arity {
                    expected: d,
                    got: x.len(),
                });
            }
        }
        Ok(match self {
            TrainedModel::Constant { leaf, mode, .. } => leaf.output(*mode),
            TrainedModel::Knn {
                k,
                distance,
                n_features,
                points,
                row_ids,
                targets,
                mode,
            } => {
                let mut neighbours: Vec<(f64, usize, f64)> = (0..row_ids.len())
                    .map(|p| {
                        let point = &points[p * n_features..(p + 1) * n_features];
                        (distance.between(point, x), row_ids[p], targets[p])
                    })
                    .collect();
                neighbours.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                neighbours.truncate(*k);
                let votes = neighbours.iter().map(|n| n.2);
                let m = neighbours.len() as f64;
                match mode {
                    PredictMode::Label => majority_class(votes),
                    PredictMode::Score => votes.filter(|&t| t == 1.0).count() as f64 / m,
                    PredictMode::Value => votes.sum::<f64>() / m,
                    PredictMode::Risk => -votes.sum::<f64>() / m,
                }
            }
            TrainedModel::Logistic {
                weights,
                bias,
                center,
                scale,
                mode,
            } => {
                let z: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(f, w)| w * (x[f] - center[f]) / scale[f])
                    .sum::<f64>()
                    + bias;
                let p = sigmoid(z);
                match mode {
                    PredictMode::Label => (p >= 0.5) as u8 as f64,
                    _ => p,
                }
            }
            TrainedModel::Stump {
                feature,
                threshold,
                left,
                right,
                mode,
            } => {
                let x_f = *x.get(*feature).ok_or(LearnerError::Arity {
                    expected: feature + 1,
                    got: x.len(),
                })?;
                if x_f <= *threshold {
                    left.output(*mode)
                } else {
                    right.output(*mode)
                }
            }
        })
    }

    pub fn predict(&self, data: &Dataset, rows: &[usize]) -> Result<Vec<f64>, LearnerError> {
        rows.iter().map(|&i| self.predict_row(data.row(i))).collect()
    }
}

/// A grid of built-in learners over one dataset, with a training tally.
pub struct BuiltinPipeline {
    grid: ConfigGrid,
    data: Dataset,
    mode: PredictMode,
    trainings: AtomicU64,
    fallbacks: AtomicU64,
}

impl BuiltinPipeline {
    pub fn new(grid: ConfigGrid, data: Dataset, mode: PredictMode) -> Self {
        BuiltinPipeline {
            grid,
            data,
            mode,
            trainings: AtomicU64::new(0),
            fallbacks: AtomicU64::new(0),
        }
    }

    pub fn grid(&self) -> &ConfigGrid {
        &self.grid
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Number of `fit` calls so far.
    pub fn trainings(&self) -> u64 {
        self.trainings.load(Ordering::SeqCst)
    }

    /// Number of trainings that fell back to a constant predictor.
    pub fn fallbacks(&self) -> u64 {
        self.fallbacks.load(Ordering::SeqCst)
    }
}

impl Pipeline for BuiltinPipeline {
    type Model = TrainedModel;

    fn labels(&self) -> &Labels {
        self.data.labels()
    }

    fn config_ids(&self) -> Vec<String> {
        self.grid.ids()
    }

    fn n_configs(&self) -> usize {
        self.grid.len()
    }

    fn fit(&self, config: usize, rows: &[usize]) -> Result<TrainedModel, LearnerError> {
        self.trainings.fetch_add(1, Ordering::SeqCst);
        let model = train(self.grid.get(config), &self.data, rows, self.mode)?;
        if model.is_fallback() {
            self.fallbacks.fetch_add(1, Ordering::SeqCst);
        }
        Ok(model)
    }

    fn predict(&self, model: &TrainedModel, rows: &[usize]) -> Result<Vec<f64>, LearnerError> {
        model.predict(&self.data, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_data() -> Dataset {
        let xs = [0., 1., 2., 10., 11., 12.];
        let ys = [0., 0., 0., 1., 1., 1.];
        Dataset::new(xs.iter().map(|&x| vec![x]).collect(), Labels::new(ys.to_vec()).unwrap()).unwrap()
    }

    fn knn(k: i64) -> Configuration {
        Configuration::new(LearnerKind::Knn).with("k", ParamValue::Int(k))
    }

    #[test]
    fn majority_predicts_most_frequent_label() {
        let data = Dataset::new(vec![vec![0.]; 3], Labels::new(vec![1., 1., 0.]).unwrap()).unwrap();
        let m = train(
            &Configuration::new(LearnerKind::Majority),
            &data,
            &[0, 1, 2],
            PredictMode::Label,
        )
        .unwrap();
        assert_eq!(m.predict(&data, &[0, 1, 2]).unwrap(), vec![1.0; 3]);
        assert_eq!(m.predict_row(&[123.0]).unwrap(), 1.0);
        let s = train(
            &Configuration::new(LearnerKind::Majority),
            &data,
            &[0, 1, 2],
            PredictMode::Score,
        )
        .unwrap();
        assert!((s.predict_row(&[0.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn one_nn_recovers_training_labels() {
        let data = line_data();
        let rows: Vec<usize> = (0..6).collect();
        let m = train(&knn(1), &data, &rows, PredictMode::Label).unwrap();
        assert_eq!(m.predict(&data, &rows).unwrap(), data.labels().values());
    }

    #[test]
    fn three_nn_between_first_points() {
        let data = line_data();
        let m = train(&knn(3), &data, &(0..6).collect::<Vec<_>>(), PredictMode::Label).unwrap();
        // neighbours of 1.5: 1 and 2 at 0.5, then 0 at 1.5, all class 0
        assert_eq!(m.predict_row(&[1.5]).unwrap(), 0.0);
    }

    #[test]
    fn knn_votes_are_fractions_of_k() {
        let data = line_data();
        let m = train(&knn(4), &data, &(0..6).collect::<Vec<_>>(), PredictMode::Score).unwrap();
        for x in [-3.0, 1.0, 5.0, 6.0, 11.5, 40.0] {
            let s = m.predict_row(&[x]).unwrap();
            assert!((0..=4).any(|v| (s - v as f64 / 4.0).abs() < 1e-15), "{s}");
        }
    }

    #[test]
    fn logistic_with_no_iterations_scores_half() {
        let data = line_data();
        let cfg = Configuration::new(LearnerKind::LinearLogistic).with("iterations", ParamValue::Int(0));
        let m = train(&cfg, &data, &(0..6).collect::<Vec<_>>(), PredictMode::Score).unwrap();
        assert_eq!(m.predict_row(&[3.0]).unwrap(), 0.5);
    }

    #[test]
    fn logistic_separates_line_data() {
        let data = line_data();
        let cfg = Configuration::new(LearnerKind::LinearLogistic).with("iterations", ParamValue::Int(200));
        let rows: Vec<usize> = (0..6).collect();
        let m = train(&cfg, &data, &rows, PredictMode::Label).unwrap();
        assert_eq!(m.predict(&data, &rows).unwrap(), data.labels().values());
    }

    #[test]
    fn logistic_single_class_falls_back() {
        let data = line_data();
        let cfg = Configuration::new(LearnerKind::LinearLogistic);
        let m = train(&cfg, &data, &[0, 1, 2], PredictMode::Label).unwrap();
        assert!(m.is_fallback());
        assert_eq!(m.predict_row(&[11.0]).unwrap(), 0.0);
    }

    #[test]
    fn stump_finds_the_gap() {
        let data = line_data();
        let rows: Vec<usize> = (0..6).collect();
        let m = train(
            &Configuration::new(LearnerKind::Stump),
            &data,
            &rows,
            PredictMode::Label,
        )
        .unwrap();
        match &m {
            TrainedModel::Stump { threshold, .. } => assert_eq!(*threshold, 6.0),
            other => panic!("expected a stump, got {other:?}"),
        }
        assert_eq!(m.predict(&data, &rows).unwrap(), data.labels().values());
    }

    #[test]
    fn stump_regression_splits_means() {
        let data = Dataset::new(
            (0..6).map(|x| vec![x as f64]).collect(),
            Labels::new(vec![1., 1., 1., 5., 5., 5.]).unwrap(),
        )
        .unwrap();
        let rows: Vec<usize> = (0..6).collect();
        let m = train(
            &Configuration::new(LearnerKind::Stump),
            &data,
            &rows,
            PredictMode::Value,
        )
        .unwrap();
        assert_eq!(m.predict_row(&[0.0]).unwrap(), 1.0);
        assert_eq!(m.predict_row(&[5.0]).unwrap(), 5.0);
    }

    #[test]
    fn arity_and_empty_training_errors() {
        let data = line_data();
        let m = train(&knn(1), &data, &[0, 1], PredictMode::Label).unwrap();
        assert!(matches!(m.predict_row(&[1.0, 2.0]), Err(LearnerError::Arity { .. })));
        assert_eq!(
            train(&knn(1), &data, &[], PredictMode::Label),
            Err(LearnerError::EmptyTrainingSet)
        );
        assert!(matches!(
            train(&knn(0), &data, &[0], PredictMode::Label),
            Err(LearnerError::InvalidParam(_))
        ));
    }

    #[test]
    fn grid_expansion_order_and_errors() {
        let spec = GridSpec::from_json(r#"{"grid":[{"learner":"knn","params":{"k":[1,3,5]}}]}"#).unwrap();
        let grid = expand_grid(&spec).unwrap();
        assert_eq!(grid.ids(), vec!["knn(k=1)", "knn(k=3)", "knn(k=5)"]);

        let spec = GridSpec::from_json(
            r#"{"grid":[{"learner":"knn","params":{"k":[1,3,5],"distance":["euclidean","manhattan"]}},{"learner":"majority"}]}"#,
        )
        .unwrap();
        let grid = expand_grid(&spec).unwrap();
        assert_eq!(grid.len(), 7);
        assert_eq!(grid.get(0).id(), "knn(distance=euclidean,k=1)");
        assert_eq!(grid.get(1).id(), "knn(distance=manhattan,k=1)");
        assert_eq!(grid.get(2).id(), "knn(distance=euclidean,k=3)");
        assert_eq!(grid.get(6).id(), "majority");

        let dup = GridSpec::from_json(r#"{"grid":[{"learner":"knn","params":{"k":[1,1]}}]}"#).unwrap();
        assert!(matches!(expand_grid(&dup), Err(GridError::DuplicateValue { .. })));
        let empty = GridSpec::from_json(r#"{"grid":[{"learner":"knn","params":{"k":[]}}]}"#).unwrap();
        assert_eq!(expand_grid(&empty), Err(GridError::EmptyAxis("k".into())));
        let twice = GridSpec::from_json(r#"{"grid":[{"learner":"majority"},{"learner":"majority"}]}"#).unwrap();
        assert!(matches!(expand_grid(&twice), Err(GridError::Duplicate(_))));
        let bad = GridSpec::from_json(r#"{"grid":[{"learner":"majority","params":{"k":3}}]}"#).unwrap();
        assert!(matches!(expand_grid(&bad), Err(GridError::Invalid(..))));
        assert!(matches!(GridSpec::from_json("{}"), Err(GridError::Malformed(_))));
    }

    #[test]
    fn retraining_is_deterministic_and_counted() {
        let grid = ConfigGrid::new(vec![knn(3), Configuration::new(LearnerKind::Stump)]).unwrap();
        let pipeline = BuiltinPipeline::new(grid, line_data(), PredictMode::Label);
        let a = pipeline.fit(1, &[0, 2, 4, 5]).unwrap();
        let b = pipeline.fit(1, &[0, 2, 4, 5]).unwrap();
        assert_eq!(a, b);
        assert_eq!(pipeline.trainings(), 2);
    }

    proptest! {
        #[test]
        fn predictions_ignore_training_row_order(
            xs in proptest::collection::vec((0u8..6, 0u8..6, 0u8..2), 4..20),
            seed in any::<u64>(),
            k in 1i64..5,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let rows: Vec<Vec<f64>> = xs.iter().map(|&(a, b, _)| vec![a as f64, b as f64]).collect();
            let labels = Labels::new(xs.iter().map(|&(_, _, y)| y as f64).collect()).unwrap();
            let data = Dataset::new(rows, labels).unwrap();
            let order: Vec<usize> = (0..data.len()).collect();
            let mut shuffled = order.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            for cfg in [knn(k), Configuration::new(LearnerKind::Stump), Configuration::new(LearnerKind::Majority)] {
                let a = train(&cfg, &data, &order, PredictMode::Label).unwrap();
                let b = train(&cfg, &data, &shuffled, PredictMode::Label).unwrap();
                prop_assert_eq!(a.predict(&data, &order).unwrap(), b.predict(&data, &order).unwrap());
            }
        }
    }
}
