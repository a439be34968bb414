//! Browser bindings: a small bias curve, the bootstrap distribution of a
//! prediction matrix and an early-dropping trace on a synthetic instance.
//!
//! Every export takes plain numbers or text and returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cvboot::io::parse_prediction_matrix;
use cvboot::protocols::{bbc, bced_on_store, BbcSettings, BcedSettings};
use cvboot::resampling::StreamTag;
use cvboot::simulation::{generate_instance, run_setting, summarize, LatentMode, SimSetting, StudyConfig};
use cvboot::{FoldPlan, Metric, ProtocolKind, SeedPlan};

/// Sample sizes of the bias curve.
pub const CURVE_SIZES: [usize; 5] = [20, 40, 60, 80, 100];

const DEMO_BOOTSTRAPS: usize = 200;
const DEMO_FOLDS: usize = 10;

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub n: usize,
    pub protocol: String,
    pub mean_bias: f64,
    pub se_bias: f64,
}

#[derive(Debug, Serialize)]
pub struct Distribution {
    pub estimate: f64,
    pub ci: [f64; 2],
    pub raw_estimate: f64,
    pub selected: String,
    /// Per-bootstrap estimates, metric orientation.
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct TraceStep {
    pub fold: usize,
    pub alive: usize,
}

#[derive(Debug, Serialize)]
pub struct BcedTrace {
    pub configs: usize,
    pub steps: Vec<TraceStep>,
    pub trainings: u64,
    pub full_trainings: u64,
    pub estimate: f64,
    pub true_accuracy: f64,
}

fn json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

fn setting(n: usize, c: usize, beta_a: f64, beta_b: f64, reps: usize, seed: u64) -> SimSetting {
    SimSetting {
        n,
        c,
        beta_a,
        beta_b,
        reps,
        seed,
        latent: LatentMode::PerCell,
    }
}

/// Mean bias of CVT, TT, BBC and BCED over `reps` replicates at each of
/// [`CURVE_SIZES`].
pub fn bias_curve_points(
    c: usize,
    beta_a: f64,
    beta_b: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>, String> {
    let config = StudyConfig {
        k: DEMO_FOLDS,
        bootstraps: DEMO_BOOTSTRAPS,
        protocols: vec![
            ProtocolKind::Cvt,
            ProtocolKind::Tt,
            ProtocolKind::Bbc,
            ProtocolKind::Bced,
        ],
        ..StudyConfig::default()
    };
    let mut points = Vec::new();
    for (i, &n) in CURVE_SIZES.iter().enumerate() {
        let s = setting(
            n,
            c,
            beta_a,
            beta_b,
            reps,
            SeedPlan::new(seed).derive(StreamTag::SimSetting, i as u64).master_seed,
        );
        let records = run_setting(&s, &config).map_err(|e| e.to_string())?;
        points.extend(summarize(&s, &records).into_iter().map(|row| CurvePoint {
            n,
            protocol: row.protocol.name().to_string(),
            mean_bias: row.mean_bias,
            se_bias: row.se_bias,
        }));
    }
    Ok(points)
}

/// Bootstrap correction of a prediction-matrix text.
pub fn distribution(matrix: &str, metric: &str, bootstraps: usize, seed: u64) -> Result<Distribution, String> {
    let metric: Metric = metric.parse()?;
    let parsed = parse_prediction_matrix(matrix.as_bytes()).map_err(|e| e.to_string())?;
    let store = &parsed.store;
    let settings = BbcSettings {
        bootstraps,
        seed,
        ..BbcSettings::default()
    };
    let r = bbc(store, metric, &settings, None).map_err(|e| e.to_string())?;
    let report = r.report(store, metric, &settings);
    Ok(Distribution {
        estimate: report.estimate,
        ci: report.ci.unwrap_or([report.estimate; 2]),
        raw_estimate: metric.from_loss(r.selected_loss),
        selected: report.selected_config_id,
        values: r.losses.iter().map(|&l| metric.from_loss(l)).collect(),
    })
}

/// Early dropping on one synthetic instance; reports how many
/// configurations are alive after each fold.
pub fn trace(
    n: usize,
    c: usize,
    beta_a: f64,
    beta_b: f64,
    alpha_drop: f64,
    min_oos: usize,
    seed: u64,
) -> Result<BcedTrace, String> {
    let s = setting(n, c, beta_a, beta_b, 1, seed);
    s.validate(DEMO_FOLDS).map_err(|e| e.to_string())?;
    let instance = generate_instance(&s, 0);
    let plan = FoldPlan::unstratified(n, DEMO_FOLDS, &mut SeedPlan::new(seed).stream(StreamTag::FoldPlan, 0))
        .map_err(|e| e.to_string())?;
    let store = instance.store(&plan);
    let settings = BcedSettings {
        bbc: BbcSettings {
            bootstraps: DEMO_BOOTSTRAPS,
            seed,
            ..BbcSettings::default()
        },
        alpha_drop,
        min_oos,
    };
    let (outcome, _) = bced_on_store(&store, Metric::ZeroOne, &settings).map_err(|e| e.to_string())?;
    let steps = (1..=DEMO_FOLDS)
        .map(|fold| TraceStep {
            fold,
            alive: c - outcome.drops.iter().filter(|d| d.fold <= fold).count(),
        })
        .collect();
    Ok(BcedTrace {
        configs: c,
        steps,
        trainings: outcome.fold_trainings + 1,
        full_trainings: (DEMO_FOLDS * c) as u64 + 1,
        estimate: 1.0 - outcome.bbc.loss,
        true_accuracy: instance.true_perf[outcome.selected],
    })
}

#[wasm_bindgen]
pub fn bias_curve(c: usize, beta_a: f64, beta_b: f64, reps: usize, seed: u32) -> Result<String, JsError> {
    bias_curve_points(c, beta_a, beta_b, reps, seed.into())
        .and_then(|p| json(&p))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn bootstrap_distribution(matrix: &str, metric: &str, bootstraps: usize, seed: u32) -> Result<String, JsError> {
    distribution(matrix, metric, bootstraps, seed.into())
        .and_then(|d| json(&d))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn bced_trace(
    n: usize,
    c: usize,
    beta_a: f64,
    beta_b: f64,
    alpha_drop: f64,
    min_oos: usize,
    seed: u32,
) -> Result<String, JsError> {
    trace(n, c, beta_a, beta_b, alpha_drop, min_oos, seed.into())
        .and_then(|t| json(&t))
        .map_err(|e| JsError::new(&e))
}
