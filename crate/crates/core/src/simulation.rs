//! Synthetic bias study on generated correctness matrices.
//!
//! Each configuration `j` gets a true accuracy `P_j ~ Beta(a, b)` and each
//! cell is correct when a uniform latent falls below `P_j`. The matrix is
//! wrapped as a 0-1 loss store whose labels are all 1, so that a stored 1
//! means "correct". Every protocol is then applied to the same fold plan and
//! its accuracy estimate compared with the true accuracy of the
//! configuration it returns.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Labels, Metric};
use crate::par;
use crate::protocols::{
    bbc, bced_on_store, count_models, tt_correct, BbcSettings, BcedSettings, ProtocolError, ProtocolKind,
};
use crate::resampling::{FoldPlan, SeedPlan, StreamTag};
use crate::selection::{css, SelectionError, SelectionMode};
use crate::store::PredictionStore;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("infeasible setting: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

/// How the uniform latents are shared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentMode {
    /// An independent latent per cell: configurations err independently.
    #[default]
    PerCell,
    /// One latent per sample shared by every configuration, which nests the
    /// correctness columns by true accuracy.
    SharedRow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub n: usize,
    pub c: usize,
    pub beta_a: f64,
    pub beta_b: f64,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub latent: LatentMode,
}

impl SimSetting {
    pub fn validate(&self, k: usize) -> Result<(), SimError> {
        if self.c == 0 || self.reps == 0 {
            return Err(SimError::Infeasible(
                "need at least one configuration and one replicate".into(),
            ));
        }
        if !(self.beta_a > 0.0 && self.beta_b > 0.0 && self.beta_a.is_finite() && self.beta_b.is_finite()) {
            return Err(SimError::Infeasible(format!(
                "Beta({}, {}) parameters must be positive",
                self.beta_a, self.beta_b
            )));
        }
        if k < 2 || k > self.n {
            return Err(SimError::Infeasible(format!("{k} folds for {} samples", self.n)));
        }
        Ok(())
    }

    /// Mean of the Beta distribution.
    pub fn mu(&self) -> f64 {
        self.beta_a / (self.beta_a + self.beta_b)
    }

    fn replicate_seeds(&self, replicate: usize) -> SeedPlan {
        SeedPlan::new(self.seed).derive(StreamTag::SimReplicate, replicate as u64)
    }
}

/// A generated correctness matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SimInstance {
    /// `columns[j][i]` is 1.0 when configuration `j` is right on sample `i`.
    pub columns: Vec<Vec<f64>>,
    pub true_perf: Vec<f64>,
    /// The uniform latents, `N` values (shared) or `N·C` values
    /// (configuration-major, per cell).
    pub latent: Vec<f64>,
    pub mode: LatentMode,
}

impl SimInstance {
    /// `Π_ij = 1(r < P_j)` from given latents.
    pub fn from_latent(true_perf: Vec<f64>, latent: Vec<f64>, mode: LatentMode) -> Self {
        let n = match mode {
            LatentMode::SharedRow => latent.len(),
            LatentMode::PerCell => latent.len() / true_perf.len().max(1),
        };
        let columns = true_perf
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                (0..n)
                    .map(|i| {
                        let r = match mode {
                            LatentMode::SharedRow => latent[i],
                            LatentMode::PerCell => latent[j * n + i],
                        };
                        (r < p) as u8 as f64
                    })
                    .collect()
            })
            .collect();
        SimInstance {
            columns,
            true_perf,
            latent,
            mode,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// The matrix as a 0-1 loss store over `plan`.
    pub fn store(&self, plan: &FoldPlan) -> PredictionStore {
        let n = self.n_samples();
        let ids = (0..self.columns.len()).map(|j| format!("c{j}")).collect();
        PredictionStore::from_columns(
            Labels::new(vec![1.0; n]).expect("constant labels"),
            ids,
            plan.k(),
            plan.assignment().to_vec(),
            &self.columns,
        )
        .expect("well-formed instance")
    }
}

/// Draws replicate `replicate` of `setting`.
pub fn generate_instance(setting: &SimSetting, replicate: usize) -> SimInstance {
    let mut rng = setting.replicate_seeds(replicate).stream(StreamTag::SimInstance, 0);
    let beta = Beta::new(setting.beta_a, setting.beta_b).expect("validated Beta parameters");
    let true_perf: Vec<f64> = (0..setting.c).map(|_| beta.sample(&mut rng)).collect();
    let cells = match setting.latent {
        LatentMode::SharedRow => setting.n,
        LatentMode::PerCell => setting.n * setting.c,
    };
    let latent: Vec<f64> = (0..cells).map(|_| rng.random::<f64>()).collect();
    SimInstance::from_latent(true_perf, latent, setting.latent)
}

/// One protocol's outcome on one replicate, accuracy orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRecord {
    pub protocol: ProtocolKind,
    pub estimate: f64,
    pub true_perf: f64,
    pub bias: f64,
    pub selected: usize,
    pub models_trained: u64,
    /// Whether the percentile interval contains the true accuracy.
    pub covered: Option<bool>,
}

impl BiasRecord {
    fn new(protocol: ProtocolKind, estimate: f64, true_perf: f64, selected: usize, models_trained: u64) -> Self {
        BiasRecord {
            protocol,
            estimate,
            true_perf,
            bias: estimate - true_perf,
            selected,
            models_trained,
            covered: None,
        }
    }
}

/// NCV emulated on the matrix: for each outer fold the winner on the other
/// folds is scored on the held-out fold. The configuration whose truth is
/// looked up is the winner on the full matrix.
pub fn simulate_ncv_on_matrix(instance: &SimInstance, plan: &FoldPlan) -> Result<BiasRecord, SimError> {
    let store = instance.store(plan);
    let c = store.n_configs();
    let alive = vec![true; c];
    let mut total = 0.0;
    for k in 0..plan.k() {
        let inner = css(&store, &plan.train_rows(k), &alive, Metric::ZeroOne)?;
        let outer = plan.test_rows(k);
        let column = store.column(inner.best_index, 0);
        let wrong = outer.iter().filter(|&&i| column[i] != 1.0).count();
        total += wrong as f64 / outer.len() as f64;
    }
    let loss = total / plan.k() as f64;
    let all: Vec<usize> = (0..store.n_samples()).collect();
    let selected = css(&store, &all, &alive, Metric::ZeroOne)?.best_index;
    let (k, c) = (plan.k() as u64, c as u64);
    Ok(BiasRecord::new(
        ProtocolKind::Ncv,
        1.0 - loss,
        instance.true_perf[selected],
        selected,
        count_models(ProtocolKind::Ncv, k, c, &[]),
    ))
}

/// Parameters shared by every setting of a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub k: usize,
    pub bootstraps: usize,
    pub alpha: f64,
    pub alpha_drop: f64,
    pub min_oos: usize,
    pub protocols: Vec<ProtocolKind>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            k: 10,
            bootstraps: 1000,
            alpha: 0.05,
            alpha_drop: 0.99,
            min_oos: 50,
            protocols: vec![
                ProtocolKind::Cvt,
                ProtocolKind::Tt,
                ProtocolKind::Ncv,
                ProtocolKind::Bbc,
                ProtocolKind::Bced,
            ],
        }
    }
}

/// Runs every configured protocol on replicate `replicate` of `setting`,
/// all sharing one unstratified fold plan.
pub fn run_replicate(
    setting: &SimSetting,
    replicate: usize,
    config: &StudyConfig,
) -> Result<Vec<BiasRecord>, SimError> {
    setting.validate(config.k)?;
    let seeds = setting.replicate_seeds(replicate);
    let instance = generate_instance(setting, replicate);
    let plan = FoldPlan::unstratified(setting.n, config.k, &mut seeds.stream(StreamTag::FoldPlan, 0))
        .map_err(ProtocolError::from)?;
    let store = instance.store(&plan);
    let (k, c) = (config.k as u64, setting.c as u64);
    let all: Vec<usize> = (0..setting.n).collect();
    let cvt = css(&store, &all, &vec![true; setting.c], Metric::ZeroOne)?;
    let truth = |j: usize| instance.true_perf[j];
    let bbc_settings = BbcSettings {
        bootstraps: config.bootstraps,
        alpha: config.alpha,
        seed: seeds.derive(StreamTag::Bootstrap, 0).master_seed,
        mode: SelectionMode::Pooled,
    };
    let covers = |ci: (f64, f64), p: f64| 1.0 - ci.1 <= p && p <= 1.0 - ci.0;

    let mut records = Vec::with_capacity(config.protocols.len());
    for &protocol in &config.protocols {
        let record = match protocol {
            ProtocolKind::Cvt | ProtocolKind::Cv => BiasRecord::new(
                ProtocolKind::Cvt,
                1.0 - cvt.best_loss(),
                truth(cvt.best_index),
                cvt.best_index,
                count_models(ProtocolKind::Cvt, k, c, &[]),
            ),
            ProtocolKind::Tt => {
                let tt = tt_correct(&store, Metric::ZeroOne, SelectionMode::Pooled, false)?;
                BiasRecord::new(
                    ProtocolKind::Tt,
                    1.0 - tt.l_tt,
                    truth(tt.selected),
                    tt.selected,
                    count_models(ProtocolKind::Tt, k, c, &[]),
                )
            }
            ProtocolKind::Ncv => simulate_ncv_on_matrix(&instance, &plan)?,
            ProtocolKind::Bbc => {
                let r = bbc(&store, Metric::ZeroOne, &bbc_settings, None)?;
                let mut rec = BiasRecord::new(
                    ProtocolKind::Bbc,
                    1.0 - r.loss,
                    truth(r.selected),
                    r.selected,
                    count_models(ProtocolKind::Bbc, k, c, &[]),
                );
                rec.covered = Some(covers(r.ci, rec.true_perf));
                rec
            }
            ProtocolKind::Bced => {
                let settings = BcedSettings {
                    bbc: bbc_settings,
                    alpha_drop: config.alpha_drop,
                    min_oos: config.min_oos,
                };
                let (outcome, _) = bced_on_store(&store, Metric::ZeroOne, &settings)?;
                let mut rec = BiasRecord::new(
                    ProtocolKind::Bced,
                    1.0 - outcome.bbc.loss,
                    truth(outcome.selected),
                    outcome.selected,
                    outcome.fold_trainings + 1,
                );
                rec.covered = Some(covers(outcome.bbc.ci, rec.true_perf));
                rec
            }
        };
        records.push(record);
    }
    Ok(records)
}

/// Mean outcome of one protocol over the replicates of one setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub setting: SimSetting,
    pub protocol: ProtocolKind,
    pub replicates: usize,
    pub mean_bias: f64,
    /// Standard error of the mean bias.
    pub se_bias: f64,
    pub mean_estimate: f64,
    pub mean_true_perf: f64,
    pub mean_models_trained: f64,
    pub coverage: Option<f64>,
}

/// Aggregates per-replicate records (replicate-major) into one row per
/// protocol.
pub fn summarize(setting: &SimSetting, replicates: &[Vec<BiasRecord>]) -> Vec<StudyRow> {
    let Some(first) = replicates.first() else {
        return Vec::new();
    };
    let m = replicates.len() as f64;
    (0..first.len())
        .map(|p| {
            let recs: Vec<&BiasRecord> = replicates.iter().map(|r| &r[p]).collect();
            let mean = |f: &dyn Fn(&BiasRecord) -> f64| recs.iter().map(|r| f(r)).sum::<f64>() / m;
            let mean_bias = mean(&|r| r.bias);
            let var = if recs.len() > 1 {
                recs.iter().map(|r| (r.bias - mean_bias).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            let coverage = recs[0]
                .covered
                .is_some()
                .then(|| recs.iter().filter(|r| r.covered == Some(true)).count() as f64 / m);
            StudyRow {
                setting: *setting,
                protocol: recs[0].protocol,
                replicates: recs.len(),
                mean_bias,
                se_bias: (var / m).sqrt(),
                mean_estimate: mean(&|r| r.estimate),
                mean_true_perf: mean(&|r| r.true_perf),
                mean_models_trained: mean(&|r| r.models_trained as f64),
                coverage,
            }
        })
        .collect()
}

/// All replicates of one setting, run concurrently.
pub fn run_setting(setting: &SimSetting, config: &StudyConfig) -> Result<Vec<Vec<BiasRecord>>, SimError> {
    setting.validate(config.k)?;
    par::map_range(setting.reps, |r| run_replicate(setting, r, config))
        .into_iter()
        .collect()
}

/// Runs every setting and returns one row per (setting, protocol).
pub fn run_bias_study(settings: &[SimSetting], config: &StudyConfig) -> Result<Vec<StudyRow>, SimError> {
    for s in settings {
        s.validate(config.k)?;
    }
    let mut rows = Vec::new();
    for s in settings {
        rows.extend(summarize(s, &run_setting(s, config)?));
    }
    Ok(rows)
}

/// Named setting grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// N ∈ {20, 100, 500} × C ∈ {100, 500}, Beta(9, 6), 200 replicates.
    Smoke,
    /// N ∈ {20, 40, 60, 80, 100, 500, 1000} × C ∈ {50, 100, 200, 300, 500,
    /// 1000, 2000} × four Beta laws with means 0.6 to 0.9, 500 replicates.
    Full,
}

type GridAxes = (&'static [usize], &'static [usize], &'static [(f64, f64)], usize);

impl Preset {
    pub fn settings(self, seed: u64) -> Vec<SimSetting> {
        let (ns, cs, betas, reps): GridAxes = match self {
            Preset::Smoke => (&[20, 100, 500], &[100, 500], &[(9.0, 6.0)], 200),
            Preset::Full => (
                &[20, 40, 60, 80, 100, 500, 1000],
                &[50, 100, 200, 300, 500, 1000, 2000],
                &[(9.0, 6.0), (14.0, 6.0), (24.0, 6.0), (54.0, 6.0)],
                500,
            ),
        };
        let mut out = Vec::new();
        for &(a, b) in betas {
            for &n in ns {
                for &c in cs {
                    let index = out.len() as u64;
                    out.push(SimSetting {
                        n,
                        c,
                        beta_a: a,
                        beta_b: b,
                        reps,
                        seed: SeedPlan::new(seed).derive(StreamTag::SimSetting, index).master_seed,
                        latent: LatentMode::PerCell,
                    });
                }
            }
        }
        out
    }
}
