use serde::{Deserialize, Serialize};

use crate::metrics::{Metric, MetricError};
use crate::par;
use crate::pipeline::Pipeline;
use crate::resampling::{FoldPlan, ResampleError, SeedPlan, StreamTag, MAX_REDRAWS};
use crate::selection::select;
use crate::store::{PredictionStore, RowWeights, Scorer};

use super::bbc::{bbc, BbcResult, BbcSettings};
use super::cv::fill_folds;
use super::{check_plan, DropEvent, FailedConfig, ProtocolError, ProtocolKind, ProtocolReport, ProtocolRun};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcedSettings {
    /// Bootstrap count, CI level and seed, shared by the dropping test and
    /// the final correction.
    pub bbc: BbcSettings,
    /// A configuration is dropped once its probability of losing to the
    /// current best exceeds this.
    pub alpha_drop: f64,
    /// Out-of-sample predictions needed before the test runs.
    pub min_oos: usize,
}

impl Default for BcedSettings {
    fn default() -> Self {
        BcedSettings {
            bbc: BbcSettings::default(),
            alpha_drop: 0.99,
            min_oos: 50,
        }
    }
}

impl BcedSettings {
    pub fn validate(&self, metric: Metric) -> Result<(), ProtocolError> {
        self.bbc.validate()?;
        if !(self.alpha_drop > 0.5 && self.alpha_drop <= 1.0) {
            return Err(ProtocolError::Invalid(format!(
                "alpha_drop must lie in (0.5, 1], got {}",
                self.alpha_drop
            )));
        }
        if self.min_oos < metric.min_samples() {
            return Err(ProtocolError::Invalid(format!(
                "min_oos must be at least {} for {metric}",
                metric.min_samples()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcedOutcome {
    pub alive: Vec<bool>,
    pub drops: Vec<DropEvent>,
    pub failed: Vec<FailedConfig>,
    /// Fold trainings (the final model excluded).
    pub fold_trainings: u64,
    pub selected: usize,
    /// Uncorrected pooled loss of the selected configuration.
    pub selected_loss: f64,
    pub bbc: BbcResult,
}

impl BcedOutcome {
    pub fn report(&self, store: &PredictionStore, metric: Metric, settings: &BcedSettings) -> ProtocolReport {
        let mut report = ProtocolReport::new(
            ProtocolKind::Bced,
            metric,
            settings.bbc.mode,
            self.bbc.loss,
            self.selected,
            store.config_ids()[self.selected].clone(),
        )
        .with_loss_ci(self.bbc.ci.0, self.bbc.ci.1);
        report.models_trained = self.fold_trainings + 1;
        report.per_bootstrap_losses = Some(self.bbc.losses.clone());
        report.drop_trace = Some(self.drops.clone());
        report.failed_configs = self.failed.clone();
        report.cvt_estimate = Some(metric.from_loss(self.selected_loss));
        report
    }
}

/// Drives the folds in order, calling `run_fold(fold, alive_configs, store)`
/// to fill each fold, and runs the dropping test between folds.
fn drive<F>(
    store: &mut PredictionStore,
    plan: &FoldPlan,
    metric: Metric,
    settings: &BcedSettings,
    mut run_fold: F,
) -> Result<BcedOutcome, ProtocolError>
where
    F: FnMut(usize, &[usize], &mut PredictionStore) -> Result<Vec<FailedConfig>, ProtocolError>,
{
    settings.validate(metric)?;
    let k = plan.k();
    let n = store.n_samples();
    let mut alive = vec![true; store.n_configs()];
    let mut drops = Vec::new();
    let mut failed: Vec<FailedConfig> = Vec::new();
    let mut fold_trainings = 0u64;
    let mut accumulated: Vec<usize> = Vec::new();
    for fold in 0..k {
        let configs: Vec<usize> = (0..alive.len()).filter(|&j| alive[j]).collect();
        fold_trainings += configs.len() as u64;
        for f in run_fold(fold, &configs, store)? {
            alive[f.config] = false;
            for i in 0..n {
                store.clear(i, f.config, 0);
            }
            failed.push(f);
        }
        if !alive.iter().any(|&a| a) {
            return Err(ProtocolError::AllConfigsFailed);
        }
        accumulated.extend(plan.test_rows(fold));
        if fold + 1 < k && accumulated.len() >= settings.min_oos && settings.alpha_drop < 1.0 {
            let p_hat = drop_test(store, metric, &accumulated, &alive, settings, fold)?;
            for (j, p) in p_hat.iter().enumerate() {
                if let Some(p) = *p {
                    if p > settings.alpha_drop {
                        alive[j] = false;
                        drops.push(DropEvent {
                            fold: fold + 1,
                            config: j,
                            config_id: store.config_ids()[j].clone(),
                            p_hat: p,
                        });
                    }
                }
            }
        }
    }
    let scorer = Scorer::new(store, metric);
    let outcome = select(&scorer, &RowWeights::all(n), &alive, settings.bbc.mode)?;
    drop(scorer);
    let bbc = bbc(store, metric, &settings.bbc, Some(&alive))?;
    failed.sort_by_key(|f| f.config);
    Ok(BcedOutcome {
        alive,
        drops,
        failed,
        fold_trainings,
        selected: outcome.best_index,
        selected_loss: outcome.best_loss(),
        bbc,
    })
}

/// `p̂` per alive configuration: the fraction of bootstraps of the
/// accumulated rows on which its loss is strictly above the current best's.
fn drop_test(
    store: &PredictionStore,
    metric: Metric,
    accumulated: &[usize],
    alive: &[bool],
    settings: &BcedSettings,
    fold: usize,
) -> Result<Vec<Option<f64>>, ProtocolError> {
    use rand::Rng;
    let n = store.n_samples();
    let scorer = Scorer::new(store, metric);
    let best = select(
        &scorer,
        &RowWeights::from_rows(n, accumulated),
        alive,
        settings.bbc.mode,
    )?
    .best_index;
    let seeds = SeedPlan::new(settings.bbc.seed);
    let m = accumulated.len();
    let rounds: Vec<Result<Vec<bool>, ProtocolError>> = par::map_range(settings.bbc.bootstraps, |b| {
        let mut rng = seeds.stream(StreamTag::DropTest, ((fold as u64) << 32) | b as u64);
        for _ in 0..MAX_REDRAWS {
            let rows: Vec<usize> = (0..m).map(|_| accumulated[rng.random_range(0..m)]).collect();
            let weights = RowWeights::from_rows(n, &rows);
            let reference = match scorer.pooled_loss(best, &weights) {
                Ok(Some(l)) => l,
                Ok(None) | Err(MetricError::Degenerate(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            let mut worse = vec![false; alive.len()];
            for (j, w) in worse.iter_mut().enumerate() {
                if alive[j] && j != best {
                    if let Ok(Some(l)) = scorer.pooled_loss(j, &weights) {
                        *w = l > reference;
                    }
                }
            }
            return Ok(worse);
        }
        Err(ResampleError::RedrawExhausted(MAX_REDRAWS).into())
    });
    let mut counts = vec![0usize; alive.len()];
    for round in rounds {
        for (c, w) in counts.iter_mut().zip(round?) {
            *c += w as usize;
        }
    }
    let b = settings.bbc.bootstraps as f64;
    Ok(counts
        .iter()
        .zip(alive)
        .map(|(&c, &a)| a.then(|| c as f64 / b))
        .collect())
}

/// Early-dropping CV with the learners of `pipeline`; the estimate and
/// interval come from the bootstrap correction over the surviving columns.
pub fn run_bced<P: Pipeline>(
    pipeline: &P,
    plan: &FoldPlan,
    metric: Metric,
    settings: &BcedSettings,
) -> Result<ProtocolRun<P::Model>, ProtocolError> {
    check_plan(pipeline, plan)?;
    let mut store = PredictionStore::new(
        pipeline.labels().clone(),
        pipeline.config_ids(),
        1,
        plan.k(),
        plan.assignment().to_vec(),
    )?;
    let outcome = drive(&mut store, plan, metric, settings, |fold, configs, store| {
        fill_folds(pipeline, plan, &[fold], configs, store, 0)
    })?;
    let all: Vec<usize> = (0..pipeline.n_samples()).collect();
    let model = pipeline
        .fit(outcome.selected, &all)
        .map_err(|source| ProtocolError::Learner {
            config: outcome.selected,
            fold: 0,
            source,
        })?;
    let report = outcome.report(&store, metric, settings);
    Ok(ProtocolRun {
        report,
        model,
        store: Some(store),
    })
}

/// Early dropping emulated on a complete single-repeat store: each fold
/// reveals the stored predictions of the configurations still alive, as if
/// they had been trained then. Returns the outcome and the ragged store.
pub fn bced_on_store(
    full: &PredictionStore,
    metric: Metric,
    settings: &BcedSettings,
) -> Result<(BcedOutcome, PredictionStore), ProtocolError> {
    if full.n_repeats() != 1 || !full.is_complete() {
        return Err(ProtocolError::Invalid(
            "emulation needs a complete single-repeat store".into(),
        ));
    }
    let n = full.n_samples();
    let assignment: Vec<usize> = (0..n).map(|i| full.fold_of(i, 0)).collect();
    let plan = FoldPlan::from_assignment(full.n_folds(), assignment.clone())?;
    let mut store = PredictionStore::new(
        full.labels().clone(),
        full.config_ids().to_vec(),
        1,
        full.n_folds(),
        assignment,
    )?;
    let outcome = drive(&mut store, &plan, metric, settings, |fold, configs, store| {
        for &j in configs {
            let column = full.column(j, 0);
            for i in plan.test_rows(fold) {
                store.set(i, j, 0, column[i])?;
            }
        }
        Ok(Vec::new())
    })?;
    Ok((outcome, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Labels;

    fn settings(seed: u64, alpha_drop: f64, min_oos: usize) -> BcedSettings {
        BcedSettings {
            bbc: BbcSettings {
                seed,
                ..BbcSettings::default()
            },
            alpha_drop,
            min_oos,
        }
    }

    #[test]
    fn wrong_config_dropped_after_first_fold() {
        let n = 100;
        let folds: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let full = PredictionStore::from_columns(
            Labels::new(vec![1.0; n]).unwrap(),
            vec!["right".into(), "wrong".into()],
            10,
            folds,
            &[vec![1.0; n], vec![0.0; n]],
        )
        .unwrap();
        let (outcome, ragged) = bced_on_store(&full, Metric::ZeroOne, &settings(1, 0.99, 10)).unwrap();
        assert_eq!(outcome.drops.len(), 1);
        assert_eq!(outcome.drops[0].fold, 1);
        assert_eq!(outcome.drops[0].config, 1);
        assert_eq!(outcome.drops[0].p_hat, 1.0);
        assert_eq!(outcome.fold_trainings + 1, 12);
        assert_eq!(outcome.selected, 0);
        assert_eq!(ragged.present_count(1, &(0..n).collect::<Vec<_>>()), 10);
    }

    #[test]
    fn min_oos_never_reached_means_no_test() {
        let n = 40;
        let full = PredictionStore::from_columns(
            Labels::new(vec![1.0; n]).unwrap(),
            vec!["a".into(), "b".into()],
            4,
            (0..n).map(|i| i % 4).collect(),
            &[vec![1.0; n], vec![0.0; n]],
        )
        .unwrap();
        let (outcome, _) = bced_on_store(&full, Metric::ZeroOne, &settings(2, 0.99, 31)).unwrap();
        assert!(outcome.drops.is_empty());
        assert_eq!(outcome.fold_trainings, 8);
    }

    #[test]
    fn settings_are_checked() {
        assert!(settings(0, 0.5, 50).validate(Metric::ZeroOne).is_err());
        assert!(settings(0, 1.01, 50).validate(Metric::ZeroOne).is_err());
        assert!(settings(0, 0.9, 1).validate(Metric::Auc).is_err());
        assert!(settings(0, 1.0, 2).validate(Metric::Auc).is_ok());
    }
}
