use crate::metrics::Metric;
use crate::par;
use crate::pipeline::{LearnerError, Pipeline};
use crate::resampling::FoldPlan;
use crate::selection::{argmin, config_loss, select, SelectionMode};
use crate::store::{PredictionStore, RowWeights, Scorer};

use super::{check_plan, FailedConfig, ProtocolError, ProtocolKind, ProtocolReport, ProtocolRun};

/// A train/test split.
pub(crate) struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub(crate) fn fold_splits(plan: &FoldPlan, folds: &[usize]) -> Vec<Split> {
    folds
        .iter()
        .map(|&k| Split {
            train: plan.train_rows(k),
            test: plan.test_rows(k),
        })
        .collect()
}

fn train_predict<P: Pipeline>(pipeline: &P, config: usize, split: &Split) -> Result<Vec<f64>, LearnerError> {
    let model = pipeline.fit(config, &split.train)?;
    let predictions = pipeline.predict(&model, &split.test)?;
    if predictions.len() != split.test.len() {
        return Err(LearnerError::Failed(format!(
            "{} predictions for {} rows",
            predictions.len(),
            split.test.len()
        )));
    }
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(LearnerError::Failed("non-finite prediction".into()));
    }
    Ok(predictions)
}

/// Trains every config on every split; results are split-major.
pub(crate) fn run_jobs<P: Pipeline>(
    pipeline: &P,
    splits: &[Split],
    configs: &[usize],
) -> Vec<Result<Vec<f64>, LearnerError>> {
    let c = configs.len();
    par::map_range(splits.len() * c, |job| {
        train_predict(pipeline, configs[job % c], &splits[job / c])
    })
}

/// Fills `folds` of `repeat` for `configs` (pipeline index = store column).
/// Returns the failures, first failing fold per configuration.
pub(crate) fn fill_folds<P: Pipeline>(
    pipeline: &P,
    plan: &FoldPlan,
    folds: &[usize],
    configs: &[usize],
    store: &mut PredictionStore,
    repeat: usize,
) -> Result<Vec<FailedConfig>, ProtocolError> {
    let splits = fold_splits(plan, folds);
    let results = run_jobs(pipeline, &splits, configs);
    let mut failures: Vec<FailedConfig> = Vec::new();
    for (job, result) in results.into_iter().enumerate() {
        let (split, config) = (&splits[job / configs.len()], configs[job % configs.len()]);
        match result {
            Ok(predictions) => {
                for (&i, &p) in split.test.iter().zip(&predictions) {
                    store.set(i, config, repeat, p)?;
                }
            }
            Err(e) => {
                let fold = folds[job / configs.len()];
                if !failures.iter().any(|f| f.config == config) {
                    failures.push(FailedConfig {
                        config,
                        config_id: store.config_ids()[config].clone(),
                        fold: fold + 1,
                        message: e.to_string(),
                    });
                }
            }
        }
    }
    for f in &failures {
        for i in 0..store.n_samples() {
            store.clear(i, f.config, repeat);
        }
    }
    failures.sort_by_key(|f| f.config);
    Ok(failures)
}

fn fit_final<P: Pipeline>(pipeline: &P, config: usize) -> Result<P::Model, ProtocolError> {
    let all: Vec<usize> = (0..pipeline.n_samples()).collect();
    pipeline.fit(config, &all).map_err(|source| ProtocolError::Learner {
        config,
        fold: 0,
        source,
    })
}

/// Plain K-fold cross-validation of one configuration.
///
/// The estimate is the mean of the per-fold losses; the returned store holds
/// the single column of out-of-sample predictions.
pub fn run_cv<P: Pipeline>(
    pipeline: &P,
    config: usize,
    plan: &FoldPlan,
    metric: Metric,
) -> Result<ProtocolRun<P::Model>, ProtocolError> {
    check_plan(pipeline, plan)?;
    let id = pipeline.config_ids()[config].clone();
    let folds: Vec<usize> = (0..plan.k()).collect();
    let splits = fold_splits(plan, &folds);
    let results = par::map_range(splits.len(), |k| train_predict(pipeline, config, &splits[k]));
    let labels = pipeline.labels().clone();
    let mut store = PredictionStore::new(labels, vec![id.clone()], 1, plan.k(), plan.assignment().to_vec())?;
    let mut fold_losses = Vec::with_capacity(plan.k());
    for (k, result) in results.into_iter().enumerate() {
        let predictions = result.map_err(|source| ProtocolError::Learner {
            config,
            fold: k + 1,
            source,
        })?;
        let test = &splits[k].test;
        let fold_labels = store.labels().gather(test);
        fold_losses.push(metric.loss(fold_labels.view(), &predictions)?);
        for (&i, &p) in test.iter().zip(&predictions) {
            store.set(i, 0, 0, p)?;
        }
    }
    let loss = fold_losses.iter().sum::<f64>() / fold_losses.len() as f64;
    let model = fit_final(pipeline, config)?;
    let mut report = ProtocolReport::new(ProtocolKind::Cv, metric, SelectionMode::FoldAveraged, loss, config, id);
    report.models_trained = plan.k() as u64 + 1;
    Ok(ProtocolRun {
        report,
        model,
        store: Some(store),
    })
}

/// Cross-validation with tuning over every configuration of the pipeline.
pub fn run_cvt<P: Pipeline>(
    pipeline: &P,
    plan: &FoldPlan,
    metric: Metric,
    mode: SelectionMode,
) -> Result<ProtocolRun<P::Model>, ProtocolError> {
    run_cvt_repeated(pipeline, std::slice::from_ref(plan), metric, mode)
}

/// CVT repeated over several fold plans; the store gets one repeat per plan
/// and selection pools every repeat.
pub fn run_cvt_repeated<P: Pipeline>(
    pipeline: &P,
    plans: &[FoldPlan],
    metric: Metric,
    mode: SelectionMode,
) -> Result<ProtocolRun<P::Model>, ProtocolError> {
    let first = plans
        .first()
        .ok_or_else(|| ProtocolError::Invalid("no fold plan".into()))?;
    if plans.iter().any(|p| p.k() != first.k()) {
        return Err(ProtocolError::Invalid("repeats must share the fold count".into()));
    }
    for plan in plans {
        check_plan(pipeline, plan)?;
    }
    let ids = pipeline.config_ids();
    let c = ids.len();
    let fold_of: Vec<usize> = plans.iter().flat_map(|p| p.assignment().iter().copied()).collect();
    let mut store = PredictionStore::new(pipeline.labels().clone(), ids.clone(), plans.len(), first.k(), fold_of)?;
    let configs: Vec<usize> = (0..c).collect();
    let folds: Vec<usize> = (0..first.k()).collect();
    let mut failed: Vec<FailedConfig> = Vec::new();
    for (r, plan) in plans.iter().enumerate() {
        for f in fill_folds(pipeline, plan, &folds, &configs, &mut store, r)? {
            if !failed.iter().any(|g| g.config == f.config) {
                failed.push(f);
            }
        }
    }
    failed.sort_by_key(|f| f.config);
    let mut alive = vec![true; c];
    for f in &failed {
        alive[f.config] = false;
        for r in 0..plans.len() {
            for i in 0..store.n_samples() {
                store.clear(i, f.config, r);
            }
        }
    }
    if !alive.iter().any(|&a| a) {
        return Err(ProtocolError::AllConfigsFailed);
    }
    let scorer = Scorer::new(&store, metric);
    let outcome = select(&scorer, &RowWeights::all(store.n_samples()), &alive, mode)?;
    let best = outcome.best_index;
    let loss = outcome.best_loss();
    drop(scorer);
    let model = fit_final(pipeline, best)?;
    let mut report = ProtocolReport::new(ProtocolKind::Cvt, metric, mode, loss, best, ids[best].clone());
    report.models_trained = (plans.len() * first.k() * c) as u64 + 1;
    report.failed_configs = failed;
    report.cvt_estimate = Some(report.estimate);
    Ok(ProtocolRun {
        report,
        model,
        store: Some(store),
    })
}

/// Nested cross-validation: the outer loop cross-validates the whole tuning
/// procedure (CVT on the `K - 1` remaining folds); the final model and
/// selected configuration are those of CVT on all data.
pub fn run_ncv<P: Pipeline>(
    pipeline: &P,
    plan: &FoldPlan,
    metric: Metric,
    mode: SelectionMode,
) -> Result<ProtocolRun<P::Model>, ProtocolError> {
    check_plan(pipeline, plan)?;
    let k = plan.k();
    let c = pipeline.n_configs();
    let labels = pipeline.labels();
    let configs: Vec<usize> = (0..c).collect();
    let mut outer_losses = Vec::with_capacity(k);
    let mut trainings = 0u64;
    for outer in 0..k {
        let outer_train = plan.train_rows(outer);
        let inner_fold: Vec<usize> = outer_train
            .iter()
            .map(|&i| {
                let f = plan.fold_of(i);
                if f < outer {
                    f
                } else {
                    f - 1
                }
            })
            .collect();
        let splits: Vec<Split> = (0..k - 1)
            .map(|f| Split {
                train: outer_train
                    .iter()
                    .zip(&inner_fold)
                    .filter(|(_, &g)| g != f)
                    .map(|(&i, _)| i)
                    .collect(),
                test: outer_train
                    .iter()
                    .zip(&inner_fold)
                    .filter(|(_, &g)| g == f)
                    .map(|(&i, _)| i)
                    .collect(),
            })
            .collect();
        let results = run_jobs(pipeline, &splits, &configs);
        trainings += results.len() as u64;

        let local: std::collections::HashMap<usize, usize> =
            outer_train.iter().enumerate().map(|(l, &i)| (i, l)).collect();
        let mut inner = PredictionStore::new(labels.gather(&outer_train), pipeline.config_ids(), 1, k - 1, inner_fold)?;
        let mut alive = vec![true; c];
        for (job, result) in results.into_iter().enumerate() {
            let (split, config) = (&splits[job / c], job % c);
            match result {
                Ok(predictions) => {
                    for (&i, &p) in split.test.iter().zip(&predictions) {
                        inner.set(local[&i], config, 0, p)?;
                    }
                }
                Err(_) => alive[config] = false,
            }
        }
        if !alive.iter().any(|&a| a) {
            return Err(ProtocolError::AllConfigsFailed);
        }
        let scorer = Scorer::new(&inner, metric);
        let all = RowWeights::all(inner.n_samples());
        let losses: Vec<Option<f64>> = (0..c)
            .map(|j| {
                if alive[j] {
                    config_loss(&scorer, j, &all, mode)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_, _>>()?;
        let winner = argmin(&losses).ok_or(crate::selection::SelectionError::NoEligibleConfig)?;

        let outer_split = Split {
            train: outer_train,
            test: plan.test_rows(outer),
        };
        trainings += 1;
        let predictions = train_predict(pipeline, winner, &outer_split).map_err(|source| ProtocolError::Learner {
            config: winner,
            fold: outer + 1,
            source,
        })?;
        outer_losses.push(metric.loss(labels.gather(&outer_split.test).view(), &predictions)?);
    }
    let loss = outer_losses.iter().sum::<f64>() / k as f64;
    let cvt = run_cvt(pipeline, plan, metric, mode)?;
    let mut report = ProtocolReport::new(
        ProtocolKind::Ncv,
        metric,
        mode,
        loss,
        cvt.report.selected_config,
        cvt.report.selected_config_id.clone(),
    );
    report.models_trained = trainings + cvt.report.models_trained;
    report.failed_configs = cvt.report.failed_configs.clone();
    report.cvt_estimate = Some(cvt.report.estimate);
    Ok(ProtocolRun {
        report,
        model: cvt.model,
        store: cvt.store,
    })
}
