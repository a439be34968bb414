use serde::{Deserialize, Serialize};

use crate::metrics::{Metric, MetricError};
use crate::par;
use crate::resampling::{bootstrap_draw, percentile_ci, BootstrapDraw, SeedPlan, StreamTag, MAX_REDRAWS};
use crate::selection::{select, SelectionError, SelectionMode};
use crate::store::{PredictionStore, RowWeights, Scorer};

use super::{ProtocolError, ProtocolKind, ProtocolReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BbcSettings {
    pub bootstraps: usize,
    /// Miscoverage of the percentile interval.
    pub alpha: f64,
    pub seed: u64,
    pub mode: SelectionMode,
}

impl Default for BbcSettings {
    fn default() -> Self {
        BbcSettings {
            bootstraps: 1000,
            alpha: 0.05,
            seed: 0,
            mode: SelectionMode::Pooled,
        }
    }
}

impl BbcSettings {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.bootstraps < 100 {
            return Err(ProtocolError::Invalid(format!(
                "at least 100 bootstraps are needed, got {}",
                self.bootstraps
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ProtocolError::Invalid(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if ((self.alpha / 2.0) * self.bootstraps as f64 + 1e-9).floor() < 1.0 {
            return Err(ProtocolError::Invalid(format!(
                "{} bootstraps are too few for alpha {}",
                self.bootstraps, self.alpha
            )));
        }
        Ok(())
    }
}

/// Per-iteration record kept when tracing is requested.
#[derive(Clone, Debug, PartialEq)]
pub struct BbcTrace {
    pub draws: Vec<BootstrapDraw>,
    /// `[b][r]`: the sample indices, with multiplicity, whose repeat-`r`
    /// cells entered the in-bag selection of iteration `b`.
    pub in_bag_by_repeat: Vec<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BbcResult {
    /// Mean out-of-bag loss of the in-bag winners.
    pub loss: f64,
    /// Percentile interval of the per-iteration losses.
    pub ci: (f64, f64),
    pub losses: Vec<f64>,
    /// In-bag winner per iteration.
    pub winners: Vec<usize>,
    /// Winner on all rows, and its uncorrected loss.
    pub selected: usize,
    pub selected_loss: f64,
    pub trace: Option<BbcTrace>,
}

impl BbcResult {
    pub fn report(&self, store: &PredictionStore, metric: Metric, settings: &BbcSettings) -> ProtocolReport {
        let mut report = ProtocolReport::new(
            ProtocolKind::Bbc,
            metric,
            settings.mode,
            self.loss,
            self.selected,
            store.config_ids()[self.selected].clone(),
        )
        .with_loss_ci(self.ci.0, self.ci.1);
        report.per_bootstrap_losses = Some(self.losses.clone());
        report.cvt_estimate = Some(metric.from_loss(self.selected_loss));
        report
    }
}

/// Bootstrap bias correction over pooled predictions.
///
/// Iteration `b` draws rows from stream `(Bootstrap, b)`, selects the winner
/// on the in-bag rows and scores it on the out-of-bag rows. Draws on which
/// selection or scoring is impossible (too few cells, single-class AUC) are
/// redrawn from the same stream. Rows are resampled as whole samples, so all
/// repeats of a sample enter or leave together. `alive` restricts the
/// candidate configurations.
pub fn bbc(
    store: &PredictionStore,
    metric: Metric,
    settings: &BbcSettings,
    alive: Option<&[bool]>,
) -> Result<BbcResult, ProtocolError> {
    run(store, metric, settings, alive, false)
}

/// [`bbc`] that also records every draw.
pub fn bbc_traced(
    store: &PredictionStore,
    metric: Metric,
    settings: &BbcSettings,
    alive: Option<&[bool]>,
) -> Result<BbcResult, ProtocolError> {
    run(store, metric, settings, alive, true)
}

type Iteration = (f64, usize, Option<(BootstrapDraw, Vec<Vec<usize>>)>);

fn run(
    store: &PredictionStore,
    metric: Metric,
    settings: &BbcSettings,
    alive: Option<&[bool]>,
    keep_trace: bool,
) -> Result<BbcResult, ProtocolError> {
    settings.validate()?;
    let n = store.n_samples();
    let all_alive = vec![true; store.n_configs()];
    let alive = alive.unwrap_or(&all_alive);
    let scorer = Scorer::new(store, metric);
    let overall = select(&scorer, &RowWeights::all(n), alive, settings.mode)?;
    let seeds = SeedPlan::new(settings.seed);

    let iterations: Vec<Result<Iteration, ProtocolError>> = par::map_range(settings.bootstraps, |b| {
        let mut rng = seeds.stream(StreamTag::Bootstrap, b as u64);
        for _ in 0..MAX_REDRAWS {
            let draw = bootstrap_draw(n, &mut rng)?;
            let in_bag = RowWeights::from_counts(&draw.counts(n));
            let winner = match select(&scorer, &in_bag, alive, settings.mode) {
                Ok(outcome) => outcome.best_index,
                Err(SelectionError::NoEligibleConfig) | Err(SelectionError::Metric(MetricError::Degenerate(_))) => {
                    continue
                }
                Err(e) => return Err(e.into()),
            };
            let out_bag = RowWeights::from_rows(n, &draw.out_bag);
            let loss = match scorer.pooled_loss(winner, &out_bag) {
                Ok(Some(l)) => l,
                Ok(None) | Err(MetricError::Degenerate(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            let trace = keep_trace.then(|| {
                let by_repeat = (0..store.n_repeats())
                    .map(|r| scorer.weighted_cells(winner, &in_bag, r))
                    .collect();
                (draw, by_repeat)
            });
            return Ok((loss, winner, trace));
        }
        Err(crate::resampling::ResampleError::RedrawExhausted(MAX_REDRAWS).into())
    });

    let mut losses = Vec::with_capacity(settings.bootstraps);
    let mut winners = Vec::with_capacity(settings.bootstraps);
    let mut trace = keep_trace.then(|| BbcTrace {
        draws: Vec::new(),
        in_bag_by_repeat: Vec::new(),
    });
    for it in iterations {
        let (loss, winner, t) = it?;
        losses.push(loss);
        winners.push(winner);
        if let (Some(trace), Some((draw, by_repeat))) = (trace.as_mut(), t) {
            trace.draws.push(draw);
            trace.in_bag_by_repeat.push(by_repeat);
        }
    }
    let ci = percentile_ci(&losses, settings.alpha)?;
    Ok(BbcResult {
        loss: losses.iter().sum::<f64>() / losses.len() as f64,
        ci,
        losses,
        winners,
        selected: overall.best_index,
        selected_loss: overall.best_loss(),
        trace,
    })
}
