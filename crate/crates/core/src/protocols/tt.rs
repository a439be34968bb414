use serde::{Deserialize, Serialize};

use crate::metrics::{Metric, MetricError};
use crate::selection::{select, SelectionMode};
use crate::store::{PredictionStore, RowWeights, Scorer};

use super::{ProtocolError, ProtocolKind, ProtocolReport};

/// Additive bias correction from per-fold winner gaps, loss orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtResult {
    pub selected: usize,
    /// Fold-averaged loss of the selected configuration.
    pub l_cvt: f64,
    pub tt_bias: f64,
    pub l_tt: f64,
    /// 1-based folds left out because the metric was degenerate on them.
    pub skipped_folds: Vec<usize>,
}

impl TtResult {
    pub fn report(&self, store: &PredictionStore, metric: Metric, mode: SelectionMode) -> ProtocolReport {
        let mut report = ProtocolReport::new(
            ProtocolKind::Tt,
            metric,
            mode,
            self.l_tt,
            self.selected,
            store.config_ids()[self.selected].clone(),
        );
        report.cvt_estimate = Some(metric.from_loss(self.l_cvt));
        report.tt_bias = Some(self.tt_bias);
        report
    }
}

/// `TTBias = mean_k [l_k(j) - min_i l_k(i)]` with `j` the winner under
/// `mode`; the corrected loss is `L_CVT + TTBias`.
///
/// With `skip_degenerate`, folds on which some configuration cannot be
/// scored are left out of both averages instead of failing.
pub fn tt_correct(
    store: &PredictionStore,
    metric: Metric,
    mode: SelectionMode,
    skip_degenerate: bool,
) -> Result<TtResult, ProtocolError> {
    if store.n_repeats() != 1 {
        return Err(ProtocolError::Invalid("TT needs a single-repeat store".into()));
    }
    if !store.is_complete() {
        return Err(ProtocolError::Invalid("TT needs a complete store".into()));
    }
    let n = store.n_samples();
    let c = store.n_configs();
    let scorer = Scorer::new(store, metric);
    let selected = select(&scorer, &RowWeights::all(n), &vec![true; c], mode)?.best_index;

    let mut skipped_folds = Vec::new();
    let (mut gap_sum, mut cvt_sum, mut used) = (0.0, 0.0, 0usize);
    'folds: for k in 0..store.n_folds() {
        let rows: Vec<usize> = (0..n).filter(|&i| store.fold_of(i, 0) == k).collect();
        let weights = RowWeights::from_rows(n, &rows);
        let mut losses = Vec::with_capacity(c);
        for j in 0..c {
            let loss = scorer
                .pooled_loss(j, &weights)
                .and_then(|l| l.ok_or(MetricError::Degenerate("fold has too few predictions")));
            match loss {
                Ok(l) => losses.push(l),
                Err(e) if skip_degenerate && matches!(e, MetricError::Degenerate(_)) => {
                    skipped_folds.push(k + 1);
                    continue 'folds;
                }
                Err(e) => return Err(e.into()),
            }
        }
        let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
        gap_sum += losses[selected] - best;
        cvt_sum += losses[selected];
        used += 1;
    }
    if used == 0 {
        return Err(MetricError::Degenerate("every fold is degenerate").into());
    }
    let l_cvt = cvt_sum / used as f64;
    let tt_bias = gap_sum / used as f64;
    Ok(TtResult {
        selected,
        l_cvt,
        tt_bias,
        l_tt: l_cvt + tt_bias,
        skipped_folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Labels;

    fn store(folds: Vec<usize>, k: usize, columns: &[Vec<f64>]) -> PredictionStore {
        let n = folds.len();
        let ids = (0..columns.len()).map(|j| format!("c{j}")).collect();
        PredictionStore::from_columns(Labels::new(vec![1.0; n]).unwrap(), ids, k, folds, columns).unwrap()
    }

    #[test]
    fn common_fold_winner_has_zero_bias() {
        let s = store(vec![0, 0, 1, 1], 2, &[vec![1., 0., 1., 1.], vec![0., 0., 1., 0.]]);
        let tt = tt_correct(&s, Metric::ZeroOne, SelectionMode::Pooled, false).unwrap();
        assert_eq!(tt.selected, 0);
        assert_eq!(tt.tt_bias, 0.0);
        assert_eq!(tt.l_tt, tt.l_cvt);
    }

    #[test]
    fn leave_one_out_doubles() {
        // A is right on samples 0..3, B only on sample 3
        let s = store(vec![0, 1, 2, 3], 4, &[vec![1., 1., 1., 0.], vec![0., 0., 0., 1.]]);
        let tt = tt_correct(&s, Metric::ZeroOne, SelectionMode::Pooled, false).unwrap();
        assert_eq!(tt.l_cvt, 0.25);
        assert_eq!(tt.l_tt, 2.0 * tt.l_cvt);
    }

    #[test]
    fn crossed_fold_losses() {
        // 10 samples, folds of 5; A wrong on 1 then 2, B wrong on 2 then 1
        let folds: Vec<usize> = (0..10).map(|i| i / 5).collect();
        let wrong = |a: usize, b: usize| -> Vec<f64> {
            (0..10)
                .map(|i| {
                    if (i < 5 && i < a) || (i >= 5 && i - 5 < b) {
                        0.0
                    } else {
                        1.0
                    }
                })
                .collect()
        };
        let s = store(folds, 2, &[wrong(1, 2), wrong(2, 1)]);
        let tt = tt_correct(&s, Metric::ZeroOne, SelectionMode::Pooled, false).unwrap();
        assert_eq!(tt.selected, 0);
        assert!((tt.tt_bias - 0.1).abs() < 1e-15);
        assert!((tt.l_tt - 0.4).abs() < 1e-15);
    }

    #[test]
    fn degenerate_auc_fold() {
        let labels = Labels::new(vec![1., 1., 0., 1.]).unwrap();
        let s = PredictionStore::from_columns(
            labels,
            vec!["a".into()],
            2,
            vec![0, 0, 1, 1],
            &[vec![0.9, 0.8, 0.1, 0.7]],
        )
        .unwrap();
        assert!(matches!(
            tt_correct(&s, Metric::Auc, SelectionMode::Pooled, false),
            Err(ProtocolError::Metric(MetricError::Degenerate(_)))
        ));
        let tt = tt_correct(&s, Metric::Auc, SelectionMode::Pooled, true).unwrap();
        assert_eq!(tt.skipped_folds, vec![1]);
        assert_eq!(tt.tt_bias, 0.0);
    }
}
