//! Seeded fold plans, bootstrap draws and percentile intervals.
//!
//! # Stream derivation
//!
//! All randomness comes from [`SeedPlan::stream`]. A stream is a ChaCha8
//! generator keyed with the 32 bytes
//!
//! ```text
//! master_seed (u64, little endian) ‖ tag code (u64, little endian) ‖ 16 zero bytes
//! ```
//!
//! and positioned on ChaCha stream number `counter`. The tag codes are the
//! discriminants of [`StreamTag`]. Any third party holding the master seed can
//! therefore regenerate, say, bootstrap iteration 417 without replaying the
//! 416 iterations before it.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Labels;

/// Redraw bound for bootstrap samples that violate a constraint.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResampleError {
    #[error("fold count {k} exceeds sample count {n}")]
    TooManyFolds { k: usize, n: usize },
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("no samples to partition")]
    Empty,
    #[error("fold id {fold} out of range for {k} folds")]
    FoldOutOfRange { fold: usize, k: usize },
    #[error("fold {0} is empty")]
    EmptyFold(usize),
    #[error("bootstrap needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("no valid bootstrap draw after {0} attempts")]
    RedrawExhausted(usize),
    #[error("percentile interval needs at least {min} values, got {got}")]
    TooFewValues { min: usize, got: usize },
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("non-finite bootstrap value at position {0}")]
    NonFinite(usize),
}

/// Purpose of a random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamTag {
    FoldPlan = 1,
    Bootstrap = 2,
    DropTest = 3,
    SimInstance = 4,
    SimReplicate = 5,
    SimSetting = 6,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master_seed: u64,
}

impl SeedPlan {
    pub fn new(master_seed: u64) -> Self {
        SeedPlan { master_seed }
    }

    pub fn stream(&self, tag: StreamTag, counter: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&(tag as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(counter);
        rng
    }

    /// A child plan whose master seed is the first word of `stream(tag, counter)`.
    pub fn derive(&self, tag: StreamTag, counter: u64) -> SeedPlan {
        SeedPlan::new(self.stream(tag, counter).random())
    }
}

/// Partition of sample indices into `k` folds (0-based fold ids).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    k: usize,
    assignment: Vec<usize>,
}

impl FoldPlan {
    /// Builds a plan from an explicit assignment; every fold must be non-empty.
    pub fn from_assignment(k: usize, assignment: Vec<usize>) -> Result<Self, ResampleError> {
        if assignment.is_empty() {
            return Err(ResampleError::Empty);
        }
        if k < 2 {
            return Err(ResampleError::TooFewFolds(k));
        }
        if k > assignment.len() {
            return Err(ResampleError::TooManyFolds { k, n: assignment.len() });
        }
        let mut seen = vec![false; k];
        for &f in &assignment {
            if f >= k {
                return Err(ResampleError::FoldOutOfRange { fold: f, k });
            }
            seen[f] = true;
        }
        if let Some(f) = seen.iter().position(|s| !s) {
            return Err(ResampleError::EmptyFold(f));
        }
        Ok(FoldPlan { k, assignment })
    }

    /// Stratified plan: within each stratum (class id, or event flag for
    /// survival labels) samples are shuffled and dealt round-robin, the
    /// dealing position carrying over from one stratum to the next so that
    /// overall fold sizes differ by at most one. Continuous labels are
    /// shuffled as a single stratum.
    pub fn stratified(labels: &Labels, k: usize, rng: &mut ChaCha8Rng) -> Result<Self, ResampleError> {
        let n = labels.len();
        Self::check(n, k)?;
        let mut strata: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        match labels.strata() {
            Some(ids) => {
                for (i, s) in ids.into_iter().enumerate() {
                    strata.entry(s).or_default().push(i);
                }
            }
            None => {
                strata.insert(0, (0..n).collect());
            }
        }
        let mut assignment = vec![0; n];
        let mut next = 0;
        for members in strata.values_mut() {
            members.shuffle(rng);
            for &i in members.iter() {
                assignment[i] = next % k;
                next += 1;
            }
        }
        Ok(FoldPlan { k, assignment })
    }

    /// Unstratified plan: one shuffle dealt round-robin.
    pub fn unstratified(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Self, ResampleError> {
        Self::check(n, k)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut assignment = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            assignment[i] = pos % k;
        }
        Ok(FoldPlan { k, assignment })
    }

    fn check(n: usize, k: usize) -> Result<(), ResampleError> {
        if n == 0 {
            return Err(ResampleError::Empty);
        }
        if k < 2 {
            return Err(ResampleError::TooFewFolds(k));
        }
        if k > n {
            return Err(ResampleError::TooManyFolds { k, n });
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_samples(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn fold_of(&self, sample: usize) -> usize {
        self.assignment[sample]
    }

    /// Held-out rows of fold `fold`, ascending.
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    /// Training rows of fold `fold`, ascending.
    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut folds = vec![Vec::new(); self.k];
        for (i, &f) in self.assignment.iter().enumerate() {
            folds[f].push(i);
        }
        folds
    }
}

/// One bootstrap resample of `n` rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapDraw {
    /// Sampled rows in draw order (a multiset of size `n`).
    pub in_bag: Vec<usize>,
    /// Rows never drawn, ascending.
    pub out_bag: Vec<usize>,
}

impl BootstrapDraw {
    pub fn from_in_bag(n: usize, in_bag: Vec<usize>) -> Self {
        let counts = counts(n, &in_bag);
        let out_bag = (0..n).filter(|&i| counts[i] == 0).collect();
        BootstrapDraw { in_bag, out_bag }
    }

    /// Multiplicity of each row in the in-bag sample.
    pub fn counts(&self, n: usize) -> Vec<u32> {
        counts(n, &self.in_bag)
    }

    pub fn distinct_in_bag(&self, n: usize) -> usize {
        n - self.out_bag.len()
    }
}

fn counts(n: usize, rows: &[usize]) -> Vec<u32> {
    let mut c = vec![0u32; n];
    for &i in rows {
        c[i] += 1;
    }
    c
}

/// `n` uniform draws with replacement from `0..n`.
pub fn sample_with_replacement(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Draws a bootstrap sample whose out-of-bag set is non-empty, redrawing
/// from the same stream up to [`MAX_REDRAWS`] times.
pub fn bootstrap_draw(n: usize, rng: &mut ChaCha8Rng) -> Result<BootstrapDraw, ResampleError> {
    if n < 2 {
        return Err(ResampleError::TooFewRows(n));
    }
    for _ in 0..MAX_REDRAWS {
        let draw = BootstrapDraw::from_in_bag(n, sample_with_replacement(n, rng));
        if !draw.out_bag.is_empty() {
            return Ok(draw);
        }
    }
    Err(ResampleError::RedrawExhausted(MAX_REDRAWS))
}

/// Smallest population accepted by [`percentile_ci`].
pub const MIN_CI_VALUES: usize = 20;

/// 1-based order-statistic ranks `(lower, upper)` of the percentile interval.
pub fn percentile_ranks(b: usize, alpha: f64) -> (usize, usize) {
    // The epsilon keeps products such as 0.025 * 1000 on the intended integer.
    let lo = (alpha / 2.0 * b as f64 + 1e-9).floor() as usize;
    let hi = ((1.0 - alpha / 2.0) * b as f64 - 1e-9).ceil() as usize;
    (lo.max(1), hi.min(b).max(1))
}

/// Percentile bootstrap interval `[b_(α/2·B), b_((1−α/2)·B)]`.
pub fn percentile_ci(values: &[f64], alpha: f64) -> Result<(f64, f64), ResampleError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ResampleError::BadAlpha(alpha));
    }
    if values.len() < MIN_CI_VALUES {
        return Err(ResampleError::TooFewValues {
            min: MIN_CI_VALUES,
            got: values.len(),
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(ResampleError::NonFinite(i));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = percentile_ranks(sorted.len(), alpha);
    Ok((sorted[lo - 1], sorted[hi - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        SeedPlan::new(seed).stream(StreamTag::FoldPlan, 0)
    }

    #[test]
    fn balanced_binary_gets_one_of_each_per_fold() {
        let labels = Labels::new(vec![1., 1., 1., 1., 1., 0., 0., 0., 0., 0.]).unwrap();
        let plan = FoldPlan::stratified(&labels, 5, &mut rng(3)).unwrap();
        for fold in plan.folds() {
            assert_eq!(fold.len(), 2);
            let pos = fold.iter().filter(|&&i| labels.values()[i] == 1.0).count();
            assert_eq!(pos, 1);
        }
    }

    #[test]
    fn six_four_split_into_two_folds() {
        let labels = Labels::new(vec![0., 0., 0., 0., 0., 0., 1., 1., 1., 1.]).unwrap();
        let plan = FoldPlan::stratified(&labels, 2, &mut rng(9)).unwrap();
        for fold in plan.folds() {
            let zeros = fold.iter().filter(|&&i| labels.values()[i] == 0.0).count();
            assert_eq!((zeros, fold.len() - zeros), (3, 2));
        }
    }

    #[test]
    fn fold_plan_preconditions() {
        let labels = Labels::new(vec![0.; 7]).unwrap();
        assert_eq!(
            FoldPlan::stratified(&labels, 10, &mut rng(0)),
            Err(ResampleError::TooManyFolds { k: 10, n: 7 })
        );
        assert_eq!(
            FoldPlan::stratified(&labels, 1, &mut rng(0)),
            Err(ResampleError::TooFewFolds(1))
        );
        assert_eq!(FoldPlan::unstratified(0, 2, &mut rng(0)), Err(ResampleError::Empty));
    }

    #[test]
    fn continuous_labels_fall_back_to_unstratified() {
        let labels = Labels::new((0..9).map(|i| i as f64 + 0.5).collect()).unwrap();
        let plan = FoldPlan::stratified(&labels, 3, &mut rng(1)).unwrap();
        assert!(plan.folds().iter().all(|f| f.len() == 3));
    }

    #[test]
    fn complement_of_explicit_draw() {
        let d = BootstrapDraw::from_in_bag(2, vec![0, 0]);
        assert_eq!(d.out_bag, vec![1]);
        assert_eq!(d.counts(2), vec![2, 0]);
    }

    #[test]
    fn bootstrap_rejects_single_row() {
        assert_eq!(bootstrap_draw(1, &mut rng(0)), Err(ResampleError::TooFewRows(1)));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let plan = SeedPlan::new(42);
        let a: Vec<u64> = (0..4).map(|_| plan.stream(StreamTag::Bootstrap, 7).random()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let b: u64 = plan.stream(StreamTag::Bootstrap, 8).random();
        let c: u64 = plan.stream(StreamTag::DropTest, 7).random();
        assert_ne!(a[0], b);
        assert_ne!(a[0], c);
    }

    #[test]
    fn percentile_rank_contract() {
        assert_eq!(percentile_ranks(1000, 0.05), (25, 975));
        assert_eq!(percentile_ranks(100, 0.05), (2, 98));
        let values: Vec<f64> = (1..=1000).map(|v| v as f64).collect();
        assert_eq!(percentile_ci(&values, 0.05).unwrap(), (25.0, 975.0));
        let values: Vec<f64> = (1..=100).rev().map(|v| v as f64).collect();
        assert_eq!(percentile_ci(&values, 0.05).unwrap(), (2.0, 98.0));
        assert_eq!(percentile_ci(&[0.3; 50], 0.05).unwrap(), (0.3, 0.3));
        assert!(matches!(
            percentile_ci(&[0.1; 5], 0.05),
            Err(ResampleError::TooFewValues { .. })
        ));
        assert!(matches!(
            percentile_ci(&[0.1; 50], 1.0),
            Err(ResampleError::BadAlpha(_))
        ));
        let mut v = vec![0.1; 50];
        v[3] = f64::NAN;
        assert_eq!(percentile_ci(&v, 0.1), Err(ResampleError::NonFinite(3)));
    }

    proptest! {
        #[test]
        fn fold_plan_is_a_partition(
            n in 2usize..120,
            k_frac in 0.0f64..1.0,
            classes in 1i64..5,
            seed in any::<u64>(),
        ) {
            let k = 2 + ((n - 2) as f64 * k_frac) as usize;
            let mut r = rng(seed);
            let labels: Vec<f64> = (0..n).map(|_| r.random_range(0..classes) as f64).collect();
            let labels = Labels::new(labels).unwrap();
            let plan = FoldPlan::stratified(&labels, k, &mut r).unwrap();
            let folds = plan.folds();
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(folds.iter().all(|f| !f.is_empty()));
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for c in 0..classes {
                let per: Vec<usize> = folds.iter()
                    .map(|f| f.iter().filter(|&&i| labels.values()[i] == c as f64).count())
                    .collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
        }

        #[test]
        fn draws_split_the_index_set(n in 2usize..200, seed in any::<u64>()) {
            let d = bootstrap_draw(n, &mut rng(seed)).unwrap();
            prop_assert_eq!(d.in_bag.len(), n);
            let counts = d.counts(n);
            for (i, &count) in counts.iter().enumerate() {
                prop_assert_eq!(count == 0, d.out_bag.binary_search(&i).is_ok());
            }
            prop_assert!(!d.out_bag.is_empty());
        }

        #[test]
        fn wider_alpha_never_widens(values in proptest::collection::vec(-5.0f64..5.0, 20..300),
                                    a in 0.01f64..0.98, b in 0.01f64..0.98) {
            let (small, large) = if a < b { (a, b) } else { (b, a) };
            let (l1, u1) = percentile_ci(&values, small).unwrap();
            let (l2, u2) = percentile_ci(&values, large).unwrap();
            prop_assert!(l2 >= l1 && u2 <= u1);
        }
    }
}
