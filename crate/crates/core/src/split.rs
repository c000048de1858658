//! Repeated K-fold split plans.
//!
//! A plan fixes, for each of `s` independent splits, a partition of the row
//! indices `0..n` into `k` folds whose sizes differ by at most one. Fold
//! membership is a pure function of the stream address, so plans are
//! reproducible across runs and thread counts.

use crate::error::{Error, Result};
use crate::rng::Stream;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Fold assignments for `s` splits of `n` rows into `k` folds.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    n: usize,
    k: usize,
    s: usize,
    /// Flattened `s x n` fold ids.
    assignment: Vec<u32>,
}

/// Shuffle `0..n` and deal round-robin into `k` folds.
pub(crate) fn deal_folds(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold = vec![0u32; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = (pos % k) as u32;
    }
    fold
}

/// Build a plan. Fold shuffles draw from `parent.child("split", j)`.
pub fn make_split_plan(n: usize, k: usize, s: usize, parent: &Stream) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::Config(format!(
            "k_folds must be at least 2, got {k}"
        )));
    }
    if s < 1 {
        return Err(Error::Config("n_splits must be at least 1".into()));
    }
    if n < 2 * k {
        return Err(Error::Config(format!(
            "n={n} is too small for {k}-fold cross-fitting; need n >= {}",
            2 * k
        )));
    }
    let mut assignment = Vec::with_capacity(s * n);
    for j in 0..s {
        let mut rng = parent.child("split", j as u64).rng();
        assignment.extend_from_slice(&deal_folds(n, k, &mut rng));
    }
    Ok(SplitPlan {
        n,
        k,
        s,
        assignment,
    })
}

impl SplitPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// Fold id of `row` in split `split`.
    pub fn fold_of(&self, split: usize, row: usize) -> usize {
        assert!(split < self.s && row < self.n);
        self.assignment[split * self.n + row] as usize
    }

    /// Rows in fold `fold` of split `split`, ascending.
    pub fn fold_rows(&self, split: usize, fold: usize) -> Vec<usize> {
        assert!(fold < self.k);
        (0..self.n)
            .filter(|&i| self.fold_of(split, i) == fold)
            .collect()
    }

    /// Complement of `fold_rows`, ascending: the training rows for that fold.
    pub fn train_rows(&self, split: usize, fold: usize) -> Vec<usize> {
        assert!(fold < self.k);
        (0..self.n)
            .filter(|&i| self.fold_of(split, i) != fold)
            .collect()
    }

    pub fn fold_sizes(&self, split: usize) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for i in 0..self.n {
            sizes[self.fold_of(split, i)] += 1;
        }
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_configurations() {
        let s = Stream::root(0);
        assert!(make_split_plan(100, 1, 1, &s).is_err());
        assert!(make_split_plan(100, 5, 0, &s).is_err());
        let err = make_split_plan(9, 5, 1, &s).unwrap_err().to_string();
        assert!(err.contains("n >= 10"), "{err}");
    }

    #[test]
    fn folds_partition_rows_with_balanced_sizes() {
        let plan = make_split_plan(103, 5, 3, &Stream::root(11)).unwrap();
        for split in 0..3 {
            let sizes = plan.fold_sizes(split);
            assert_eq!(sizes.iter().sum::<usize>(), 103);
            let min = *sizes.iter().min().unwrap();
            let max = *sizes.iter().max().unwrap();
            assert!(max - min <= 1, "{sizes:?}");
            let mut seen = [false; 103];
            for fold in 0..5 {
                for row in plan.fold_rows(split, fold) {
                    assert!(!seen[row]);
                    seen[row] = true;
                }
            }
            assert!(seen.iter().all(|&b| b));
        }
    }

    #[test]
    fn train_rows_complement_fold_rows() {
        let plan = make_split_plan(20, 4, 1, &Stream::root(3)).unwrap();
        for fold in 0..4 {
            let mut all = plan.fold_rows(0, fold);
            all.extend(plan.train_rows(0, fold));
            all.sort_unstable();
            assert_eq!(all, (0..20).collect::<Vec<_>>());
        }
    }

    #[test]
    fn plans_are_reproducible_and_split_dependent() {
        let a = make_split_plan(50, 5, 2, &Stream::root(7)).unwrap();
        let b = make_split_plan(50, 5, 2, &Stream::root(7)).unwrap();
        assert_eq!(a.assignment, b.assignment);
        let per_split: Vec<Vec<u32>> = (0..2)
            .map(|s| (0..50).map(|i| a.fold_of(s, i) as u32).collect())
            .collect();
        assert_ne!(per_split[0], per_split[1]);
    }

    proptest! {
        #[test]
        fn partition_property(n in 10usize..200, k in 2usize..6, seed in 0u64..1000) {
            prop_assume!(n >= 2 * k);
            let plan = make_split_plan(n, k, 1, &Stream::root(seed)).unwrap();
            let sizes = plan.fold_sizes(0);
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            let min = *sizes.iter().min().unwrap();
            let max = *sizes.iter().max().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
