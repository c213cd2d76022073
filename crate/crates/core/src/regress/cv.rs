use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HvsError, Result};

/// K-fold plan. Fold membership is a pure function of `(seed, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvPlan {
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self { n_folds: 5, seed: 0 }
    }
}

impl CvPlan {
    pub fn new(n_folds: usize, seed: u64) -> Result<Self> {
        if n_folds < 2 {
            return Err(HvsError::InvalidInput(format!("need at least 2 folds, got {n_folds}")));
        }
        Ok(Self { n_folds, seed })
    }

    /// Fold index of each of `n` rows.
    pub fn assignment(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        order.shuffle(&mut rng);
        let mut fold = vec![0; n];
        for (pos, &row) in order.iter().enumerate() {
            fold[row] = pos % self.n_folds;
        }
        fold
    }

    /// `(train, test)` row indices per fold, each sorted ascending.
    pub fn splits(&self, n: usize) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        if self.n_folds < 2 {
            return Err(HvsError::InvalidInput("need at least 2 folds".into()));
        }
        let assign = self.assignment(n);
        let mut out = Vec::with_capacity(self.n_folds);
        for f in 0..self.n_folds {
            let test: Vec<usize> = (0..n).filter(|&i| assign[i] == f).collect();
            let train: Vec<usize> = (0..n).filter(|&i| assign[i] != f).collect();
            if test.len() < 2 {
                return Err(HvsError::FoldTooSmall { fold: f, rows: test.len() });
            }
            out.push((train, test));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn folds_partition_rows_evenly(n in 10usize..300, k in 2usize..10, seed in any::<u64>()) {
            let plan = CvPlan::new(k, seed).unwrap();
            let assign = plan.assignment(n);
            let mut sizes = vec![0usize; k];
            for &f in &assign { sizes[f] += 1; }
            let max = *sizes.iter().max().unwrap();
            let min = *sizes.iter().min().unwrap();
            prop_assert!(max - min <= 1);
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert_eq!(assign, plan.assignment(n));
        }
    }

    #[test]
    fn tiny_fold_is_rejected() {
        let plan = CvPlan::new(5, 1).unwrap();
        assert!(matches!(plan.splits(6), Err(HvsError::FoldTooSmall { .. })));
    }
}
