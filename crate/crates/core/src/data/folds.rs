use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Shuffled k-fold partition of `n` rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub val_fraction: f64,
    /// Test fold of every row.
    pub assignments: Vec<usize>,
}

/// Row indices for one fold. All three sets are disjoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn kfold_split(n: usize, k: usize, seed: u64, val_fraction: f64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!("cannot split {n} rows into {k} folds")));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "folds"));
    let mut assignments = vec![0; n];
    // Contiguous chunks of the shuffled order; the first n % k folds get one extra row.
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &row in &order[start..start + size] {
            assignments[row] = fold;
        }
        start += size;
    }
    Ok(FoldPlan {
        k,
        seed,
        val_fraction,
        assignments,
    })
}

impl FoldPlan {
    pub fn n_rows(&self) -> usize {
        self.assignments.len()
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&r| self.assignments[r] == fold)
            .collect()
    }

    pub fn fold(&self, index: usize) -> Result<Fold> {
        if index >= self.k {
            return Err(Error::InvalidArgument(format!(
                "fold {index} out of range for k={}",
                self.k
            )));
        }
        let test = self.test_rows(index);
        let mut rest: Vec<usize> = (0..self.n_rows())
            .filter(|&r| self.assignments[r] != index)
            .collect();
        rest.shuffle(&mut rng::stream(self.seed, &format!("val-{index}")));
        let n_val = (self.val_fraction * rest.len() as f64).round() as usize;
        let mut val = rest[..n_val].to_vec();
        let mut train = rest[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        Ok(Fold {
            index,
            train,
            val,
            test,
        })
    }

    pub fn folds(&self) -> impl Iterator<Item = Fold> + '_ {
        (0..self.k).map(|i| self.fold(i).expect("index below k"))
    }
}
