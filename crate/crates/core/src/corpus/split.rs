//! Train/validation/test partitions and cross-validation folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Example indices per partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl CorpusSplit {
    /// Shuffles `0..n` with `seed` and cuts it by `ratios` (train, valid);
    /// the remainder is the test set.
    pub fn new(n: usize, train_ratio: f64, valid_ratio: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_ratio) || valid_ratio < 0.0 || train_ratio + valid_ratio > 1.0 {
            return Err(invalid(format!("bad split ratios {train_ratio}/{valid_ratio}")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (n as f64 * train_ratio).round() as usize;
        let n_valid = ((n as f64 * valid_ratio).round() as usize).min(n - n_train);
        let mut split = CorpusSplit {
            train: idx[..n_train].to_vec(),
            valid: idx[n_train..n_train + n_valid].to_vec(),
            test: idx[n_train + n_valid..].to_vec(),
        };
        split.train.sort_unstable();
        split.valid.sort_unstable();
        split.test.sort_unstable();
        Ok(split)
    }

    /// The 80/10/10 split.
    pub fn standard(n: usize, seed: u64) -> Self {
        Self::new(n, 0.8, 0.1, seed).expect("standard ratios are valid")
    }
}

/// Assigns each of `0..n` to exactly one of `k` folds.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n.max(1) {
        return Err(invalid(format!("cannot make {k} folds from {n} examples")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}
