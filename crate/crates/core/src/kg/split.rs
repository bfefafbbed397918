use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, EpisodicDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub fractions: (f64, f64, f64),
    pub seed: u64,
    /// Drop facts whose subject or object occurs fewer times than this
    /// (counted over positive facts, as subject or object) before splitting.
    pub min_occurrences: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { fractions: (0.8, 0.1, 0.1), seed: 0, min_occurrences: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: EpisodicDataset,
    pub valid: EpisodicDataset,
    pub test: EpisodicDataset,
}

/// Seeded uniform split of the positive facts into train/valid/test.
///
/// Partition sizes are `round(n * f_train)`, `round(n * f_valid)` and the
/// remainder. Explicit negatives in `ds` go to the training partition.
pub fn split_dataset(ds: &EpisodicDataset, config: &SplitConfig) -> Result<Splits, DataError> {
    let (a, b, c) = config.fractions;
    if a <= 0.0 || b <= 0.0 || c <= 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidFractions(config.fractions));
    }

    let mut counts: HashMap<usize, usize> = HashMap::new();
    for q in ds.quadruples().iter().filter(|q| q.value) {
        *counts.entry(q.s).or_default() += 1;
        *counts.entry(q.o).or_default() += 1;
    }
    let frequent = |e: usize| counts.get(&e).copied().unwrap_or(0) >= config.min_occurrences;

    let (mut positives, negatives): (Vec<_>, Vec<_>) =
        ds.quadruples().iter().copied().filter(|q| frequent(q.s) && frequent(q.o)).partition(|q| q.value);

    let n = positives.len();
    let n_train = (n as f64 * a).round() as usize;
    let n_valid = ((n as f64 * b).round() as usize).min(n - n_train.min(n));
    let n_test = n.saturating_sub(n_train + n_valid);
    for (name, size) in [("train", n_train), ("valid", n_valid), ("test", n_test)] {
        if size == 0 {
            return Err(DataError::EmptyPartition(name));
        }
    }

    positives.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let test = positives.split_off(n_train + n_valid);
    let valid = positives.split_off(n_train);
    let mut train = positives;
    train.extend(negatives);

    let vocab = ds.vocab().clone();
    Ok(Splits {
        train: EpisodicDataset::new(vocab.clone(), train)?,
        valid: EpisodicDataset::new(vocab.clone(), valid)?,
        test: EpisodicDataset::new(vocab, test)?,
    })
}
