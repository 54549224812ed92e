use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const FOLDS: usize = 5;

/// Share of each training split held out for early stopping.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// One cross-validation round. All three index sets are disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    /// Training plus validation indices, for models without early stopping.
    pub fn fit_indices(&self) -> Vec<usize> {
        self.train.iter().chain(&self.validation).copied().collect()
    }
}

/// Seed for anything fold-specific, derived from the run seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    let mut z = seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shuffle `0..n` with `seed` and cut it into `folds` contiguous parts whose
/// sizes differ by at most one (larger parts first).
pub fn partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds == 0 || n < folds {
        return Err(Error::Config(format!(
            "cannot split {n} samples into {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut parts = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        parts.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(parts)
}

/// Five-fold split with a validation carve-out from each training split.
pub fn five_fold_split(n: usize, seed: u64) -> Result<Vec<Fold>> {
    let parts = partition(n, FOLDS, seed)?;
    let mut folds = Vec::with_capacity(FOLDS);
    for (index, test) in parts.iter().enumerate() {
        let mut rest: Vec<usize> = parts
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != index)
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        rest.shuffle(&mut ChaCha8Rng::seed_from_u64(fold_seed(seed, index)));
        let n_val = ((rest.len() as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, rest.len() - 1);
        let validation = rest.split_off(rest.len() - n_val);
        folds.push(Fold {
            index,
            train: rest,
            validation,
            test: test.clone(),
        });
    }
    Ok(folds)
}
