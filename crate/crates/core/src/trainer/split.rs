use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::TrainError;
use crate::math;
use crate::rng::{substream, Domain};

/// Disjoint train/validation/test index lists, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Minimum samples a class needs to be split three ways.
pub const MIN_CLASS_SAMPLES: usize = 5;

/// Stratified 60:20:20 split. Per class the train and validation sizes are
/// `round(0.6 n)` and `round(0.2 n)`; the test set takes the rest.
pub fn split_dataset(labels: &[usize], seed: u64) -> Result<SplitIndices, TrainError> {
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = (0..classes).map(|_| Vec::new()).collect();
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut out = SplitIndices::default();
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < MIN_CLASS_SAMPLES {
            return Err(TrainError::ClassTooSmall { class, count: idx.len() });
        }
        let mut rng = substream(seed, Domain::Split, class as u64, 0);
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = math::round(0.6 * n) as usize;
        let n_val = math::round(0.2 * n) as usize;
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}
