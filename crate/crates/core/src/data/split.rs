use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Day, DayDataset};
use crate::error::{Error, Result};
use crate::util::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Random day-wise partition. The training set gets `floor(n * fraction)`
/// days; both sets keep chronological order.
pub fn split_days(days: &[Day], seed: u64, train_fraction: f64) -> Result<(DayDataset, DayDataset)> {
    let n = days.len();
    if n < 5 {
        return Err(Error::InvalidArgument(format!(
            "need at least 5 whole days to split, got {n}"
        )));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside [0, 1]"
        )));
    }
    let n_train = (n as f64 * train_fraction).floor() as usize;
    if n_train == n || n_train == 0 {
        return Err(Error::InvalidArgument(format!(
            "fraction {train_fraction} leaves an empty split for {n} days"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    // The master seed is used directly so the split depends on nothing else.
    idx.shuffle(&mut rng_from(seed, &[]));
    let (train_idx, test_idx) = idx.split_at(n_train);
    let collect = |ids: &[usize], split| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        DayDataset {
            days: ids.iter().map(|&i| days[i].clone()).collect(),
            split,
        }
    };
    Ok((collect(train_idx, Split::Train), collect(test_idx, Split::Test)))
}
