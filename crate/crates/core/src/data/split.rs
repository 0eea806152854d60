use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::init::rng;

/// Seeded shuffle, then partition into train/val/test.
///
/// Validation and test sizes are `floor(n * ratio)`; train takes the rest.
pub fn split<R: Clone>(records: &[R], ratios: [f64; 3], seed: u64) -> Result<(Vec<R>, Vec<R>, Vec<R>)> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadRatios {
            ratios: ratios.to_vec(),
        });
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng(seed));
    let n = records.len() as f64;
    let n_val = (n * ratios[1] + 1e-9).floor() as usize;
    let n_test = (n * ratios[2] + 1e-9).floor() as usize;
    let n_train = records.len() - n_val - n_test;
    let take = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_val]),
        take(&order[n_train + n_val..]),
    ))
}
