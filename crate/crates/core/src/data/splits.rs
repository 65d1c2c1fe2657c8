use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MIN_SPLIT_INSTANCES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then a contiguous cut. Validation and test each get
/// `floor(n / 10)` instances and training gets the rest, so 101 instances
/// split 81/10/10.
pub fn make_splits<T: Clone>(instances: &[T], seed: u64) -> Result<DatasetSplit<T>> {
    let n = instances.len();
    if n < MIN_SPLIT_INSTANCES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SPLIT_INSTANCES} instances to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = n / 10;
    let n_train = n - 2 * held;
    let pick = |r: &[usize]| r.iter().map(|&i| instances[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        valid: pick(&order[n_train..n_train + held]),
        test: pick(&order[n_train + held..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportions() {
        let s = make_splits(&(0..100).collect::<Vec<_>>(), 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80, 10, 10));
        let s = make_splits(&(0..101).collect::<Vec<_>>(), 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (81, 10, 10));
        assert!(make_splits(&[0; 9], 1).is_err());
    }

    #[test]
    fn deterministic_and_exhaustive() {
        let xs: Vec<u32> = (0..57).collect();
        let a = make_splits(&xs, 7).unwrap();
        assert_eq!(a, make_splits(&xs, 7).unwrap());
        let mut all: Vec<u32> = a.train.iter().chain(&a.valid).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, xs);
    }
}
