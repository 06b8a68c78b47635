use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Disjoint train/validation/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

pub(crate) fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    Ok(())
}

/// Part sizes by largest remainder: floors first, then leftover items go to
/// the largest fractional parts (earlier part wins ties).
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    check_ratios(ratios)?;
    let exact = ratios.map(|r| r * n as f64);
    // absorb representation error such as 87/123·123 = 86.999…
    let mut sizes = exact.map(|e| (e + 1e-9).floor() as usize);
    let frac = [0, 1, 2].map(|i| exact[i] - sizes[i] as f64);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));
    let mut left = n.saturating_sub(sizes.iter().sum());
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Seeded shuffle, then contiguous slices of [`split_sizes`].
pub fn split_dataset<T>(mut cases: Vec<T>, ratios: [f64; 3], seed: u64) -> Result<Split<T>> {
    if cases.len() < 3 {
        return Err(Error::TooFewCases(cases.len()));
    }
    let [a, b, _] = split_sizes(cases.len(), ratios)?;
    cases.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = cases.split_off(a + b);
    let val = cases.split_off(a);
    Ok(Split { train: cases, val, test })
}
