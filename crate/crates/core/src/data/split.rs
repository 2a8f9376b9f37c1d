use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::schema::{SplitSize, SplitSpec};
use crate::error::{Error, Result};

/// Fixed-length slot list for one field: values in input order, truncated to
/// `max` or padded with `unknown`.
pub fn pad_multivalued(values: &[u32], max: usize, unknown: u32) -> Vec<u32> {
    let mut out: Vec<u32> = values.iter().copied().take(max).collect();
    out.resize(max, unknown);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Resolves a split spec to `(val, test)` counts for `n` rows. Fractions are
/// floored; the remainder goes to training.
pub fn split_sizes(n: usize, spec: &SplitSpec) -> Result<(usize, usize)> {
    let (val, test) = match (spec.val, spec.test) {
        (SplitSize::Count(v), SplitSize::Count(t)) => (v, t),
        (SplitSize::Fraction(v), SplitSize::Fraction(t)) => {
            if !(0.0..=1.0).contains(&v) || !(0.0..=1.0).contains(&t) || v + t > 1.0 {
                return Err(Error::Config(format!("invalid split fractions {v}, {t}")));
            }
            (
                (v * n as f64).floor() as usize,
                (t * n as f64).floor() as usize,
            )
        }
        _ => {
            return Err(Error::Config(
                "validation and test sizes must both be counts or both fractions".into(),
            ))
        }
    };
    if val + test > n {
        return Err(Error::Config(format!(
            "requested {val} validation + {test} test rows from only {n}"
        )));
    }
    Ok((val, test))
}

/// Uniform random disjoint split. Each part keeps the input order.
pub fn make_splits<T>(items: Vec<T>, spec: &SplitSpec, seed: u64) -> Result<Splits<T>> {
    let n = items.len();
    let (n_val, n_test) = split_sizes(n, spec)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // 0 = train, 1 = val, 2 = test
    let mut part = vec![0u8; n];
    for &i in &perm[..n_val] {
        part[i] = 1;
    }
    for &i in &perm[n_val..n_val + n_test] {
        part[i] = 2;
    }
    let mut splits = Splits {
        train: Vec::with_capacity(n - n_val - n_test),
        val: Vec::with_capacity(n_val),
        test: Vec::with_capacity(n_test),
    };
    for (item, p) in items.into_iter().zip(part) {
        match p {
            1 => splits.val.push(item),
            2 => splits.test.push(item),
            _ => splits.train.push(item),
        }
    }
    Ok(splits)
}
