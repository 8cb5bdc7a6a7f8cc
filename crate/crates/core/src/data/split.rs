//! Seeded train/validation/test partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// `(train, val, test)` fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fractions(pub f64, pub f64, pub f64);

impl Fractions {
    pub const CLASSIFICATION: Fractions = Fractions(0.5, 0.25, 0.25);

    pub fn validate(&self) -> Result<()> {
        let Fractions(a, b, c) = *self;
        if [a, b, c].iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::invalid("split fractions must be non-negative"));
        }
        if ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions sum to {}, not 1",
                a + b + c
            )));
        }
        Ok(())
    }

    /// Row counts: validation and test are floored, train takes the rest.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let val = (self.1 * n as f64 + 1e-9).floor() as usize;
        let test = (self.2 * n as f64 + 1e-9).floor() as usize;
        (n - val - test, val, test)
    }
}

fn finish(mut s: Split) -> Split {
    s.train.sort_unstable();
    s.val.sort_unstable();
    s.test.sort_unstable();
    s
}

/// Shuffles `0..n` with `seed` and cuts it by [`Fractions::counts`].
pub fn split_random(n: usize, fractions: Fractions, seed: u64) -> Result<Split> {
    fractions.validate()?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (_, nv, nt) = fractions.counts(n);
    let test = idx.split_off(idx.len() - nt);
    let val = idx.split_off(idx.len() - nv);
    Ok(finish(Split {
        train: idx,
        val,
        test,
    }))
}

/// As [`split_random`], but in every split each class count stays within one
/// row of the class's global proportion times the split size. Split sizes
/// match the unstratified counts.
pub fn split_stratified(labels: &[usize], fractions: Fractions, seed: u64) -> Result<Split> {
    fractions.validate()?;
    let n = labels.len();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let active = [fractions.0, fractions.1, fractions.2]
        .iter()
        .filter(|f| **f > 0.0)
        .count();
    for (c, rows) in by_class.iter().enumerate() {
        if !rows.is_empty() && rows.len() < active {
            return Err(Error::Split(format!(
                "class {c} has {} rows, fewer than the {active} non-empty splits",
                rows.len()
            )));
        }
    }

    // Quotas use the realised split shares, so a class's quota in a split is
    // its global proportion times that split's size.
    let (ntr, nv, nt) = fractions.counts(n);
    let share = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let (f_train, f_val, f_test) = (share(ntr), share(nv), share(nt));
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let quota = |c: usize, f: f64| sizes[c] as f64 * f;
    let mut val = apportion(&sizes, f_val, nv, &vec![0; num_classes]);
    let mut test = apportion(&sizes, f_test, nt, &val);

    // Repair classes whose train share drifted by more than one row by moving
    // a single row between two classes inside the validation or test split.
    for _ in 0..4 * num_classes * num_classes + 4 {
        let dev = |c: usize, val: &[usize], test: &[usize]| {
            (sizes[c] - val[c] - test[c]) as f64 - quota(c, f_train)
        };
        let Some(a) = (0..num_classes).find(|&c| dev(c, &val, &test).abs() > 1.0 + 1e-9) else {
            break;
        };
        let over = dev(a, &val, &test) > 0.0;
        let train: Vec<usize> = (0..num_classes)
            .map(|c| sizes[c] - val[c] - test[c])
            .collect();
        let mut moved = false;
        for (split, f) in [(&mut val, f_val), (&mut test, f_test)] {
            let err = |c: usize, s: &[usize]| s[c] as f64 - quota(c, f);
            if (over && err(a, split) < 0.0) || (!over && err(a, split) > 0.0) {
                let partner = (0..num_classes).find(|&b| {
                    b != a
                        && if over {
                            err(b, split) > 0.0 && split[b] > 0
                        } else {
                            err(b, split) < 0.0 && train[b] > 0
                        }
                });
                if let Some(b) = partner {
                    if over {
                        split[a] += 1;
                        split[b] -= 1;
                    } else {
                        split[a] -= 1;
                        split[b] += 1;
                    }
                    moved = true;
                    break;
                }
            }
        }
        if !moved {
            break;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Split {
        train: vec![],
        val: vec![],
        test: vec![],
    };
    for (c, rows) in by_class.iter_mut().enumerate() {
        rows.shuffle(&mut rng);
        let t = rows.split_off(rows.len() - test[c]);
        let v = rows.split_off(rows.len() - val[c]);
        out.train.extend_from_slice(rows);
        out.val.extend(v);
        out.test.extend(t);
    }
    Ok(finish(out))
}

/// Largest-remainder allocation of `total` rows across classes in proportion
/// `f`, never exceeding what `taken` leaves in a class.
fn apportion(sizes: &[usize], f: f64, total: usize, taken: &[usize]) -> Vec<usize> {
    let mut alloc: Vec<usize> = sizes
        .iter()
        .zip(taken)
        .map(|(&s, &t)| ((s as f64 * f + 1e-9).floor() as usize).min(s - t))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    let rem = |c: usize| sizes[c] as f64 * f - alloc[c] as f64;
    order.sort_by(|&a, &b| rem(b).partial_cmp(&rem(a)).unwrap().then(a.cmp(&b)));
    let mut left = total.saturating_sub(alloc.iter().sum());
    while left > 0 {
        let before = left;
        for &c in &order {
            if left == 0 {
                break;
            }
            if alloc[c] + taken[c] < sizes[c] {
                alloc[c] += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }
    alloc
}

/// Keeps a provider's test rows and carves validation out of its train rows
/// at 0.8 / 0.2.
pub fn split_provider(train: &[usize], test: &[usize], seed: u64) -> Split {
    let mut t = train.to_vec();
    t.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let nv = (t.len() as f64 * 0.2 + 1e-9).floor() as usize;
    let val = t.split_off(t.len() - nv);
    finish(Split {
        train: t,
        val,
        test: test.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn covers(s: &Split, n: usize) -> bool {
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        all == (0..n).collect::<Vec<_>>()
    }

    #[test]
    fn banknote_sized_counts() {
        let s = split_random(1372, Fractions::CLASSIFICATION, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (686, 343, 343));
        let labels: Vec<usize> = (0..1372).map(|i| usize::from(i < 610)).collect();
        let s = split_stratified(&labels, Fractions::CLASSIFICATION, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (686, 343, 343));
        assert!(covers(&s, 1372));
    }

    #[test]
    fn all_train() {
        let s = split_random(10, Fractions(1.0, 0.0, 0.0), 3).unwrap();
        assert_eq!(s.train, (0..10).collect::<Vec<_>>());
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn bad_fractions() {
        assert!(split_random(10, Fractions(0.5, 0.5, 0.5), 0).is_err());
        assert!(split_random(10, Fractions(1.5, -0.5, 0.0), 0).is_err());
    }

    #[test]
    fn tiny_class_rejected() {
        let labels = vec![0, 0, 0, 0, 1, 1];
        let err = split_stratified(&labels, Fractions::CLASSIFICATION, 0).unwrap_err();
        assert!(matches!(err, Error::Split(_)));
        assert!(split_stratified(&labels, Fractions(0.5, 0.5, 0.0), 0).is_ok());
    }

    #[test]
    fn deterministic() {
        let labels: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let a = split_stratified(&labels, Fractions::CLASSIFICATION, 9).unwrap();
        let b = split_stratified(&labels, Fractions::CLASSIFICATION, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(
            a,
            split_stratified(&labels, Fractions::CLASSIFICATION, 10).unwrap()
        );
    }

    #[test]
    fn provider() {
        let train: Vec<usize> = (0..50).collect();
        let test: Vec<usize> = (50..60).collect();
        let s = split_provider(&train, &test, 1);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (40, 10, 10));
        assert_eq!(s.test, test);
        assert!(covers(&s, 60));
    }
}
