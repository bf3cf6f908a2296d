//! User-level train/validation/test splitting and biased downsampling of
//! non-overlapping users.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Train,
    Val,
    Test,
}

/// Per-(domain, user) split assignment plus downsampling marks.
#[derive(Debug, Clone)]
pub struct SplitAssignment {
    /// `assign[domain][user] -> Assignment` for users active in the domain.
    pub assign: Vec<BTreeMap<u32, Assignment>>,
    /// Non-overlapping train/val users removed by downsampling. Their
    /// ratings are treated as unavailable; their sequences stay visible as
    /// the unexposed pool.
    pub dropped: Vec<BTreeSet<u32>>,
}

impl SplitAssignment {
    pub fn users_with(&self, domain: usize, a: Assignment) -> Vec<u32> {
        self.assign[domain]
            .iter()
            .filter(|&(_, &v)| v == a)
            .map(|(&u, _)| u)
            .collect()
    }

    pub fn is_dropped(&self, domain: usize, user: u32) -> bool {
        self.dropped[domain].contains(&user)
    }
}

/// Disjoint 80/10/10 user split per domain, deterministic under `seed`.
/// Exact integer arithmetic: `n·8/10` train users and `n·1/10` validation
/// users, remainder to test (10 users split 8/1/1).
pub fn split_users(domain_users: &[Vec<u32>], seed: u64) -> Result<SplitAssignment> {
    let total: BTreeSet<u32> = domain_users.iter().flatten().copied().collect();
    if total.len() < 10 {
        return Err(Error::Config(format!("need at least 10 users to split, got {}", total.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = Vec::with_capacity(domain_users.len());
    for users in domain_users {
        let mut shuffled = users.clone();
        shuffled.sort_unstable();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let n = shuffled.len();
        let n_train = n * 8 / 10;
        let n_val = n / 10;
        let mut map = BTreeMap::new();
        for (idx, &u) in shuffled.iter().enumerate() {
            let a = if idx < n_train {
                Assignment::Train
            } else if idx < n_train + n_val {
                Assignment::Val
            } else {
                Assignment::Test
            };
            map.insert(u, a);
        }
        assign.push(map);
    }
    let dropped = vec![BTreeSet::new(); domain_users.len()];
    Ok(SplitAssignment { assign, dropped })
}

/// Number of non-overlapping users retained for one split: the pool of
/// non-overlapping users across all domains, scaled by the keep ratio and
/// the split fraction, floored once at the end.
pub fn ku_retained_count(pool: usize, keep_ratio: f64, split_fraction: f64) -> usize {
    (pool as f64 * keep_ratio * split_fraction).floor() as usize
}

/// Downsample non-overlapping users in train and validation to fraction
/// `keep_ratio`, uniformly under `seed`. Overlapping users and the test
/// split are never touched; `keep_ratio = 1.0` is the identity.
pub fn apply_ku(
    split: &mut SplitAssignment,
    overlapping: &BTreeSet<u32>,
    keep_ratio: f64,
    seed: u64,
) -> Result<()> {
    if keep_ratio <= 0.0 || keep_ratio > 1.0 {
        return Err(Error::Config(format!("keep ratio must be in (0, 1], got {keep_ratio}")));
    }
    if keep_ratio == 1.0 {
        return Ok(());
    }
    // Non-overlapping users counted once each; they are active in exactly
    // one domain.
    let pool: usize = split
        .assign
        .iter()
        .map(|m| m.keys().filter(|u| !overlapping.contains(u)).count())
        .sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (which, fraction) in [(Assignment::Train, 0.8), (Assignment::Val, 0.1)] {
        // Joint candidate list over domains, deterministic order.
        let mut candidates: Vec<(usize, u32)> = Vec::new();
        for (z, m) in split.assign.iter().enumerate() {
            for (&u, &a) in m {
                if a == which && !overlapping.contains(&u) {
                    candidates.push((z, u));
                }
            }
        }
        let retained = ku_retained_count(pool, keep_ratio, fraction).min(candidates.len());
        for i in (1..candidates.len()).rev() {
            candidates.swap(i, rng.gen_range(0..=i));
        }
        for &(z, u) in candidates.iter().skip(retained) {
            split.dropped[z].insert(u);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_users_split_eight_one_one() {
        let users: Vec<u32> = (0..10).collect();
        let split = split_users(&[users], 3).unwrap();
        assert_eq!(split.users_with(0, Assignment::Train).len(), 8);
        assert_eq!(split.users_with(0, Assignment::Val).len(), 1);
        assert_eq!(split.users_with(0, Assignment::Test).len(), 1);
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let users: Vec<u32> = (0..57).collect();
        let a = split_users(&[users.clone(), users.clone()], 11).unwrap();
        let b = split_users(&[users.clone(), users.clone()], 11).unwrap();
        for z in 0..2 {
            assert_eq!(a.assign[z], b.assign[z]);
            let train = a.users_with(z, Assignment::Train);
            let val = a.users_with(z, Assignment::Val);
            let test = a.users_with(z, Assignment::Test);
            let mut all: Vec<u32> = train.iter().chain(&val).chain(&test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, users, "splits must partition the domain users");
        }
    }

    #[test]
    fn retained_count_reproduces_the_published_arithmetic() {
        // Two domains of 27,519 and 107,984 users sharing 16,377 overlapping
        // users: 102,749 non-overlapping in total, keep 25% of the 80%
        // train share -> 20,549.
        let pool = (27_519 - 16_377) + (107_984 - 16_377);
        assert_eq!(pool, 102_749);
        assert_eq!(ku_retained_count(pool, 0.25, 0.8), 20_549);
    }

    #[test]
    fn keep_ratio_one_is_identity() {
        let users: Vec<u32> = (0..40).collect();
        let mut split = split_users(&[users.clone()], 5).unwrap();
        let overlapping = BTreeSet::new();
        apply_ku(&mut split, &overlapping, 1.0, 9).unwrap();
        assert!(split.dropped[0].is_empty());
    }

    #[test]
    fn overlapping_users_are_never_dropped() {
        // users 0..10 overlap (active in both domains)
        let d0: Vec<u32> = (0..40).collect();
        let d1: Vec<u32> = (0..10).chain(40..70).collect();
        let overlapping: BTreeSet<u32> = (0..10).collect();
        let mut split = split_users(&[d0, d1], 2).unwrap();
        apply_ku(&mut split, &overlapping, 0.25, 7).unwrap();
        for z in 0..2 {
            for u in &overlapping {
                assert!(!split.dropped[z].contains(u));
            }
            assert!(!split.dropped[z].is_empty() || z == 1);
        }
        // test users untouched
        for z in 0..2 {
            for u in split.users_with(z, Assignment::Test) {
                assert!(!split.is_dropped(z, u));
            }
        }
    }

    #[test]
    fn dropped_counts_follow_the_floor_convention() {
        let d0: Vec<u32> = (0..50).collect();
        let d1: Vec<u32> = (50..100).collect();
        let overlapping = BTreeSet::new();
        let mut split = split_users(&[d0, d1], 21).unwrap();
        let train_total: usize =
            (0..2).map(|z| split.users_with(z, Assignment::Train).len()).sum();
        apply_ku(&mut split, &overlapping, 0.5, 3).unwrap();
        let dropped_train: usize = (0..2)
            .map(|z| {
                split.dropped[z]
                    .iter()
                    .filter(|&&u| split.assign[z][&u] == Assignment::Train)
                    .count()
            })
            .sum();
        let retained = ku_retained_count(100, 0.5, 0.8);
        assert_eq!(train_total - dropped_train, retained.min(train_total));
    }

    #[test]
    fn invalid_keep_ratio_is_a_config_error() {
        let mut split = split_users(&[(0..20).collect()], 1).unwrap();
        assert!(apply_ku(&mut split, &BTreeSet::new(), 0.0, 1).is_err());
        assert!(apply_ku(&mut split, &BTreeSet::new(), 1.5, 1).is_err());
    }
}
