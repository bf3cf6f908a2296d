//! Training and evaluation views over a split dataset.
//!
//! A [`TrainingPool`] carries everything the alternating trainer samples
//! from: the observed pairs with their labels (phase one), the
//! train-visible sequences, and the user lists for uniform full-space
//! sampling (phase two). Users removed by downsampling keep their
//! sequences but lose their labels, standing in for the unexposed
//! population. [`EvalData`] holds the untouched test rows.

use super::batch::pad_truncate;
use super::split::{Assignment, SplitAssignment};
use super::CdsrScenario;
use super::SeqDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

/// One labelled example in the observed set: a logged positive with the
/// prefix that preceded it, or a sampled negative sharing that prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedPair {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
    /// Padded causal context at the interaction.
    pub context: Vec<u32>,
}

/// Sampler state for both training phases.
#[derive(Debug, Clone)]
pub struct TrainingPool {
    pub t: usize,
    pub num_domains: usize,
    pub items_per_domain: Vec<usize>,
    /// Train-visible sequences (retained and dropped train users).
    pub sequences: Vec<BTreeMap<u32, Vec<u32>>>,
    /// Labelled observed pairs per domain, deterministic order.
    pub observed: Vec<Vec<ObservedPair>>,
    /// `(user, item) -> rating` for observation lookups in phase two.
    pub observed_map: Vec<BTreeMap<(u32, u32), u8>>,
    /// Users sampled uniformly in phase two: retained plus dropped.
    pub full_space_users: Vec<Vec<u32>>,
    /// Retained train users only (the observed world).
    pub train_users: Vec<Vec<u32>>,
}

impl TrainingPool {
    /// Padded causal context for a pair: everything before the item's first
    /// appearance in the user's sequence, or the whole sequence when the
    /// item never appears.
    pub fn context_for(&self, domain: usize, user: u32, item: u32) -> Vec<u32> {
        let seq = self.sequences[domain].get(&user).map(Vec::as_slice).unwrap_or(&[]);
        match seq.iter().position(|&i| i == item) {
            Some(pos) => pad_truncate(&seq[..pos], self.t),
            None => pad_truncate(seq, self.t),
        }
    }

    /// The same user's train-visible sequence in the other domain, padded.
    pub fn other_domain_context(&self, domain: usize, user: u32) -> Option<Vec<u32>> {
        let other = 1 - domain;
        self.sequences[other].get(&user).map(|s| pad_truncate(s, self.t))
    }

    pub fn is_observed(&self, domain: usize, user: u32, item: u32) -> Option<u8> {
        self.observed_map[domain].get(&(user, item)).copied()
    }

    /// Shared construction: per retained train user, every logged item
    /// becomes a positive with its preceding prefix as context, paired
    /// with `negatives_per_positive` sampled unlogged items on the same
    /// prefix. Users dropped by downsampling keep sequences but
    /// contribute no labels.
    fn from_sequence_views(
        num_domains: usize,
        items_per_domain: Vec<usize>,
        views: &[BTreeMap<u32, Vec<u32>>],
        split: &SplitAssignment,
        t: usize,
        negatives_per_positive: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sequences = vec![BTreeMap::new(); num_domains];
        let mut observed = vec![Vec::new(); num_domains];
        let mut observed_map = vec![BTreeMap::new(); num_domains];
        let mut full_space_users = vec![Vec::new(); num_domains];
        let mut train_users = vec![Vec::new(); num_domains];

        for z in 0..num_domains {
            let v = items_per_domain[z];
            for (&uid, seq) in &views[z] {
                if split.assign[z].get(&uid) != Some(&Assignment::Train) {
                    continue;
                }
                sequences[z].insert(uid, seq.clone());
                full_space_users[z].push(uid);
                if split.is_dropped(z, uid) {
                    continue; // labels removed, sequence retained
                }
                train_users[z].push(uid);
                let history: BTreeSet<u32> = seq.iter().copied().collect();
                for pos in 0..seq.len() {
                    let context = pad_truncate(&seq[..pos], t);
                    let item = seq[pos];
                    observed[z].push(ObservedPair { user: uid, item, rating: 1, context: context.clone() });
                    observed_map[z].insert((uid, item), 1);
                    let mut placed = 0;
                    let mut tries = 0;
                    while placed < negatives_per_positive && tries < 200 {
                        let cand = rng.gen_range(1..=v as u32);
                        tries += 1;
                        if history.contains(&cand) || observed_map[z].contains_key(&(uid, cand)) {
                            continue;
                        }
                        observed[z].push(ObservedPair {
                            user: uid,
                            item: cand,
                            rating: 0,
                            context: context.clone(),
                        });
                        observed_map[z].insert((uid, cand), 0);
                        placed += 1;
                    }
                }
            }
        }

        TrainingPool {
            t,
            num_domains,
            items_per_domain,
            sequences,
            observed,
            observed_map,
            full_space_users,
            train_users,
        }
    }

    /// Build from synthetic ground truth: the observed set follows the
    /// logged sequences, exactly as in the CSV path.
    pub fn from_scenario(scenario: &CdsrScenario, split: &SplitAssignment, t: usize, seed: u64) -> Self {
        let views = scenario.sequences_by_user();
        TrainingPool::from_sequence_views(
            scenario.num_domains,
            scenario.domains.iter().map(|d| d.num_items()).collect(),
            &views,
            split,
            t,
            1,
            seed,
        )
    }

    /// Build from logged events.
    pub fn from_events(
        dataset: &SeqDataset,
        split: &SplitAssignment,
        t: usize,
        negatives_per_positive: usize,
        seed: u64,
    ) -> Self {
        TrainingPool::from_sequence_views(
            dataset.num_domains,
            dataset.items_per_domain.clone(),
            &dataset.sequences,
            split,
            t,
            negatives_per_positive,
            seed,
        )
    }
}

/// One leave-last-out test case.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub user: u32,
    /// Padded prefix: the sequence with its last item held out.
    pub context: Vec<u32>,
    pub positive: u32,
    /// Items the user interacted with; excluded from negative sampling.
    pub interacted: BTreeSet<u32>,
    /// Train-visible other-domain sequence, padded.
    pub other_domain_context: Option<Vec<u32>>,
}

/// Test rows plus the train-visible sequences used to form cross-domain
/// source pools at evaluation time.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub t: usize,
    pub num_domains: usize,
    pub items_per_domain: Vec<usize>,
    pub rows: Vec<Vec<EvalRow>>,
    /// Retained train users' sequences per domain, sorted by user id.
    pub pool_sequences: Vec<Vec<(u32, Vec<u32>)>>,
}

/// Assemble test rows from any per-domain sequence view. Users with fewer
/// than two items in a domain cannot be ranked there and are skipped.
pub fn build_eval_data(
    sequences: &[BTreeMap<u32, Vec<u32>>],
    items_per_domain: &[usize],
    split: &SplitAssignment,
    pool: &TrainingPool,
    t: usize,
) -> EvalData {
    let num_domains = sequences.len();
    let mut rows = vec![Vec::new(); num_domains];
    for z in 0..num_domains {
        for (&uid, seq) in &sequences[z] {
            if split.assign[z].get(&uid) != Some(&Assignment::Test) || seq.len() < 2 {
                continue;
            }
            let (head, tail) = seq.split_at(seq.len() - 1);
            rows[z].push(EvalRow {
                user: uid,
                context: pad_truncate(head, t),
                positive: tail[0],
                interacted: seq.iter().copied().collect(),
                other_domain_context: pool.other_domain_context(z, uid),
            });
        }
    }
    let pool_sequences = (0..num_domains)
        .map(|z| {
            pool.train_users[z]
                .iter()
                .map(|&u| (u, pool.sequences[z][&u].clone()))
                .collect()
        })
        .collect();
    EvalData {
        t,
        num_domains,
        items_per_domain: items_per_domain.to_vec(),
        rows,
        pool_sequences,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_scenario, split_users, GenConfig};

    fn scenario_and_split() -> (CdsrScenario, SplitAssignment) {
        let cfg = GenConfig {
            users_per_domain: 30,
            items_per_domain: 25,
            max_seq_len: 10,
            relevance_bias: 0.0, // dense ratings keep these tiny sequences long
            ..GenConfig::default()
        };
        let scenario = generate_scenario(&cfg, 5).unwrap();
        let domain_users: Vec<Vec<u32>> =
            scenario.domains.iter().map(|d| d.members.clone()).collect();
        let split = split_users(&domain_users, 2).unwrap();
        (scenario, split)
    }

    #[test]
    fn observed_pairs_come_from_retained_train_users_only() {
        let (scenario, mut split) = scenario_and_split();
        let overlapping: BTreeSet<u32> = scenario
            .users
            .iter()
            .enumerate()
            .filter(|(_, u)| u.overlapping())
            .map(|(i, _)| i as u32)
            .collect();
        crate::datagen::apply_ku(&mut split, &overlapping, 0.5, 3).unwrap();
        let pool = TrainingPool::from_scenario(&scenario, &split, 8, 42);
        for z in 0..2 {
            for p in &pool.observed[z] {
                assert_eq!(split.assign[z][&p.user], Assignment::Train);
                assert!(!split.is_dropped(z, p.user));
            }
            // dropped users remain visible to the full-space sampler
            for &u in &split.dropped[z] {
                if split.assign[z][&u] == Assignment::Train {
                    assert!(pool.full_space_users[z].contains(&u));
                    assert!(pool.sequences[z].contains_key(&u));
                    assert!(!pool.train_users[z].contains(&u));
                }
            }
        }
    }

    #[test]
    fn context_stops_before_the_target_item() {
        let (scenario, split) = scenario_and_split();
        let pool = TrainingPool::from_scenario(&scenario, &split, 6, 42);
        let (&user, seq) = pool.sequences[0].iter().find(|(_, s)| s.len() >= 3).unwrap();
        let target = seq[2];
        let ctx = pool.context_for(0, user, target);
        assert_eq!(ctx.len(), 6);
        assert!(!ctx.contains(&target));
        assert_eq!(&ctx[4..], &seq[..2], "last context entries are the pre-target prefix");
    }

    #[test]
    fn eval_rows_hold_out_the_last_item() {
        let (scenario, split) = scenario_and_split();
        let pool = TrainingPool::from_scenario(&scenario, &split, 8, 42);
        let eval = build_eval_data(
            &scenario.sequences_by_user(),
            &[25, 25],
            &split,
            &pool,
            8,
        );
        for z in 0..2 {
            for row in &eval.rows[z] {
                assert_eq!(split.assign[z][&row.user], Assignment::Test);
                assert!(row.interacted.contains(&row.positive));
                assert!(!row.context.contains(&row.positive) || row.interacted.len() > 1);
                assert_eq!(row.context.len(), 8);
            }
        }
    }

    #[test]
    fn event_pool_pairs_each_positive_with_a_negative() {
        use crate::datagen::events::InteractionEvent;
        let mut events = Vec::new();
        for u in 0..20u64 {
            for i in 0..6u64 {
                events.push(InteractionEvent {
                    user_id: u,
                    item_id: (u + i) % 15,
                    domain_id: (u % 2) as usize,
                    timestamp: i as i64,
                });
            }
        }
        let ds = SeqDataset::from_events(&events);
        let split = split_users(&ds.domain_users(), 4).unwrap();
        let pool = TrainingPool::from_events(&ds, &split, 8, 1, 9);
        for z in 0..ds.num_domains {
            let pos = pool.observed[z].iter().filter(|p| p.rating == 1).count();
            let neg = pool.observed[z].iter().filter(|p| p.rating == 0).count();
            assert_eq!(pos, neg, "one sampled negative per positive");
            for p in &pool.observed[z] {
                if p.rating == 0 {
                    assert!(!pool.sequences[z][&p.user].contains(&p.item));
                }
            }
        }
    }
}
