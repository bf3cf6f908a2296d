//! Fixed-length padding and next-item batch construction.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::collections::BTreeSet;

/// Keep the most recent `t` items, left-padding shorter sequences with the
/// reserved id 0.
pub fn pad_truncate(seq: &[u32], t: usize) -> Vec<u32> {
    assert!(t >= 1, "pad_truncate: t must be >= 1");
    let keep = seq.len().min(t);
    let mut out = vec![0u32; t - keep];
    out.extend_from_slice(&seq[seq.len() - keep..]);
    out
}

/// One next-item training example: the padded prefix, the item that
/// followed it, and sampled negatives from the same domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NextItemExample {
    pub domain: usize,
    pub user: u32,
    /// Length-`t` row, left-padded with 0.
    pub prefix: Vec<u32>,
    pub positive: u32,
    pub negatives: Vec<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct NextItemBatch {
    pub rows: Vec<NextItemExample>,
}

/// Expand every (user, domain, position) into a prefix → next-item example
/// with `negatives_per_positive` sampled negatives, shuffle per domain, and
/// interleave domains round-robin into batches of `batch_size`. Negatives
/// never collide with the positive or with anything in the user's history.
/// Deterministic under `seed`.
pub fn make_batches(
    sequences: &[BTreeMap<u32, Vec<u32>>],
    items_per_domain: &[usize],
    t: usize,
    batch_size: usize,
    negatives_per_positive: usize,
    seed: u64,
) -> Result<Vec<NextItemBatch>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch_size must be >= 2, got {batch_size}")));
    }
    for (z, &v) in items_per_domain.iter().enumerate() {
        if v < negatives_per_positive + 1 {
            return Err(Error::Config(format!(
                "domain {z} has {v} items, fewer than negatives_per_positive + 1 = {}",
                negatives_per_positive + 1
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_domain: Vec<Vec<NextItemExample>> = Vec::with_capacity(sequences.len());
    for (z, users) in sequences.iter().enumerate() {
        let v = items_per_domain[z];
        let mut examples = Vec::new();
        for (&user, seq) in users {
            let history: BTreeSet<u32> = seq.iter().copied().collect();
            for pos in 1..seq.len() {
                let negatives =
                    sample_negatives(&mut rng, v, &history, negatives_per_positive);
                examples.push(NextItemExample {
                    domain: z,
                    user,
                    prefix: pad_truncate(&seq[..pos], t),
                    positive: seq[pos],
                    negatives,
                });
            }
        }
        for i in (1..examples.len()).rev() {
            examples.swap(i, rng.gen_range(0..=i));
        }
        per_domain.push(examples);
    }

    // Round-robin over domains so every batch mixes domains until one
    // runs dry.
    let mut queues: Vec<std::vec::IntoIter<NextItemExample>> =
        per_domain.into_iter().map(|v| v.into_iter()).collect();
    let mut interleaved = Vec::new();
    loop {
        let mut took = false;
        for q in queues.iter_mut() {
            if let Some(e) = q.next() {
                interleaved.push(e);
                took = true;
            }
        }
        if !took {
            break;
        }
    }

    let mut batches = Vec::new();
    for chunk in interleaved.chunks(batch_size) {
        batches.push(NextItemBatch { rows: chunk.to_vec() });
    }
    Ok(batches)
}

/// Distinct items outside `history`; falls back to scanning the catalog if
/// rejection sampling stalls on tiny domains.
fn sample_negatives(
    rng: &mut ChaCha8Rng,
    num_items: usize,
    history: &BTreeSet<u32>,
    count: usize,
) -> Vec<u32> {
    let mut out = Vec::with_capacity(count);
    let mut seen = BTreeSet::new();
    let mut tries = 0;
    while out.len() < count && tries < 100 * count.max(1) {
        let cand = rng.gen_range(1..=num_items as u32);
        tries += 1;
        if !history.contains(&cand) && seen.insert(cand) {
            out.push(cand);
        }
    }
    if out.len() < count {
        for cand in 1..=num_items as u32 {
            if out.len() >= count {
                break;
            }
            if !history.contains(&cand) && seen.insert(cand) {
                out.push(cand);
            }
        }
    }
    out
}
