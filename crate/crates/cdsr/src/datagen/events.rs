//! Interaction logs: CSV loading, sparsity filtering, and conversion to
//! per-domain sequences.

use crate::error::{Error, Result};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// One logged interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionEvent {
    pub user_id: u64,
    pub item_id: u64,
    pub domain_id: usize,
    pub timestamp: i64,
}

const HEADER: &str = "user_id,item_id,domain_id,timestamp";

/// Parse a comma-separated log with header
/// `user_id,item_id,domain_id,timestamp`. Malformed rows are rejected with
/// their 1-based line number.
pub fn read_events_csv(path: &Path) -> Result<Vec<InteractionEvent>> {
    let text = std::fs::read_to_string(path)?;
    parse_events(&text)
}

pub fn parse_events(text: &str) -> Result<Vec<InteractionEvent>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == HEADER => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{HEADER}`, got `{}`", header.trim_end()),
            })
        }
        None => return Err(Error::Parse { line: 1, msg: format!("missing header `{HEADER}`") }),
    }

    let mut events = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let field = |i: usize, name: &str| -> Result<i64> {
            fields[i].trim().parse::<i64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("non-integer {name} `{}`", fields[i].trim()),
            })
        };
        let user_id = field(0, "user_id")?;
        let item_id = field(1, "item_id")?;
        let domain_id = field(2, "domain_id")?;
        let timestamp = field(3, "timestamp")?;
        if user_id < 0 || item_id < 0 || domain_id < 0 {
            return Err(Error::Parse { line: line_no, msg: "ids must be non-negative".into() });
        }
        events.push(InteractionEvent {
            user_id: user_id as u64,
            item_id: item_id as u64,
            domain_id: domain_id as usize,
            timestamp,
        });
    }
    Ok(events)
}

/// Iteratively drop items with fewer than `min_item_inter` events and users
/// with fewer than `min_user_inter` events in their domain, until no rule
/// fires. Counting is per (domain, item) and per (domain, user).
pub fn filter_sparse(
    events: &[InteractionEvent],
    min_item_inter: usize,
    min_user_inter: usize,
) -> Vec<InteractionEvent> {
    assert!(min_item_inter >= 1 && min_user_inter >= 1, "filter_sparse: thresholds must be >= 1");
    let mut current: Vec<InteractionEvent> = events.to_vec();
    loop {
        let mut item_counts: BTreeMap<(usize, u64), usize> = BTreeMap::new();
        let mut user_counts: BTreeMap<(usize, u64), usize> = BTreeMap::new();
        for e in &current {
            *item_counts.entry((e.domain_id, e.item_id)).or_default() += 1;
            *user_counts.entry((e.domain_id, e.user_id)).or_default() += 1;
        }
        let before = current.len();
        current.retain(|e| {
            item_counts[&(e.domain_id, e.item_id)] >= min_item_inter
                && user_counts[&(e.domain_id, e.user_id)] >= min_user_inter
        });
        if current.len() == before {
            return current;
        }
    }
}

/// Sequences per (domain, user) with items remapped to dense 1-based ids.
#[derive(Debug, Clone)]
pub struct SeqDataset {
    pub num_domains: usize,
    pub items_per_domain: Vec<usize>,
    /// Dense user ids (0-based) back to original ids.
    pub user_ids: Vec<u64>,
    /// `sequences[domain][dense_user]` in time order; absent if no events.
    pub sequences: Vec<BTreeMap<u32, Vec<u32>>>,
}

impl SeqDataset {
    /// Group events into per-(domain, user) sequences. Timestamps are sorted
    /// ascending; ties keep input file order.
    pub fn from_events(events: &[InteractionEvent]) -> Self {
        let num_domains = events.iter().map(|e| e.domain_id + 1).max().unwrap_or(0);
        let users: BTreeSet<u64> = events.iter().map(|e| e.user_id).collect();
        let user_ids: Vec<u64> = users.into_iter().collect();
        let dense_of: BTreeMap<u64, u32> =
            user_ids.iter().enumerate().map(|(i, &u)| (u, i as u32)).collect();

        let mut item_maps: Vec<BTreeMap<u64, u32>> = vec![BTreeMap::new(); num_domains];
        for e in events {
            let next = item_maps[e.domain_id].len() as u32 + 1;
            item_maps[e.domain_id].entry(e.item_id).or_insert(next);
        }

        let mut streams: Vec<BTreeMap<u32, Vec<(i64, usize, u32)>>> =
            vec![BTreeMap::new(); num_domains];
        for (order, e) in events.iter().enumerate() {
            let dense_user = dense_of[&e.user_id];
            let dense_item = item_maps[e.domain_id][&e.item_id];
            streams[e.domain_id]
                .entry(dense_user)
                .or_default()
                .push((e.timestamp, order, dense_item));
        }
        let sequences = streams
            .into_iter()
            .map(|per_user| {
                per_user
                    .into_iter()
                    .map(|(u, mut evs)| {
                        evs.sort_by_key(|&(ts, order, _)| (ts, order));
                        (u, evs.into_iter().map(|(_, _, item)| item).collect())
                    })
                    .collect()
            })
            .collect();

        SeqDataset {
            num_domains,
            items_per_domain: item_maps.iter().map(|m| m.len()).collect(),
            user_ids,
            sequences,
        }
    }

    /// Per-domain dense user lists (users with at least one event there).
    pub fn domain_users(&self) -> Vec<Vec<u32>> {
        self.sequences.iter().map(|m| m.keys().copied().collect()).collect()
    }

    /// Users active in two or more domains.
    pub fn overlapping_users(&self) -> BTreeSet<u32> {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for m in &self.sequences {
            for &u in m.keys() {
                *counts.entry(u).or_default() += 1;
            }
        }
        counts.into_iter().filter(|&(_, c)| c >= 2).map(|(u, _)| u).collect()
    }
}
