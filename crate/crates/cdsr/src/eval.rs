//! Ranking evaluation with sampled negatives.
//!
//! Each test user's held-out item is ranked against `M` sampled negatives
//! drawn from the items the user never interacted with. Ties count
//! against the positive, so a constant scorer lands at the bottom rather
//! than inflating the metrics.

use crate::datagen::{pad_truncate, EvalData};
use crate::error::{Error, Result};
use crate::model::{Model, ModelVars, SourceSlot};
use crate::tape::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

/// Rank of the positive item among `1 + M` candidates, 1-based.
#[derive(Debug, Clone, Copy)]
pub struct RankResult {
    pub user: u32,
    pub domain: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Hr,
    Ndcg,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Hr => "hr",
            MetricKind::Ndcg => "ndcg",
        }
    }
}

/// Pessimistic rank: 1 plus the number of negatives scoring at least as
/// high as the positive.
pub fn rank_from_scores(positive: f64, negatives: &[f64]) -> usize {
    1 + negatives.iter().filter(|&&s| s >= positive).count()
}

/// `hr`: 1 if the positive ranked within the cutoff. `ndcg`: discounted
/// gain `1/log2(rank+1)` inside the cutoff; a single relevant item makes
/// the ideal gain 1.
pub fn metric_at_k(rank: usize, k: usize, kind: MetricKind) -> f64 {
    assert!(k >= 1, "metric_at_k: cutoff must be >= 1");
    assert!(rank >= 1, "metric_at_k: ranks are 1-based");
    if rank > k {
        return 0.0;
    }
    match kind {
        MetricKind::Hr => 1.0,
        MetricKind::Ndcg => 1.0 / ((rank + 1) as f64).log2(),
    }
}

/// Up to `m` distinct negatives outside the exclusion set, deterministic
/// under the caller's rng. Small catalogs cap at what is available.
pub fn sample_negatives(
    rng: &mut ChaCha8Rng,
    num_items: usize,
    exclude: &BTreeSet<u32>,
    m: usize,
) -> Vec<u32> {
    let excluded_in_catalog =
        exclude.iter().filter(|&&i| i >= 1 && i as usize <= num_items).count();
    let available = num_items - excluded_in_catalog;
    let want = m.min(available);
    let mut out = Vec::with_capacity(want);
    let mut taken = BTreeSet::new();
    let mut tries = 0;
    while out.len() < want && tries < 200 * m.max(1) {
        let cand = rng.gen_range(1..=num_items as u32);
        tries += 1;
        if !exclude.contains(&cand) && taken.insert(cand) {
            out.push(cand);
        }
    }
    if out.len() < want {
        for cand in 1..=num_items as u32 {
            if out.len() >= want {
                break;
            }
            if !exclude.contains(&cand) && taken.insert(cand) {
                out.push(cand);
            }
        }
    }
    out
}

/// Per-domain metric means over the test rows.
#[derive(Debug, Clone)]
pub struct DomainMetrics {
    pub domain: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub ranks: Vec<RankResult>,
}

/// Score every test user of one domain with the frozen model.
///
/// Negatives per user and, when interest groups are enabled, the sampled
/// cross-domain source pool are deterministic under `seed`.
pub fn evaluate_domain(
    model: &Model,
    data: &EvalData,
    domain: usize,
    negatives: usize,
    k: usize,
    seed: u64,
) -> Result<DomainMetrics> {
    if negatives < 1 {
        return Err(Error::Config("need at least one negative per ranked user".into()));
    }
    if data.rows[domain].is_empty() {
        return Err(Error::Config(format!("domain {domain} has no evaluable test users")));
    }
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);

    // Fixed cross-domain pool: encoded train sequences of the other domain.
    let pool_slots = build_pool(model, &mut tape, &vars, data, domain, seed);

    let mut ranks = Vec::with_capacity(data.rows[domain].len());
    let mut hr_sum = 0.0;
    let mut ndcg_sum = 0.0;
    for row in &data.rows[domain] {
        let enc = model.encode_context(&mut tape, &vars, domain, &row.context);
        let sources = assemble_sources(model, &mut tape, &vars, domain, row.other_domain_context.as_deref(), &pool_slots);
        let rep = model.represent(&mut tape, &vars, &enc, &sources);

        let mut user_rng = ChaCha8Rng::seed_from_u64(
            seed ^ (domain as u64) << 32 ^ (row.user as u64).wrapping_mul(0x9E3779B97F4A7C15),
        );
        let negs = sample_negatives(
            &mut user_rng,
            data.items_per_domain[domain],
            &row.interacted,
            negatives,
        );

        let score = |tape: &mut Tape, item: u32| -> f64 {
            let emb = model.item_embedding(tape, &vars, domain, item);
            let r_hat = model.predict_preference(tape, &vars, rep.repr, emb);
            tape.scalar_value(r_hat)
        };
        let pos_score = score(&mut tape, row.positive);
        let neg_scores: Vec<f64> = negs.iter().map(|&n| score(&mut tape, n)).collect();
        let rank = rank_from_scores(pos_score, &neg_scores);
        hr_sum += metric_at_k(rank, k, MetricKind::Hr);
        ndcg_sum += metric_at_k(rank, k, MetricKind::Ndcg);
        ranks.push(RankResult { user: row.user, domain, rank });
    }
    let n = ranks.len() as f64;
    Ok(DomainMetrics { domain, hr: hr_sum / n, ndcg: ndcg_sum / n, ranks })
}

fn build_pool(
    model: &Model,
    tape: &mut Tape,
    vars: &ModelVars,
    data: &EvalData,
    domain: usize,
    seed: u64,
) -> Vec<SourceSlot> {
    let Some(mim) = &model.config.mim else {
        return Vec::new();
    };
    let other = 1 - domain;
    let candidates = &data.pool_sequences[other];
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(101 + domain as u64));
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    order
        .into_iter()
        .take(mim.pool_size.saturating_sub(1))
        .map(|idx| {
            let padded = pad_truncate(&candidates[idx].1, model.config.t);
            let enc = model.encode_context(tape, vars, other, &padded);
            model.prepare_source(tape, &enc, false)
        })
        .collect()
}

fn assemble_sources(
    model: &Model,
    tape: &mut Tape,
    vars: &ModelVars,
    domain: usize,
    own_context: Option<&[u32]>,
    pool: &[SourceSlot],
) -> Vec<Option<SourceSlot>> {
    let Some(mim) = &model.config.mim else {
        return Vec::new();
    };
    let mut slots = Vec::with_capacity(mim.pool_size);
    slots.push(own_context.map(|ctx| {
        let enc = model.encode_context(tape, vars, 1 - domain, ctx);
        model.prepare_source(tape, &enc, true)
    }));
    for slot in pool {
        if slots.len() >= mim.pool_size {
            break;
        }
        slots.push(Some(slot.clone()));
    }
    slots.resize_with(mim.pool_size, || None);
    slots
}

/// Sample mean and sample standard deviation (n−1 denominator; 0 for a
/// single value). Identical values give exactly zero spread.
pub fn aggregate_runs(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty(), "aggregate_runs: need at least one value");
    let n = values.len() as f64;
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One measurement row for the metrics CSV.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub seed: u64,
    pub domain: usize,
    pub metric: &'static str,
    pub k: usize,
    pub value: f64,
}

/// `seed,domain,metric,k,value`
pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut body = String::from("seed,domain,metric,k,value\n");
    for r in rows {
        let _ = writeln!(body, "{},{},{},{},{}", r.seed, r.domain, r.metric, r.k, r.value);
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, body)?;
    Ok(())
}

/// One aggregated row for the summary CSV.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub domain: usize,
    pub metric: String,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

/// `domain,metric,k,mean,std,n_seeds`
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut body = String::from("domain,metric,k,mean,std,n_seeds\n");
    for r in rows {
        let _ = writeln!(body, "{},{},{},{},{},{}", r.domain, r.metric, r.k, r.mean, r.std, r.n_seeds);
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, body)?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line.trim_end() != "domain,metric,k,mean,std,n_seeds" {
                return Err(Error::Parse { line: 1, msg: "bad summary header".into() });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Parse { line: idx + 1, msg: "expected 6 fields".into() });
        }
        let parse_err = |msg: &str| Error::Parse { line: idx + 1, msg: msg.into() };
        rows.push(SummaryRow {
            domain: f[0].parse().map_err(|_| parse_err("bad domain"))?,
            metric: f[1].to_string(),
            k: f[2].parse().map_err(|_| parse_err("bad k"))?,
            mean: f[3].parse().map_err(|_| parse_err("bad mean"))?,
            std: f[4].parse().map_err(|_| parse_err("bad std"))?,
            n_seeds: f[5].parse().map_err(|_| parse_err("bad n_seeds"))?,
        });
    }
    Ok(rows)
}
