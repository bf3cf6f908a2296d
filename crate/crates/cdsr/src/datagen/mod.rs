//! Dataset construction, two ways.
//!
//! [`generate_scenario`] draws a fully synthetic two-domain world in which
//! every quantity the estimator theory talks about is known: true ratings,
//! true exposure propensities and the realized observation mask. Exposure
//! depends on both relevance and item popularity, so training data sampled
//! from the mask is missing not at random. [`events`] loads real
//! interaction logs instead; both paths meet in [`pool`], which assembles
//! the padded-sequence training and evaluation views.

pub mod batch;
pub mod events;
pub mod pool;
pub mod split;

pub use batch::{make_batches, pad_truncate, NextItemBatch, NextItemExample};
pub use events::{filter_sparse, read_events_csv, InteractionEvent, SeqDataset};
pub use pool::{build_eval_data, EvalData, EvalRow, ObservedPair, TrainingPool};
pub use split::{apply_ku, ku_retained_count, split_users, Assignment, SplitAssignment};

use crate::error::{Error, Result};
use crate::tensor::sigmoid;
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

/// Knobs of the synthetic world.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub num_domains: usize,
    pub users_per_domain: usize,
    pub items_per_domain: usize,
    pub latent_dim: usize,
    /// Fraction of each domain's users that also act in the other domain.
    pub overlap_fraction: f64,
    pub min_seq_len: usize,
    pub max_seq_len: usize,
    /// Floor for exposure propensities; also the clip used by the learned
    /// propensity head downstream.
    pub p_min: f64,
    /// Baseline exposure probability before relevance and popularity tilt.
    pub base_exposure: f64,
    /// Selection-bias strength: exposure scales with exp(gamma·(relevance − ½)).
    pub gamma: f64,
    /// Popularity-bias strength: exposure scales with popularity^gamma_pop.
    pub gamma_pop: f64,
    /// Offset inside the rating sigmoid: relevance = σ(z·q + bias). The
    /// negative default keeps true positives sparse (about 12% of pairs),
    /// matching implicit feedback; 0 makes half the catalog relevant and
    /// sampled-negative ranking uninformative.
    pub relevance_bias: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_domains: 2,
            users_per_domain: 200,
            items_per_domain: 200,
            latent_dim: 8,
            overlap_fraction: 0.2,
            min_seq_len: 1,
            max_seq_len: 30,
            p_min: 0.05,
            base_exposure: 0.3,
            gamma: 2.0,
            gamma_pop: 0.5,
            relevance_bias: -2.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_domains != 2 {
            return Err(Error::Config(format!(
                "generator supports exactly 2 domains, got {}",
                self.num_domains
            )));
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return Err(Error::Config(format!(
                "overlap_fraction must be in [0, 1], got {}",
                self.overlap_fraction
            )));
        }
        if self.p_min <= 0.0 || self.p_min > 1.0 {
            return Err(Error::Config(format!("p_min must be in (0, 1], got {}", self.p_min)));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if self.users_per_domain == 0 || self.items_per_domain == 0 || self.latent_dim == 0 {
            return Err(Error::Config("users, items and latent_dim must be positive".into()));
        }
        if self.min_seq_len == 0 || self.max_seq_len < self.min_seq_len {
            return Err(Error::Config("need 1 <= min_seq_len <= max_seq_len".into()));
        }
        Ok(())
    }
}

/// Ground-truth user record.
#[derive(Debug, Clone)]
pub struct UserRecord {
    pub latent: Vec<f64>,
    /// Membership flag per domain; overlapping users are members of both.
    pub member: Vec<bool>,
}

impl UserRecord {
    pub fn overlapping(&self) -> bool {
        self.member.iter().filter(|&&m| m).count() >= 2
    }
}

#[derive(Debug, Clone)]
pub struct ItemRecord {
    pub latent: Vec<f64>,
    pub popularity: f64,
}

/// One domain's ground truth, dense over `members × items`.
#[derive(Debug, Clone)]
pub struct DomainData {
    /// Global user ids of this domain's members, ascending.
    pub members: Vec<u32>,
    pub items: Vec<ItemRecord>,
    /// True ratings in {0,1}, row-major over (member row, item).
    pub ratings: Vec<u8>,
    /// True exposure propensities in [p_min, 1].
    pub propensity: Vec<f64>,
    /// Realized observation mask in {0,1}.
    pub observed: Vec<u8>,
    /// Per member row: observed positives in exposure-time order, item ids 1-based.
    pub sequences: Vec<Vec<u32>>,
}

impl DomainData {
    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn member_row(&self, user: u32) -> Option<usize> {
        self.members.binary_search(&user).ok()
    }

    /// Flat index of (member row, 1-based item id).
    pub fn pair_index(&self, row: usize, item: u32) -> usize {
        row * self.items.len() + (item as usize - 1)
    }
}

/// Complete synthetic ground truth.
#[derive(Debug, Clone)]
pub struct CdsrScenario {
    pub num_domains: usize,
    pub users: Vec<UserRecord>,
    pub domains: Vec<DomainData>,
    /// Observations forced on empty-sequence users as a last resort; zero at
    /// sane scales.
    pub forced_observations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draw a scenario: latent factors, Bernoulli ratings, relevance- and
/// popularity-tilted exposure propensities, the realized mask and the
/// exposure-ordered sequences. Identical seeds give bit-identical output.
pub fn generate_scenario(config: &GenConfig, seed: u64) -> Result<CdsrScenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let u = config.users_per_domain;
    let n_overlap = (config.overlap_fraction * u as f64).round() as usize;
    let n_exclusive = u - n_overlap;
    let total_users = n_overlap + 2 * n_exclusive;

    // Latent entries scaled so user·item products have roughly unit variance.
    let latent_sd = (config.latent_dim as f64).powf(-0.25);
    let normal = rand_distr::Normal::new(0.0, latent_sd).expect("valid normal");

    let mut users = Vec::with_capacity(total_users);
    for idx in 0..total_users {
        let latent: Vec<f64> = (0..config.latent_dim).map(|_| normal.sample(&mut rng)).collect();
        let member = if idx < n_overlap {
            vec![true, true]
        } else if idx < n_overlap + n_exclusive {
            vec![true, false]
        } else {
            vec![false, true]
        };
        users.push(UserRecord { latent, member });
    }

    let mut forced = 0usize;
    let mut domains = Vec::with_capacity(config.num_domains);
    for z in 0..config.num_domains {
        let items: Vec<ItemRecord> = (0..config.items_per_domain)
            .map(|_| ItemRecord {
                latent: (0..config.latent_dim).map(|_| normal.sample(&mut rng)).collect(),
                popularity: rng.gen_range(0.1..=1.0),
            })
            .collect();
        let members: Vec<u32> =
            (0..total_users as u32).filter(|&uid| users[uid as usize].member[z]).collect();

        let v = items.len();
        let mut ratings = vec![0u8; members.len() * v];
        let mut propensity = vec![0.0f64; members.len() * v];
        for (row, &uid) in members.iter().enumerate() {
            for (col, item) in items.iter().enumerate() {
                let rel = sigmoid(dot(&users[uid as usize].latent, &item.latent) + config.relevance_bias);
                let p = (config.base_exposure
                    * item.popularity.powf(config.gamma_pop)
                    * (config.gamma * (rel - 0.5)).exp())
                .clamp(config.p_min, 1.0);
                ratings[row * v + col] = u8::from(rng.gen_bool(rel));
                propensity[row * v + col] = p;
            }
        }

        let mut observed = vec![0u8; members.len() * v];
        let mut sequences = vec![Vec::new(); members.len()];
        for (row, &uid) in members.iter().enumerate() {
            let draw = |rng: &mut ChaCha8Rng, observed_row: &mut [u8]| {
                let mut positives = Vec::new();
                for col in 0..v {
                    let o = rng.gen_bool(propensity[row * v + col]);
                    observed_row[col] = u8::from(o);
                    if o && ratings[row * v + col] == 1 {
                        positives.push(col as u32 + 1);
                    }
                }
                positives
            };
            let mut positives = draw(&mut rng, &mut observed[row * v..(row + 1) * v]);
            let mut tries = 0;
            while positives.len() < config.min_seq_len && tries < 20 {
                positives = draw(&mut rng, &mut observed[row * v..(row + 1) * v]);
                tries += 1;
            }
            if positives.len() < config.min_seq_len {
                // Last resort: expose the most relevant items, flipping their
                // rating positive if the user liked nothing at all.
                let mut by_rel: Vec<usize> = (0..v).collect();
                let rel_of = |col: usize| dot(&users[uid as usize].latent, &items[col].latent);
                by_rel.sort_by(|&a, &b| rel_of(b).partial_cmp(&rel_of(a)).unwrap());
                for &col in &by_rel {
                    if positives.len() >= config.min_seq_len {
                        break;
                    }
                    let idx = row * v + col;
                    if observed[idx] == 1 && ratings[idx] == 1 {
                        continue;
                    }
                    observed[idx] = 1;
                    ratings[idx] = 1;
                    positives.push(col as u32 + 1);
                    forced += 1;
                }
            }
            // Exposure-time order is a seeded shuffle of the observed positives.
            let mut order: Vec<usize> = (0..positives.len()).collect();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let mut seq: Vec<u32> = order.into_iter().map(|i| positives[i]).collect();
            if seq.len() > config.max_seq_len {
                seq = seq.split_off(seq.len() - config.max_seq_len);
            }
            sequences[row] = seq;
        }

        domains.push(DomainData { members, items, ratings, propensity, observed, sequences });
    }

    Ok(CdsrScenario {
        num_domains: config.num_domains,
        users,
        domains,
        forced_observations: forced,
    })
}

impl CdsrScenario {
    /// Per-domain sequences keyed by global user id.
    pub fn sequences_by_user(&self) -> Vec<std::collections::BTreeMap<u32, Vec<u32>>> {
        self.domains
            .iter()
            .map(|d| {
                d.members
                    .iter()
                    .enumerate()
                    .map(|(row, &uid)| (uid, d.sequences[row].clone()))
                    .collect()
            })
            .collect()
    }

    /// Dump the ground-truth matrices and sequences as CSV files:
    /// `ratings.csv`, `propensity.csv`, `observed.csv` with columns
    /// `domain,user,item,value`, plus `sequences.csv` with
    /// `domain,user,position,item`.
    pub fn dump_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut ratings = String::from("domain,user,item,value\n");
        let mut propensity = String::from("domain,user,item,value\n");
        let mut observed = String::from("domain,user,item,value\n");
        let mut sequences = String::from("domain,user,position,item\n");
        for (z, d) in self.domains.iter().enumerate() {
            let v = d.num_items();
            for (row, &uid) in d.members.iter().enumerate() {
                for col in 0..v {
                    let idx = row * v + col;
                    let item = col + 1;
                    ratings.push_str(&format!("{z},{uid},{item},{}\n", d.ratings[idx]));
                    propensity.push_str(&format!("{z},{uid},{item},{}\n", d.propensity[idx]));
                    observed.push_str(&format!("{z},{uid},{item},{}\n", d.observed[idx]));
                }
                for (pos, &item) in d.sequences[row].iter().enumerate() {
                    sequences.push_str(&format!("{z},{uid},{pos},{item}\n"));
                }
            }
        }
        for (name, body) in [
            ("ratings.csv", &ratings),
            ("propensity.csv", &propensity),
            ("observed.csv", &observed),
            ("sequences.csv", &sequences),
        ] {
            let mut f = std::fs::File::create(dir.join(name))?;
            f.write_all(body.as_bytes())?;
        }
        Ok(())
    }
}
