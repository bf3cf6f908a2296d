//! Experiment configuration: a line-oriented `key = value` format with
//! `[section]` headers and `#` comments. Unknown keys are rejected with
//! their line number; missing keys take the documented defaults.

use crate::datagen::GenConfig;
use crate::encoder::EncoderKind;
use crate::error::{Error, Result};
use crate::loss::ErrorMetric;
use crate::theory::{InstanceSampler, VerifyConfig};
use crate::train::Objective;
use std::path::{Path, PathBuf};

/// Where interaction data comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

#[derive(Debug, Clone)]
pub struct DataSection {
    pub source: DataSource,
    pub gen: GenConfig,
    /// Fraction of non-overlapping users kept in train/val.
    pub nonoverlap_keep: f64,
    /// CSV-mode sparsity thresholds.
    pub min_item_inter: usize,
    pub min_user_inter: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synthetic,
            gen: GenConfig::default(),
            nonoverlap_keep: 1.0,
            min_item_inter: 10,
            min_user_inter: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelSection {
    pub d: usize,
    pub t: usize,
    pub encoder: EncoderKind,
    pub mim: bool,
    pub shared_trunk: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        // d = 16 keeps runs desk-sized; the reference setting of 128 is
        // viable but slow here.
        ModelSection { d: 16, t: 8, encoder: EncoderKind::Gru, mim: true, shared_trunk: false }
    }
}

#[derive(Debug, Clone)]
pub struct MimSection {
    pub k: f64,
    /// Source slots per target; 0 means "use the training batch size".
    pub pool: usize,
    pub aux_sim_weight: f64,
    pub use_raw_embeddings: bool,
}

impl Default for MimSection {
    fn default() -> Self {
        MimSection { k: 0.7, pool: 0, aux_sim_weight: 0.0, use_raw_embeddings: false }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSection {
    pub objective: Objective,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda_p: f64,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub q: usize,
    pub q_prime: usize,
    pub batch_size: usize,
    pub side_batch: usize,
    pub error_metric: ErrorMetric,
    pub normalize_imputation: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            objective: Objective::Dr,
            lambda1: 0.01,
            lambda2: 1e-4,
            lambda3: 1e-4,
            lambda4: 1e-4,
            lambda5: 1e-4,
            lambda_p: 1.0,
            lr_phase1: 1e-3,
            lr_phase2: 1e-5,
            q: 300,
            q_prime: 300,
            batch_size: 32,
            side_batch: 0,
            error_metric: ErrorMetric::Mse,
            normalize_imputation: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalSection {
    /// Sampled negatives per ranked user (199 default; 999 selectable).
    pub negatives: usize,
    pub k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { negatives: 199, k: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct VerifySection {
    pub trials: usize,
    pub eta: f64,
    pub instances: usize,
    pub bias_instances: usize,
    /// Re-run the checks on a previously dumped failing instance.
    pub replay_dir: Option<PathBuf>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            trials: 100_000,
            eta: 0.05,
            instances: 20,
            bias_instances: 1000,
            replay_dir: None,
        }
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone, Default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub data: DataSection,
    pub model: ModelSection,
    pub mim: MimSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub verify: VerifySection,
}

impl ExperimentConfig {
    pub fn seeds_or_default(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![1, 2, 3, 4, 5]
        } else {
            self.seeds.clone()
        }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig {
            sampler: InstanceSampler::default(),
            bias_instances: self.verify.bias_instances,
            coverage_instances: self.verify.instances,
            trials: self.verify.trials,
            eta: self.verify.eta,
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Parse the config text. Every key is validated against the schema; an
/// unknown key fails with `unknown key <key> at line <n>`.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("unterminated section header at line {line_no}")))?
                .trim();
            match name {
                "data" | "model" | "mim" | "train" | "eval" | "verify" => section = name.to_string(),
                other => {
                    return Err(Error::Config(format!("unknown section {other} at line {line_no}")))
                }
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Config(format!("expected key = value at line {line_no}")))?;
        apply_key(&mut cfg, &section, key, value, line_no)?;
    }
    Ok(cfg)
}

fn bad_value(key: &str, line: usize, expected: &str) -> Error {
    Error::Config(format!("invalid value for {key} at line {line}: expected {expected}"))
}

fn parse_f64(key: &str, value: &str, line: usize) -> Result<f64> {
    value.parse().map_err(|_| bad_value(key, line, "a number"))
}

fn parse_usize(key: &str, value: &str, line: usize) -> Result<usize> {
    value.parse().map_err(|_| bad_value(key, line, "a non-negative integer"))
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(bad_value(key, line, "true or false")),
    }
}

fn apply_key(
    cfg: &mut ExperimentConfig,
    section: &str,
    key: &str,
    value: &str,
    line: usize,
) -> Result<()> {
    let unknown = || Error::Config(format!("unknown key {key} at line {line}"));
    match section {
        "" => match key {
            "seeds" => {
                cfg.seeds = value
                    .split(',')
                    .map(|s| s.trim().parse::<u64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad_value(key, line, "comma-separated integers"))?;
            }
            _ => return Err(unknown()),
        },
        "data" => match key {
            "source" => match value {
                "synthetic" => cfg.data.source = DataSource::Synthetic,
                "csv" => {
                    if !matches!(cfg.data.source, DataSource::Csv(_)) {
                        cfg.data.source = DataSource::Csv(PathBuf::new());
                    }
                }
                _ => return Err(bad_value(key, line, "synthetic or csv")),
            },
            "csv_path" => cfg.data.source = DataSource::Csv(PathBuf::from(value)),
            "users_per_domain" => cfg.data.gen.users_per_domain = parse_usize(key, value, line)?,
            "items_per_domain" => cfg.data.gen.items_per_domain = parse_usize(key, value, line)?,
            "latent_dim" => cfg.data.gen.latent_dim = parse_usize(key, value, line)?,
            "overlap_fraction" => cfg.data.gen.overlap_fraction = parse_f64(key, value, line)?,
            "min_seq_len" => cfg.data.gen.min_seq_len = parse_usize(key, value, line)?,
            "max_seq_len" => cfg.data.gen.max_seq_len = parse_usize(key, value, line)?,
            "p_min" => cfg.data.gen.p_min = parse_f64(key, value, line)?,
            "base_exposure" => cfg.data.gen.base_exposure = parse_f64(key, value, line)?,
            "gamma" => cfg.data.gen.gamma = parse_f64(key, value, line)?,
            "gamma_pop" => cfg.data.gen.gamma_pop = parse_f64(key, value, line)?,
            "relevance_bias" => cfg.data.gen.relevance_bias = parse_f64(key, value, line)?,
            "nonoverlap_keep" => cfg.data.nonoverlap_keep = parse_f64(key, value, line)?,
            "min_item_inter" => cfg.data.min_item_inter = parse_usize(key, value, line)?,
            "min_user_inter" => cfg.data.min_user_inter = parse_usize(key, value, line)?,
            _ => return Err(unknown()),
        },
        "model" => match key {
            "d" => cfg.model.d = parse_usize(key, value, line)?,
            "t" => cfg.model.t = parse_usize(key, value, line)?,
            "encoder" => {
                cfg.model.encoder = EncoderKind::parse(value)
                    .ok_or_else(|| bad_value(key, line, "prefix_mean or gru"))?
            }
            "mim" => cfg.model.mim = parse_bool(key, value, line)?,
            "shared_trunk" => cfg.model.shared_trunk = parse_bool(key, value, line)?,
            _ => return Err(unknown()),
        },
        "mim" => match key {
            "k" => cfg.mim.k = parse_f64(key, value, line)?,
            "pool" => cfg.mim.pool = parse_usize(key, value, line)?,
            "aux_sim_weight" => cfg.mim.aux_sim_weight = parse_f64(key, value, line)?,
            "use_raw_embeddings" => cfg.mim.use_raw_embeddings = parse_bool(key, value, line)?,
            _ => return Err(unknown()),
        },
        "train" => match key {
            "objective" => {
                cfg.train.objective = Objective::parse(value)
                    .ok_or_else(|| bad_value(key, line, "naive, ips or dr"))?
            }
            "lambda1" => cfg.train.lambda1 = parse_f64(key, value, line)?,
            "lambda2" => cfg.train.lambda2 = parse_f64(key, value, line)?,
            "lambda3" => cfg.train.lambda3 = parse_f64(key, value, line)?,
            "lambda4" => cfg.train.lambda4 = parse_f64(key, value, line)?,
            "lambda5" => cfg.train.lambda5 = parse_f64(key, value, line)?,
            "lambda_p" => cfg.train.lambda_p = parse_f64(key, value, line)?,
            "lr_phase1" => cfg.train.lr_phase1 = parse_f64(key, value, line)?,
            "lr_phase2" => cfg.train.lr_phase2 = parse_f64(key, value, line)?,
            "q" => cfg.train.q = parse_usize(key, value, line)?,
            "q_prime" => cfg.train.q_prime = parse_usize(key, value, line)?,
            "batch_size" => cfg.train.batch_size = parse_usize(key, value, line)?,
            "side_batch" => cfg.train.side_batch = parse_usize(key, value, line)?,
            "error_metric" => {
                cfg.train.error_metric =
                    ErrorMetric::parse(value).ok_or_else(|| bad_value(key, line, "mse or mae"))?
            }
            "normalize_imputation" => {
                cfg.train.normalize_imputation = parse_bool(key, value, line)?
            }
            _ => return Err(unknown()),
        },
        "eval" => match key {
            "negatives" => cfg.eval.negatives = parse_usize(key, value, line)?,
            "k" => cfg.eval.k = parse_usize(key, value, line)?,
            _ => return Err(unknown()),
        },
        "verify" => match key {
            "trials" => cfg.verify.trials = parse_usize(key, value, line)?,
            "eta" => cfg.verify.eta = parse_f64(key, value, line)?,
            "instances" => cfg.verify.instances = parse_usize(key, value, line)?,
            "bias_instances" => cfg.verify.bias_instances = parse_usize(key, value, line)?,
            "replay_dir" => cfg.verify.replay_dir = Some(PathBuf::from(value)),
            _ => return Err(unknown()),
        },
        _ => unreachable!("sections validated at the header"),
    }
    Ok(())
}
