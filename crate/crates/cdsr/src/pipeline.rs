//! Experiment driver behind the CLI subcommands.
//!
//! Every subcommand is a pure function of (config, seed, inputs) to files
//! under the output directory: `scenario/` for ground-truth dumps,
//! `checkpoints/` for trained parameters and histories, `metrics/` for
//! per-seed and summary measurements, `theory/` for verification reports
//! and failing instances.

use crate::config::{DataSource, ExperimentConfig};
use crate::datagen::{
    apply_ku, build_eval_data, filter_sparse, generate_scenario, read_events_csv, split_users,
    EvalData, SeqDataset, TrainingPool,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_runs, evaluate_domain, read_summary_csv, write_metrics_csv, write_summary_csv,
    MetricRow, SummaryRow,
};
use crate::loss::LossWeights;
use crate::model::{MimConfig, Model, ModelConfig};
use crate::theory::{
    dr_bias, dr_expectation, dr_expectation_enumerated, prediction_inaccuracy, read_instance_csv,
    tail_bound, verify_theory, write_instance_csv, BoundEstimator, coverage_violation_rate,
};
use crate::train::{train_alternating, TrainConfig, TrainingHistory};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Evaluate,
    Verify,
    Experiment,
    Report,
}

fn subseed(seed: u64, tag: u64) -> u64 {
    let mut x = seed.wrapping_add(tag.wrapping_mul(0x9E3779B97F4A7C15));
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58476D1CE4E5B9);
    x ^= x >> 27;
    x
}

/// Training and evaluation views for one seed.
pub struct World {
    pub pool: TrainingPool,
    pub eval_data: EvalData,
}

/// Build the dataset for a seed: generate or load, split users 80/10/10,
/// downsample non-overlapping train/val users, and assemble the pools.
pub fn build_world(cfg: &ExperimentConfig, seed: u64) -> Result<World> {
    let t = cfg.model.t;
    match &cfg.data.source {
        DataSource::Synthetic => {
            let scenario = generate_scenario(&cfg.data.gen, seed)?;
            let domain_users: Vec<Vec<u32>> =
                scenario.domains.iter().map(|d| d.members.clone()).collect();
            let mut split = split_users(&domain_users, subseed(seed, 1))?;
            let overlapping: BTreeSet<u32> = scenario
                .users
                .iter()
                .enumerate()
                .filter(|(_, u)| u.overlapping())
                .map(|(i, _)| i as u32)
                .collect();
            apply_ku(&mut split, &overlapping, cfg.data.nonoverlap_keep, subseed(seed, 2))?;
            let pool = TrainingPool::from_scenario(&scenario, &split, t, subseed(seed, 3));
            let items: Vec<usize> = scenario.domains.iter().map(|d| d.num_items()).collect();
            let eval_data =
                build_eval_data(&scenario.sequences_by_user(), &items, &split, &pool, t);
            Ok(World { pool, eval_data })
        }
        DataSource::Csv(path) => {
            if path.as_os_str().is_empty() {
                return Err(Error::Config("csv source needs csv_path".into()));
            }
            let events = read_events_csv(path)?;
            let events = filter_sparse(&events, cfg.data.min_item_inter, cfg.data.min_user_inter);
            if events.is_empty() {
                return Err(Error::Config("no events survive sparsity filtering".into()));
            }
            let dataset = SeqDataset::from_events(&events);
            let mut split = split_users(&dataset.domain_users(), subseed(seed, 1))?;
            let overlapping = dataset.overlapping_users();
            apply_ku(&mut split, &overlapping, cfg.data.nonoverlap_keep, subseed(seed, 2))?;
            let pool = TrainingPool::from_events(&dataset, &split, t, 1, subseed(seed, 3));
            let eval_data = build_eval_data(
                &dataset.sequences,
                &dataset.items_per_domain,
                &split,
                &pool,
                t,
            );
            Ok(World { pool, eval_data })
        }
    }
}

fn model_config(cfg: &ExperimentConfig, items_per_domain: Vec<usize>) -> ModelConfig {
    let mim = cfg.model.mim.then(|| MimConfig {
        threshold: cfg.mim.k,
        pool_size: if cfg.mim.pool == 0 { cfg.train.batch_size } else { cfg.mim.pool },
        aux_sim_weight: cfg.mim.aux_sim_weight,
        use_raw_embeddings: cfg.mim.use_raw_embeddings,
    });
    ModelConfig {
        num_domains: items_per_domain.len(),
        items_per_domain,
        d: cfg.model.d,
        t: cfg.model.t,
        encoder: cfg.model.encoder,
        mim,
        p_min: cfg.data.gen.p_min,
        shared_trunk: cfg.model.shared_trunk,
    }
}

fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        objective: cfg.train.objective,
        weights: LossWeights {
            lambda1: cfg.train.lambda1,
            lambda2: cfg.train.lambda2,
            lambda3: cfg.train.lambda3,
            lambda4: cfg.train.lambda4,
            lambda5: cfg.train.lambda5,
            lambda_p: cfg.train.lambda_p,
            aux_sim_weight: cfg.mim.aux_sim_weight,
            normalize_imputation: cfg.train.normalize_imputation,
        },
        lr_phase1: cfg.train.lr_phase1,
        lr_phase2: cfg.train.lr_phase2,
        q_phase1: cfg.train.q,
        q_phase2: cfg.train.q_prime,
        batch_size: cfg.train.batch_size,
        side_batch: cfg.train.side_batch,
        error_metric: cfg.train.error_metric,
    }
}

fn checkpoint_path(out: &Path, seed: u64) -> PathBuf {
    out.join("checkpoints").join(format!("model_seed{seed}.ckpt"))
}

/// Train one model for one seed; returns it together with its history.
pub fn train_one(cfg: &ExperimentConfig, world: &World, seed: u64) -> Result<(Model, TrainingHistory)> {
    let mut model = Model::new(model_config(cfg, world.pool.items_per_domain.clone()), subseed(seed, 4))?;
    let history = train_alternating(&mut model, &world.pool, &train_config(cfg), subseed(seed, 5))?;
    Ok((model, history))
}

/// Evaluate a frozen model on the test rows of every domain.
pub fn evaluate_one(
    cfg: &ExperimentConfig,
    world: &World,
    model: &Model,
    seed: u64,
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for z in 0..world.eval_data.num_domains {
        let m = evaluate_domain(model, &world.eval_data, z, cfg.eval.negatives, cfg.eval.k, subseed(seed, 6))?;
        rows.push(MetricRow { seed, domain: z, metric: "hr", k: cfg.eval.k, value: m.hr });
        rows.push(MetricRow { seed, domain: z, metric: "ndcg", k: cfg.eval.k, value: m.ndcg });
    }
    Ok(rows)
}

/// Dispatch one subcommand. Exit-code mapping happens in the binary.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path, seed_override: Option<u64>) -> Result<()> {
    let seed = seed_override.unwrap_or_else(|| cfg.seeds_or_default()[0]);
    match cmd {
        Command::Generate => {
            let DataSource::Synthetic = cfg.data.source else {
                return Err(Error::Config("generate requires a synthetic data source".into()));
            };
            let scenario = generate_scenario(&cfg.data.gen, seed)?;
            let dir = out.join("scenario");
            scenario.dump_csv(&dir)?;
            println!(
                "wrote scenario (seed {seed}): {} users, {} domains -> {}",
                scenario.users.len(),
                scenario.num_domains,
                dir.display()
            );
            Ok(())
        }
        Command::Train => {
            let world = build_world(cfg, seed)?;
            let (model, history) = train_one(cfg, &world, seed)?;
            let ckpt = checkpoint_path(out, seed);
            model.save_checkpoint(&ckpt)?;
            let hist = out.join("checkpoints").join(format!("history_seed{seed}.csv"));
            history.write_csv(&hist)?;
            let last = history.steps.last().expect("at least one step");
            println!(
                "trained objective={} seed={seed}: {} steps, final loss {:.6} -> {}",
                cfg.train.objective.name(),
                history.steps.len(),
                last.loss,
                ckpt.display()
            );
            Ok(())
        }
        Command::Evaluate => {
            let world = build_world(cfg, seed)?;
            let mut model =
                Model::new(model_config(cfg, world.pool.items_per_domain.clone()), subseed(seed, 4))?;
            let ckpt = checkpoint_path(out, seed);
            if !ckpt.exists() {
                return Err(Error::Config(format!(
                    "no checkpoint at {}; run `train` first",
                    ckpt.display()
                )));
            }
            model.load_checkpoint(&ckpt)?;
            let rows = evaluate_one(cfg, &world, &model, seed)?;
            let path = out.join("metrics").join(format!("metrics_seed{seed}.csv"));
            write_metrics_csv(&path, &rows)?;
            for r in &rows {
                println!("seed={} domain={} {}@{} = {:.4}", r.seed, r.domain, r.metric, r.k, r.value);
            }
            Ok(())
        }
        Command::Verify => run_verify(cfg, out, seed),
        Command::Experiment => run_experiment(cfg, out),
        Command::Report => {
            let path = out.join("metrics").join("summary.csv");
            let rows = read_summary_csv(&path)?;
            println!("{}", render_summary_table(&rows));
            Ok(())
        }
    }
}

fn run_verify(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<()> {
    let dir = out.join("theory");
    std::fs::create_dir_all(&dir)?;

    if let Some(replay) = &cfg.verify.replay_dir {
        let inst = read_instance_csv(replay)?;
        let mut report = String::new();
        let p = prediction_inaccuracy(&inst);
        let expectation = dr_expectation(&inst);
        let bias = dr_bias(&inst);
        report.push_str(&format!("replayed instance from {}\n", replay.display()));
        report.push_str(&format!("P = {p:.10}\nE_O[E_DR] = {expectation:.10}\nbias = {bias:.3e}\n"));
        let mut ok = true;
        if inst.total_pairs() <= 20 {
            let enumerated = dr_expectation_enumerated(&inst)?;
            let gap = (bias - (p - enumerated).abs()).abs();
            let pass = gap <= 1e-10;
            ok &= pass;
            report.push_str(&format!(
                "[{}] bias-exactness: |analytic − enumerated| = {gap:.3e}\n",
                if pass { "PASS" } else { "FAIL" }
            ));
        }
        let rate = coverage_violation_rate(&inst, cfg.verify.trials, cfg.verify.eta, seed, 0)?;
        let allowed = cfg.verify.eta
            + 3.0 * (cfg.verify.eta * (1.0 - cfg.verify.eta) / cfg.verify.trials as f64).sqrt();
        let pass = rate <= allowed;
        ok &= pass;
        report.push_str(&format!(
            "[{}] tail-bound-coverage: violation rate {rate:.5} (allowed {allowed:.5})\n",
            if pass { "PASS" } else { "FAIL" }
        ));
        if inst.imputation_premise_holds() {
            let dr = tail_bound(&inst, cfg.verify.eta, BoundEstimator::Dr)?;
            let ips = tail_bound(&inst, cfg.verify.eta, BoundEstimator::Ips)?;
            let pass = dr <= ips;
            ok &= pass;
            report.push_str(&format!(
                "[{}] bound-comparison: dr {dr:.6} vs ips {ips:.6}\n",
                if pass { "PASS" } else { "FAIL" }
            ));
        }
        print!("{report}");
        std::fs::write(dir.join("replay_report.txt"), report)?;
        return if ok { Ok(()) } else { Err(Error::CheckFailed("replayed instance failed".into())) };
    }

    let report = verify_theory(&cfg.verify_config(), seed)?;
    let rendered = report.render();
    print!("{rendered}");
    std::fs::write(dir.join("report.txt"), &rendered)?;
    for check in &report.checks {
        if let Some(inst) = &check.failing {
            let inst_dir = dir.join(format!("failing_{}", check.name));
            write_instance_csv(inst, &inst_dir)?;
            println!("failing instance for {} dumped to {}", check.name, inst_dir.display());
        }
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Error::CheckFailed("estimator verification failed; see theory/report.txt".into()))
    }
}

fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let seeds = cfg.seeds_or_default();
    let mut all_rows: Vec<MetricRow> = Vec::new();
    for &seed in &seeds {
        let world = build_world(cfg, seed)?;
        let (model, history) = train_one(cfg, &world, seed)?;
        model.save_checkpoint(&checkpoint_path(out, seed))?;
        history.write_csv(&out.join("checkpoints").join(format!("history_seed{seed}.csv")))?;
        let rows = evaluate_one(cfg, &world, &model, seed)?;
        write_metrics_csv(&out.join("metrics").join(format!("metrics_seed{seed}.csv")), &rows)?;
        for r in &rows {
            println!(
                "seed={} domain={} {}@{} = {:.4}",
                r.seed, r.domain, r.metric, r.k, r.value
            );
        }
        all_rows.extend(rows);
    }

    let mut summary = Vec::new();
    let mut keys: Vec<(usize, &'static str, usize)> =
        all_rows.iter().map(|r| (r.domain, r.metric, r.k)).collect();
    keys.sort_unstable();
    keys.dedup();
    for (domain, metric, k) in keys {
        let values: Vec<f64> = all_rows
            .iter()
            .filter(|r| r.domain == domain && r.metric == metric && r.k == k)
            .map(|r| r.value)
            .collect();
        let (mean, std) = aggregate_runs(&values);
        summary.push(SummaryRow {
            domain,
            metric: metric.to_string(),
            k,
            mean,
            std,
            n_seeds: values.len(),
        });
    }
    let path = out.join("metrics").join("summary.csv");
    write_summary_csv(&path, &summary)?;
    println!("{}", render_summary_table(&summary));
    println!("summary -> {}", path.display());
    Ok(())
}

fn render_summary_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8} {:<8} {:<4} {:>10} {:>10} {:>8}\n",
        "domain", "metric", "k", "mean", "std", "n_seeds"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<8} {:<8} {:<4} {:>10.4} {:>10.4} {:>8}\n",
            r.domain, r.metric, r.k, r.mean, r.std, r.n_seeds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn fast_config() -> ExperimentConfig {
        parse_config(
            "seeds = 1\n\
             [data]\nusers_per_domain = 24\nitems_per_domain = 15\nmax_seq_len = 6\nrelevance_bias = 0\n\
             [model]\nd = 4\nt = 4\n\
             [mim]\npool = 4\n\
             [train]\nq = 2\nq_prime = 2\nbatch_size = 6\n\
             [eval]\nnegatives = 5\n",
        )
        .unwrap()
    }

    #[test]
    fn world_building_is_deterministic() {
        let cfg = fast_config();
        let a = build_world(&cfg, 3).unwrap();
        let b = build_world(&cfg, 3).unwrap();
        assert_eq!(a.pool.observed, b.pool.observed);
        assert_eq!(a.pool.full_space_users, b.pool.full_space_users);
        let c = build_world(&cfg, 4).unwrap();
        assert_ne!(a.pool.observed, c.pool.observed);
    }

    #[test]
    fn train_then_evaluate_roundtrip() {
        let cfg = fast_config();
        let dir = tempfile::tempdir().unwrap();
        run(Command::Train, &cfg, dir.path(), Some(1)).unwrap();
        assert!(checkpoint_path(dir.path(), 1).exists());
        run(Command::Evaluate, &cfg, dir.path(), Some(1)).unwrap();
        assert!(dir.path().join("metrics").join("metrics_seed1.csv").exists());
    }

    #[test]
    fn evaluate_without_checkpoint_is_an_error() {
        let cfg = fast_config();
        let dir = tempfile::tempdir().unwrap();
        let err = run(Command::Evaluate, &cfg, dir.path(), Some(1)).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn training_twice_gives_byte_identical_checkpoints() {
        let cfg = fast_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run(Command::Train, &cfg, dir_a.path(), Some(2)).unwrap();
        run(Command::Train, &cfg, dir_b.path(), Some(2)).unwrap();
        let a = std::fs::read(checkpoint_path(dir_a.path(), 2)).unwrap();
        let b = std::fs::read(checkpoint_path(dir_b.path(), 2)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn generate_writes_the_four_scenario_files() {
        let cfg = fast_config();
        let dir = tempfile::tempdir().unwrap();
        run(Command::Generate, &cfg, dir.path(), Some(7)).unwrap();
        for name in ["ratings.csv", "propensity.csv", "observed.csv", "sequences.csv"] {
            assert!(dir.path().join("scenario").join(name).exists(), "{name} missing");
        }
    }

    #[test]
    fn experiment_summary_counts_all_seeds() {
        let mut cfg = fast_config();
        cfg.seeds = vec![1, 2];
        let dir = tempfile::tempdir().unwrap();
        run(Command::Experiment, &cfg, dir.path(), None).unwrap();
        let rows = read_summary_csv(&dir.path().join("metrics").join("summary.csv")).unwrap();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.n_seeds == 2));
        // report renders from the written summary
        run(Command::Report, &cfg, dir.path(), None).unwrap();
    }

    #[test]
    fn verify_writes_a_report_and_passes() {
        let mut cfg = fast_config();
        cfg.verify.trials = 10_000;
        cfg.verify.instances = 2;
        cfg.verify.bias_instances = 30;
        let dir = tempfile::tempdir().unwrap();
        run(Command::Verify, &cfg, dir.path(), Some(3)).unwrap();
        let report = std::fs::read_to_string(dir.path().join("theory").join("report.txt")).unwrap();
        assert_eq!(report.matches("[PASS]").count(), 4, "report:\n{report}");
    }
}
