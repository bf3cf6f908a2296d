use cdsr::config::parse_config;
use cdsr::datagen::{build_eval_data, pad_truncate, EvalRow};
use cdsr::eval::evaluate_domain;
use cdsr::pipeline::{build_world, train_one};

fn main() {
    let path = std::env::args().nth(1).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let cfg = parse_config(&text).unwrap();
    let seed: u64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(1);
    let world = build_world(&cfg, seed).unwrap();
    let t0 = std::time::Instant::now();
    let (model, history) = train_one(&cfg, &world, seed).unwrap();
    let p1_last = history.steps.iter().filter(|s| s.phase == 1).last().unwrap().loss;
    // test metrics
    let mut test_nd = 0.0;
    for z in 0..2 {
        let m = evaluate_domain(&model, &world.eval_data, z, cfg.eval.negatives, 10, seed + 77).unwrap();
        test_nd += m.ndcg / 2.0;
    }
    // train-split leave-last-out: same protocol on train users
    let mut train_eval = world.eval_data.clone();
    for z in 0..2 {
        let rows: Vec<EvalRow> = world.pool.train_users[z]
            .iter()
            .filter_map(|&u| {
                let seq = &world.pool.sequences[z][&u];
                if seq.len() < 2 {
                    return None;
                }
                let (head, tail) = seq.split_at(seq.len() - 1);
                Some(EvalRow {
                    user: u,
                    context: pad_truncate(head, cfg.model.t),
                    positive: tail[0],
                    interacted: seq.iter().copied().collect(),
                    other_domain_context: world.pool.other_domain_context(z, u),
                })
            })
            .take(40)
            .collect();
        train_eval.rows[z] = rows;
    }
    let mut train_nd = 0.0;
    for z in 0..2 {
        let m = evaluate_domain(&model, &train_eval, z, cfg.eval.negatives, 10, seed + 78).unwrap();
        train_nd += m.ndcg / 2.0;
    }
    println!(
        "{path} seed{seed}: loss_p1_end={p1_last:.4} train_ndcg={train_nd:.4} test_ndcg={test_nd:.4} ({:.0}s)",
        t0.elapsed().as_secs_f64()
    );
}
