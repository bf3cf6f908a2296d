use cdsr::config::parse_config;
use cdsr::interest::interest_similarity;
use cdsr::model::Model;
use cdsr::pipeline::{build_world, train_one};
use cdsr::tape::Tape;

fn main() {
    let text = std::fs::read_to_string(std::env::args().nth(1).unwrap()).unwrap();
    let cfg = parse_config(&text).unwrap();
    let seed = 1u64;
    let world = build_world(&cfg, seed).unwrap();
    for z in 0..2 {
        let obs = &world.pool.observed[z];
        let pos = obs.iter().filter(|p| p.rating == 1).count();
        let avg_seq: f64 = world.pool.sequences[z].values().map(|s| s.len() as f64).sum::<f64>()
            / world.pool.sequences[z].len() as f64;
        println!(
            "domain {z}: observed={} positive_rate={:.3} eval_rows={} avg_train_seq={:.1}",
            obs.len(),
            pos as f64 / obs.len() as f64,
            world.eval_data.rows[z].len(),
            avg_seq,
        );
    }
    let t0 = std::time::Instant::now();
    let (model, _) = train_one(&cfg, &world, seed).unwrap();
    println!("train time: {:.1}s", t0.elapsed().as_secs_f64());
    sim_stats(&model, &world, &cfg);
}

fn sim_stats(model: &Model, world: &cdsr::pipeline::World, cfg: &cdsr::config::ExperimentConfig) {
    // similarity distribution between domain-0 and domain-1 train contexts
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let mut views = vec![Vec::new(), Vec::new()];
    for z in 0..2 {
        for (_, seq) in world.pool.sequences[z].iter().take(24) {
            let padded = cdsr::datagen::pad_truncate(seq, model.config.t);
            let enc = model.encode_context(&mut tape, &vars, z, &padded);
            views[z].push((enc.mim_view, enc.real_len));
        }
    }
    let w1 = model.params.iter().find(|p| p.name == "sim_w1").map(|p| p.tensor.clone());
    let (Some(w1), Some(w2)) = (w1, model.params.iter().find(|p| p.name == "sim_w2").map(|p| p.tensor.clone())) else {
        println!("no interest-group weights (mim off)");
        return;
    };
    let mut sims = Vec::new();
    for &(vi, li) in &views[0] {
        for &(vj, lj) in &views[1] {
            sims.push(interest_similarity(
                tape.value(vi), li, tape.value(vj), lj, model.config.d, &w1, &w2,
            ));
        }
    }
    sims.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |f: f64| sims[((sims.len() - 1) as f64 * f) as usize];
    let above = sims.iter().filter(|&&s| s >= cfg.mim.k).count();
    println!(
        "sims n={} min={:.3} p25={:.3} median={:.3} p75={:.3} max={:.3}; flag rate at k={}: {:.3}",
        sims.len(), q(0.0), q(0.25), q(0.5), q(0.75), q(1.0),
        cfg.mim.k, above as f64 / sims.len() as f64
    );
}
// train-split leave-last-out diagnostic lives in eval_train_rows
