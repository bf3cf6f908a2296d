use cdsr::config::parse_config;
use cdsr::datagen::generate_scenario;
use cdsr::eval::{metric_at_k, rank_from_scores, sample_negatives};
use cdsr::pipeline::build_world;
use cdsr::tensor::sigmoid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() }

fn main() {
    let text = std::fs::read_to_string(std::env::args().nth(1).unwrap()).unwrap();
    let cfg = parse_config(&text).unwrap();
    let seed = cfg.seeds_or_default()[0];
    let scenario = generate_scenario(&cfg.data.gen, seed).unwrap();
    let world = build_world(&cfg, seed).unwrap();
    for ranker in ["true_relevance", "popularity", "random"] {
        let mut nd_all = Vec::new();
        let mut hr_all = Vec::new();
        for z in 0..2 {
            let d = &scenario.domains[z];
            for row in &world.eval_data.rows[z] {
                let member_row = d.member_row(row.user).unwrap();
                let urec = &scenario.users[row.user as usize];
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (z as u64) << 32 ^ (row.user as u64) * 7919);
                let negs = sample_negatives(&mut rng, d.num_items(), &row.interacted, cfg.eval.negatives);
                let score = |item: u32| -> f64 {
                    let it = &d.items[item as usize - 1];
                    match ranker {
                        "true_relevance" => sigmoid(dot(&urec.latent, &it.latent) + cfg.data.gen.relevance_bias),
                        "popularity" => it.popularity,
                        _ => {
                            // hash noise
                            let h = (item as u64).wrapping_mul(0x9E3779B97F4A7C15) ^ (row.user as u64);
                            (h % 10007) as f64 / 10007.0
                        }
                    }
                };
                let pos = score(row.positive);
                let negs_s: Vec<f64> = negs.iter().map(|&n| score(n)).collect();
                let rank = rank_from_scores(pos, &negs_s);
                nd_all.push(metric_at_k(rank, 10, cdsr::eval::MetricKind::Ndcg));
                hr_all.push(metric_at_k(rank, 10, cdsr::eval::MetricKind::Hr));
                let _ = member_row;
            }
        }
        let m = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        println!("{ranker}: ndcg@10 {:.4} hr@10 {:.4} over {} rows", m(&nd_all), m(&hr_all), nd_all.len());
    }
}
