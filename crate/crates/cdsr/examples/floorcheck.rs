use cdsr::config::parse_config;
use cdsr::datagen::generate_scenario;
use cdsr::pipeline::build_world;
use cdsr::tensor::sigmoid;
use std::collections::BTreeMap;

fn dot(a: &[f64], b: &[f64]) -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() }

fn main() {
    let text = std::fs::read_to_string(std::env::args().nth(1).unwrap()).unwrap();
    let cfg = parse_config(&text).unwrap();
    let scenario = generate_scenario(&cfg.data.gen, 1).unwrap();
    let world = build_world(&cfg, 1).unwrap();

    let mut item_sum: Vec<BTreeMap<u32, (f64, f64)>> = vec![BTreeMap::new(); 2];
    for z in 0..2 {
        for p in &world.pool.observed[z] {
            let e = item_sum[z].entry(p.item).or_insert((0.0, 0.0));
            e.0 += p.rating as f64;
            e.1 += 1.0;
        }
    }
    let mut mse_const = 0.0;
    let mut mse_item = 0.0;
    let mut mse_rel = 0.0;
    let mut n = 0.0;
    let mut rate = 0.0;
    for z in 0..2 {
        let d = &scenario.domains[z];
        for p in &world.pool.observed[z] {
            let r = p.rating as f64;
            rate += r;
            let (s, c) = item_sum[z][&p.item];
            let item_pred = s / c;
            let urec = &scenario.users[p.user as usize];
            let rel = sigmoid(dot(&urec.latent, &d.items[p.item as usize - 1].latent) + cfg.data.gen.relevance_bias);
            mse_const += (0.5 - r) * (0.5 - r);
            mse_item += (item_pred - r) * (item_pred - r);
            mse_rel += (rel - r) * (rel - r);
            n += 1.0;
        }
    }
    println!(
        "observed examples n={n}: positive rate {:.3}\n mse(const 0.5)    = {:.4}\n mse(item base)    = {:.4}\n mse(true rel)     = {:.4}",
        rate / n, mse_const / n, mse_item / n, mse_rel / n
    );
}
