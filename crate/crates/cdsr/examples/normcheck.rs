use cdsr::config::parse_config;
use cdsr::pipeline::{build_world, train_one};
use cdsr::model::Model;

fn norms(model: &Model, label: &str) {
    for name in ["item_table_0", "position_table", "prediction_w1", "prediction_w3"] {
        if let Some(p) = model.params.iter().find(|p| p.name == name) {
            let n = (p.tensor.data.iter().map(|v| v * v).sum::<f64>() / p.tensor.numel() as f64).sqrt();
            println!("{label} {name}: rms {:.4}", n);
        }
    }
}

fn main() {
    let text = std::fs::read_to_string(std::env::args().nth(1).unwrap()).unwrap();
    let cfg = parse_config(&text).unwrap();
    let world = build_world(&cfg, 1).unwrap();
    let fresh = Model::new(
        cdsr::model::ModelConfig {
            num_domains: 2,
            items_per_domain: world.pool.items_per_domain.clone(),
            d: cfg.model.d,
            t: cfg.model.t,
            encoder: cfg.model.encoder,
            mim: None,
            p_min: 0.05,
            shared_trunk: false,
        },
        1,
    )
    .unwrap();
    norms(&fresh, "init");
    let (model, _) = train_one(&cfg, &world, 1).unwrap();
    norms(&model, "trained");
}
