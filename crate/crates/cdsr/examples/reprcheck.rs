use cdsr::config::parse_config;
use cdsr::pipeline::{build_world, train_one};
use cdsr::tape::Tape;

fn main() {
    let text = std::fs::read_to_string(std::env::args().nth(1).unwrap()).unwrap();
    let cfg = parse_config(&text).unwrap();
    let world = build_world(&cfg, 1).unwrap();
    let (model, _) = train_one(&cfg, &world, 1).unwrap();
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    for row in world.eval_data.rows[0].iter().take(3) {
        let enc = model.encode_context(&mut tape, &vars, 0, &row.context);
        let rep = model.represent(&mut tape, &vars, &enc, &[]);
        let vals = tape.value(rep.repr);
        println!(
            "user {} ctx {:?} real_len {} repr[0..4] {:?}",
            row.user,
            &row.context,
            cdsr::encoder::real_length(&row.context),
            &vals[..4]
        );
    }
}
