//! Trains the default model on the default synthetic split and prints the
//! evaluation table. Usage: `cargo run --release --example desk_run [EPOCHS]`.

use std::time::Instant;

use pcis_core::optim::{train, TrainConfig};
use pcis_core::pipeline::evaluate_model;
use pcis_core::synth::{generate_split, SynthConfig};
use pcis_core::{ClusterConfig, LossConfig, ModelConfig};

fn main() {
    let epochs = std::env::args().nth(1).map_or(60, |s| s.parse().expect("EPOCHS must be an integer"));
    let (train_set, test_set) = generate_split(&SynthConfig::default()).expect("synthetic split");
    let model = ModelConfig::default();
    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let start = Instant::now();
    let out = train(&train_set, &model, &LossConfig::default(), &cfg, |e| {
        eprintln!(
            "{:3} ce {:.4} sal_initial {:.4} sal_refined {:.4} total {:.4} ({:.1}s)",
            e.epoch,
            e.cross_entropy,
            e.sal_initial,
            e.sal_refined,
            e.total,
            start.elapsed().as_secs_f64()
        );
    })
    .expect("training");
    let result = evaluate_model(&test_set, &out.params, &model, &ClusterConfig::default(), &[0.5, 0.25], 1)
        .expect("evaluation");
    print!("{}", result.to_table());
}
