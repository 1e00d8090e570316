//! Weight sharing means one trained model runs on any network size. Train
//! at 20 agents, then evaluate the same parameters at other agent counts.
//!
//!     cargo run --release -p vqmpnn --example agent_generalization

use vqmpnn::evaluation::sweep_agents;
use vqmpnn::mpnn::{ModelConfig, PassMode};
use vqmpnn::scenario::ScenarioParams;
use vqmpnn::training::{generate_dataset, train, Split, TrainConfig};

fn main() {
    let scen = ScenarioParams::default();
    let train_set = generate_dataset(&scen, 128, Split::Train, 2).unwrap();
    let val_set = generate_dataset(&scen, 32, Split::Val, 2).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        patience: 20,
        batch_size: 8,
        model: ModelConfig::new(16, 12, 256, 3),
        seed: 2,
        ..TrainConfig::default()
    };
    println!("training once at {} agents...", scen.num_agents);
    let out = train(&train_set, &val_set, &cfg).unwrap();

    let rows = sweep_agents(
        &out.model,
        PassMode::Vq,
        &scen,
        &[10, 15, 20, 25, 30],
        48,
        2,
        32,
        32,
    )
    .unwrap();
    println!("{:>8} {:>8}", "agents", "rmse");
    for r in &rows {
        println!("{:>8} {:>8.3}", r.num_agents, r.rmse);
    }
    println!("\ndenser networks give each agent more neighbors and better accuracy");
}
