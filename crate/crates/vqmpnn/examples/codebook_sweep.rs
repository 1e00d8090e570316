//! Accuracy versus codebook size at desk scale: train one small model per
//! size and report RMSE against the per-node bit budget.
//!
//!     cargo run --release -p vqmpnn --example codebook_sweep

use vqmpnn::evaluation::{sweep_codebook, SweepSetup};
use vqmpnn::mpnn::{ModelConfig, PassMode};
use vqmpnn::scenario::ScenarioParams;
use vqmpnn::training::TrainConfig;

fn main() {
    let setup = SweepSetup {
        scenario: ScenarioParams::default(),
        train: TrainConfig {
            epochs: 60,
            patience: 20,
            batch_size: 8,
            mode: PassMode::Vq,
            model: ModelConfig::new(16, 12, 64, 3),
            seed: 0,
            ..TrainConfig::default()
        },
        train_samples: 96,
        val_samples: 24,
        n_mc: 48,
        seeds: &[0],
        q_bits: 32,
        header_bits: 32,
        nominal_neighbors: 10,
    };
    println!("this trains one model per size; expect a few minutes\n");
    let rows = sweep_codebook(&setup, &[16, 64, 256]).unwrap();
    println!("{:>6} {:>12} {:>8}", "K", "bits/node", "rmse");
    for r in &rows {
        println!(
            "{:>6} {:>12} {:>8.3}",
            r.codebook_size, r.bits_per_node, r.rmse
        );
    }
    println!("\nlarger codebooks quantize more finely and localize better");
}
