//! End-to-end smoke training at desk scale: a few hundred optimizer steps
//! on small datasets, then a comparison against the prior-only and
//! least-squares references.
//!
//!     cargo run --release -p vqmpnn --example train_smoke

use std::time::Instant;

use vqmpnn::evaluation::{evaluate, Estimator};
use vqmpnn::mpnn::{ModelConfig, PassMode};
use vqmpnn::scenario::ScenarioParams;
use vqmpnn::training::{generate_dataset, train, Split, TrainConfig};

fn main() {
    let scen = ScenarioParams::default();
    let train_set = generate_dataset(&scen, 128, Split::Train, 1).unwrap();
    let val_set = generate_dataset(&scen, 32, Split::Val, 1).unwrap();
    let test_set = generate_dataset(&scen, 64, Split::Test, 1).unwrap();

    let cfg = TrainConfig {
        epochs: 60,
        patience: 20,
        batch_size: 8,
        model: ModelConfig::new(16, 12, 256, 3),
        seed: 1,
        ..TrainConfig::default()
    };
    println!(
        "training on {} scenarios, validating on {}, codebook K = {}",
        train_set.len(),
        val_set.len(),
        cfg.model.codebook_size
    );
    let t0 = Instant::now();
    let out = train(&train_set, &val_set, &cfg).unwrap();
    println!(
        "{} epochs in {:.0} s; best val {:.1} at epoch {}",
        out.log.len(),
        t0.elapsed().as_secs_f64(),
        out.best_val,
        out.best_epoch
    );
    for r in out.log.iter().step_by(10) {
        println!(
            "  epoch {:>3}: train {:>9.1} val {:>9.1} codebook use {:>5.1}%",
            r.epoch,
            r.train_total,
            r.val_total,
            100.0 * r.codebook_utilization
        );
    }

    let net = evaluate(
        &Estimator::Net {
            model: &out.model,
            mode: PassMode::Vq,
        },
        &test_set,
        32,
        32,
        1,
    )
    .unwrap();
    let prior = evaluate(&Estimator::PriorOnly, &test_set, 32, 32, 1).unwrap();
    let lsq = evaluate(
        &Estimator::LeastSquares { iterations: 100 },
        &test_set,
        32,
        32,
        1,
    )
    .unwrap();
    println!(
        "test rmse: quantized net {:.3} m ({} bits/node)",
        net.rmse, net.bits_per_node
    );
    println!("           prior-only    {:.3} m", prior.rmse);
    println!("           least-squares {:.3} m", lsq.rmse);
    println!("(a smoke run undertrains; see the README for the full recipe)");
}
