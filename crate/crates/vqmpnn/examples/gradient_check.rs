//! Check the analytic gradient of the full composite loss against central
//! finite differences on a hand-laid six-node network: every block is
//! swept, including the codebook and the straight-through paths.
//!
//!     cargo run --release -p vqmpnn --example gradient_check

use std::time::Instant;

use vqmpnn::diffcore::grad_check;
use vqmpnn::mpnn::{ModelConfig, ModelParams, PassMode};
use vqmpnn::rng;
use vqmpnn::scenario::{draw_init_positions, synthetic_scenario, NoiseModel, Position};
use vqmpnn::training::{CompositeLossFn, TrainExample};

fn main() {
    let t0 = Instant::now();
    let scenario = synthetic_scenario(
        &[
            Position::new(0.0, 0.0),
            Position::new(40.0, 0.0),
            Position::new(0.0, 40.0),
        ],
        &[
            Position::new(12.0, 9.0),
            Position::new(22.0, 18.0),
            Position::new(9.0, 26.0),
        ],
        30.0,
        &NoiseModel::Awgn { sigma: 2.0 },
        10.0,
        5,
    )
    .unwrap();
    let init_positions = draw_init_positions(&scenario, &mut rng::stream(5, "init"));
    let example = TrainExample {
        scenario,
        init_positions,
    };

    // Full architecture; a small codebook keeps the sweep quick.
    let model = ModelParams::init(ModelConfig::new(16, 12, 16, 3), 42);
    let f = CompositeLossFn::new(&example, &model, PassMode::Vq, 0.1, 0.25).unwrap();
    println!(
        "sweeping {} parameters across {} blocks (loss {:.3})",
        model.set.n_scalars(),
        model.set.n_blocks(),
        f.base_value()
    );

    let err = grad_check(&f, &model.set, 1e-5);
    println!(
        "max relative error {err:.3e} in {:.1} s",
        t0.elapsed().as_secs_f64()
    );
    assert!(err < 1e-4, "gradient check failed");
    println!("gradient check passed (threshold 1e-4)");
}
