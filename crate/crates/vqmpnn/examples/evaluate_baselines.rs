//! Score the two non-learned references on fresh scenarios: the prior-only
//! estimator (reports the prior mean) and the damped Gauss-Newton joint
//! least-squares oracle.
//!
//!     cargo run --release -p vqmpnn --example evaluate_baselines

use vqmpnn::evaluation::{evaluate, Estimator};
use vqmpnn::scenario::ScenarioParams;
use vqmpnn::training::{generate_dataset, Split};

fn main() {
    let scen = ScenarioParams::default();
    let test_set = generate_dataset(&scen, 200, Split::Test, 11).unwrap();

    let prior = evaluate(&Estimator::PriorOnly, &test_set, 32, 32, 11).unwrap();
    println!(
        "prior-only    : rmse {:.3} m (theory sqrt(trace Sigma) = {:.3} m)",
        prior.rmse,
        (2.0 * scen.prior_var).sqrt()
    );

    let lsq = evaluate(
        &Estimator::LeastSquares { iterations: 100 },
        &test_set,
        32,
        32,
        11,
    )
    .unwrap();
    println!("least-squares : rmse {:.3} m", lsq.rmse);
    println!(
        "measurement noise alone is sigma = {:.1} m; the oracle fuses ~{:.0} ranges per agent",
        scen.noise.sigma(),
        test_set
            .iter()
            .map(|e| e.scenario.n_directed_edges() as f64 / e.scenario.n_nodes() as f64)
            .sum::<f64>()
            / test_set.len() as f64
    );
}
