//! Per-node communication cost of the six compared methods under the
//! standard constants (Q = 32, H = 32, ten neighbors, T = 3 except the
//! ADMM baseline at 400 iterations, J = 20, N_p = 1000, K = 2^10, M = 16).
//!
//!     cargo run --release -p vqmpnn --example cost_table

use vqmpnn::comms::{comm_cost, CostMethod};
use vqmpnn::config::RunConfig;

fn main() {
    let cfg = RunConfig::default();
    println!("{:<12} {:>12}", "method", "bits/node");
    let mut vq_bits = 0u64;
    let mut best_other = u64::MAX;
    for method in CostMethod::ALL {
        let bits = comm_cost(method, &cfg.cost_spec(method)).unwrap();
        println!("{:<12} {bits:>12}", method.name());
        if method == CostMethod::VqMpnn {
            vq_bits = bits;
        } else {
            best_other = best_other.min(bits);
        }
    }
    println!(
        "\nquantized messaging needs {:.1}x fewer bits than the cheapest alternative",
        best_other as f64 / vq_bits as f64
    );
}
