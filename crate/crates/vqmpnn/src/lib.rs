//! Communication-efficient cooperative localization with a vector-quantized
//! message passing neural network.
//!
//! A wireless network of anchor nodes (known positions) and agent nodes
//! (unknown positions) exchanges noisy pairwise range measurements. Each
//! node encodes its position belief as a small learned state vector; instead
//! of broadcasting that vector, it broadcasts the index of the nearest entry
//! of a shared, trainable codebook, shrinking every message to
//! `ceil(log2 K)` payload bits. The whole pipeline (feature encoders,
//! per-round message/combination MLPs, projection codec, codebook,
//! estimation head) trains end to end with a straight-through estimator
//! through the quantizer, on a from-scratch reverse-mode tape in double
//! precision.
//!
//! The crate is a library first; the runnable examples are the front door.
//!
//! ## Examples
//!
//! ```text
//! examples/
//! ├── generate_topology.rs     # sample a network, inspect it, save the fixture
//! ├── gradient_check.rs        # finite-difference check of the full loss
//! ├── quantize_roundtrip.rs    # codebook lookup, wire widths, scalar quantizer
//! ├── cost_table.rs            # per-node communication cost of six methods
//! ├── train_smoke.rs           # small end-to-end training run with baselines
//! ├── evaluate_baselines.rs    # prior-only and least-squares references
//! ├── codebook_sweep.rs        # accuracy vs codebook size at desk scale
//! └── agent_generalization.rs  # one trained model across network sizes
//! ```
//!
//! Run any of them with:
//!
//! ```bash
//! cargo run --release -p vqmpnn --example train_smoke
//! ```
//!
//! There is also a thin `vqmpnn` binary with `gen | train | eval | sweep |
//! cost` subcommands behind a TOML config; see the README.
//!
//! ## Module map
//!
//! - [`scenario`] — network sampling: anchors, agents, range adjacency,
//!   noisy directed measurements, Gaussian priors.
//! - [`diffcore`] — the computation tape: forward recording, reverse-mode
//!   gradients, frozen replay, gradient checking, the optimizer.
//! - [`vq`] — the shared codebook, projection encoder/decoder,
//!   nearest-codeword lookup, straight-through composition, VQ loss terms.
//! - [`mpnn`] — the message-passing pipeline and the unquantized baseline.
//! - [`training`] — datasets, the composite loss, early stopping,
//!   checkpoints.
//! - [`comms`] — bit-exact cost formulas and the clipping scalar quantizer.
//! - [`evaluation`] — RMSE, Monte-Carlo evaluation, sweeps, and the damped
//!   Gauss-Newton oracle.
//! - [`config`] / [`cli`] — the TOML run configuration and the subcommand
//!   implementations.

pub mod cli;
pub mod comms;
pub mod config;
pub mod diffcore;
pub mod evaluation;
pub mod mpnn;
pub mod rng;
pub mod scenario;
pub mod training;
pub mod vq;
