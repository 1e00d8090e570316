//! Minimal reverse-mode automatic differentiation for the fixed tiny-MLP
//! pipeline: dense affine layers, GELU, concatenation, summation, squared
//! error terms, stop-gradient and straight-through markers.
//!
//! Everything is double precision and CPU only. A forward pass records
//! primitive operations on a [`Tape`]; [`Tape::backward`] accumulates
//! parameter gradients; [`Tape::replay`] re-evaluates the recorded graph
//! against a different parameter set with stop-gradient and straight-through
//! sites frozen at their recorded values. The replayed function is the one
//! central finite differences must probe, so the gradient checker is built
//! on top of it.

mod gradcheck;
mod mlp;
mod optim;
mod tape;

pub use gradcheck::{fd_gradient, fd_gradient_of, grad_check, max_rel_error, ParamScalarFn};
pub use mlp::{DenseLayer, Mlp};
pub use optim::OptimizerState;
pub use tape::{Tape, ValueId};

use rand::Rng;
use thiserror::Error;

/// Errors from the autodiff layer.
#[derive(Debug, Error)]
pub enum DiffError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("backward requires a completed forward pass")]
    BackwardBeforeForward,
    #[error("tape tip has length {0}, expected a scalar")]
    NonScalarTip(usize),
    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),
    #[error("unknown parameter block `{0}`")]
    UnknownBlock(String),
}

/// One named, trainable array. Matrices are row-major `rows x cols`;
/// vectors use `cols == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `r` as a slice (for matrices and the codebook).
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Handle to a block inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef(pub(crate) usize);

/// The single trainable object: an ordered collection of named blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    blocks: Vec<ParamBlock>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    ) -> ParamRef {
        assert_eq!(data.len(), rows * cols, "block data must match its shape");
        self.blocks.push(ParamBlock {
            name: name.into(),
            rows,
            cols,
            data,
        });
        ParamRef(self.blocks.len() - 1)
    }

    pub fn block(&self, r: ParamRef) -> &ParamBlock {
        &self.blocks[r.0]
    }

    pub fn block_mut(&mut self, r: ParamRef) -> &mut ParamBlock {
        &mut self.blocks[r.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamRef> {
        self.blocks
            .iter()
            .position(|b| b.name == name)
            .map(ParamRef)
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    /// Fresh zero gradient storage mirroring every block shape.
    pub fn zero_grads(&self) -> GradSet {
        GradSet {
            slots: self
                .blocks
                .iter()
                .map(|b| vec![0.0; b.data.len()])
                .collect(),
        }
    }
}

/// Per-block gradient accumulators, shape-mirroring a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    pub slots: Vec<Vec<f64>>,
}

impl GradSet {
    pub fn slot(&self, r: ParamRef) -> &[f64] {
        &self.slots[r.0]
    }

    /// Elementwise `self += other`. Shapes must match.
    pub fn add_assign(&mut self, other: &GradSet) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale_by(&mut self, c: f64) {
        for s in &mut self.slots {
            for x in s.iter_mut() {
                *x *= c;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.slots
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0_f64, |m, &x| m.max(x.abs()))
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
pub(crate) const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF via the exact erf form.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

/// GELU activation, exact form `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// Analytic GELU derivative `Phi(x) + x * phi(x)`.
pub fn gelu_prime(x: f64) -> f64 {
    normal_cdf(x) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Glorot-uniform weight draw in `+-sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle for Phi: Simpson quadrature of the normal pdf.
    fn phi_quadrature(x: f64) -> f64 {
        let lo = -10.0_f64;
        let n = 20_000;
        let h = (x - lo) / n as f64;
        let pdf = |t: f64| INV_SQRT_2PI * (-0.5 * t * t).exp();
        let mut acc = pdf(lo) + pdf(x);
        for i in 1..n {
            let t = lo + i as f64 * h;
            acc += if i % 2 == 1 {
                4.0 * pdf(t)
            } else {
                2.0 * pdf(t)
            };
        }
        acc * h / 3.0
    }

    #[test]
    fn gelu_at_zero_is_zero() {
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn gelu_approaches_identity_for_large_input() {
        assert!((gelu(10.0) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn gelu_at_one_matches_quadrature_oracle() {
        let expected = 1.0 * phi_quadrature(1.0);
        assert!(
            (gelu(1.0) - expected).abs() < 1e-10,
            "gelu(1) = {}",
            gelu(1.0)
        );
        // Known value of Phi(1).
        assert!((gelu(1.0) - 0.841344746).abs() < 1e-8);
    }

    #[test]
    fn gelu_prime_matches_finite_differences() {
        for &x in &[-3.0, -1.0, -0.3, 0.0, 0.5, 1.7, 4.0] {
            let eps = 1e-6;
            let fd = (gelu(x + eps) - gelu(x - eps)) / (2.0 * eps);
            assert!((gelu_prime(x) - fd).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn glorot_bound_respected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        use rand::SeedableRng;
        let w = glorot_uniform(&mut rng, 3, 5, 1000);
        let bound = (6.0 / 8.0_f64).sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
    }
}
