//! Bit-exact communication-cost accounting for the six compared methods,
//! plus the clipping scalar quantizer used by the C-bit parametric-BP
//! baseline. Accounting is per-neighbor unicast: one counted message per
//! directed edge per round.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mpnn::{PayloadKind, RunTrace};
use crate::vq::index_bits;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("method {method} requires field `{field}`")]
    MissingField {
        method: &'static str,
        field: &'static str,
    },
}

/// Methods in the per-node communication cost table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMethod {
    Plbp,
    PlbpCBit,
    Mpnn,
    VqMpnn,
    SpAdmm,
    Nbp,
}

impl CostMethod {
    pub const ALL: [CostMethod; 6] = [
        CostMethod::Plbp,
        CostMethod::PlbpCBit,
        CostMethod::Mpnn,
        CostMethod::VqMpnn,
        CostMethod::SpAdmm,
        CostMethod::Nbp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CostMethod::Plbp => "PLBP",
            CostMethod::PlbpCBit => "PLBP-C-bit",
            CostMethod::Mpnn => "MPNN",
            CostMethod::VqMpnn => "VQ-MPNN",
            CostMethod::SpAdmm => "SP-ADMM",
            CostMethod::Nbp => "NBP",
        }
    }
}

/// Constants feeding the closed-form cost formulas. Optional fields are only
/// required by the methods that use them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCostSpec {
    /// Q: quantization bits per transmitted scalar.
    pub q: u64,
    /// H: header bits per message.
    pub h: u64,
    /// T: communication rounds for the method being priced.
    pub t: u64,
    /// N_i: neighbor count per node.
    pub neighbors: u64,
    /// J: linearization iterations (parametric BP).
    pub j: Option<u64>,
    /// C: scalar-quantizer bits (C-bit parametric BP).
    pub c: Option<u64>,
    /// N_p: particle count (nonparametric BP).
    pub n_p: Option<u64>,
    /// K: codebook size.
    pub k: Option<u64>,
    /// M: state dimension.
    pub m: Option<u64>,
}

fn need(field: Option<u64>, method: &'static str, name: &'static str) -> Result<u64, CostError> {
    field.ok_or(CostError::MissingField {
        method,
        field: name,
    })
}

/// Closed-form bits per node for `method` under `spec`.
pub fn comm_cost(method: CostMethod, spec: &CommCostSpec) -> Result<u64, CostError> {
    let CommCostSpec {
        q, h, t, neighbors, ..
    } = *spec;
    Ok(match method {
        CostMethod::Plbp => {
            let j = need(spec.j, "PLBP", "j")?;
            j * neighbors * (6 * q + h + 4 * q * t + h * t)
        }
        CostMethod::PlbpCBit => {
            let j = need(spec.j, "PLBP-C-bit", "j")?;
            let c = need(spec.c, "PLBP-C-bit", "c")?;
            j * neighbors * (6 * q + h + 4 * c * t + h * t)
        }
        CostMethod::Mpnn => {
            let m = need(spec.m, "MPNN", "m")?;
            (m * q + h) * neighbors * t
        }
        CostMethod::VqMpnn => {
            let k = need(spec.k, "VQ-MPNN", "k")?;
            (h + index_bits(k as usize) as u64) * neighbors * t
        }
        CostMethod::SpAdmm => (4 * q + h) * neighbors * t,
        CostMethod::Nbp => {
            let n_p = need(spec.n_p, "NBP", "n_p")?;
            (2 * n_p + h) * neighbors * t
        }
    })
}

/// Bits each node actually sent in a recorded run: one `H + payload` message
/// per transmission event. Payload is the index width in quantized mode and
/// `M * Q` in the unquantized baseline.
pub fn count_runtime_bits(trace: &RunTrace, q: u64, h: u64) -> Vec<u64> {
    let payload = match trace.payload {
        PayloadKind::CodewordIndex { codebook_size } => index_bits(codebook_size) as u64,
        PayloadKind::StateVector { state_dim } => state_dim as u64 * q,
    };
    let mut bits = vec![0u64; trace.n_nodes];
    for tr in &trace.transmissions {
        bits[tr.from] += h + payload;
    }
    bits
}

/// Clipping function `-b + max(v+b, 0) - max(v-b, 0)`: the identity on
/// `[-b, b]`, saturating outside.
pub fn clip(v: f64, b: f64) -> f64 {
    -b + (v + b).max(0.0) - (v - b).max(0.0)
}

/// Uniform scalar quantizer with clip bound `b` and `C` bits:
/// `step = 2b / 2^C`, reconstruction `step * ceil(v / step) - step / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarQuantizer {
    pub bound: f64,
    pub bits: u32,
}

impl ScalarQuantizer {
    pub fn new(bound: f64, bits: u32) -> Self {
        assert!(bound > 0.0 && bits >= 1);
        Self { bound, bits }
    }

    pub fn step(&self) -> f64 {
        2.0 * self.bound / (1u64 << self.bits) as f64
    }

    pub fn quantize(&self, v: f64) -> f64 {
        let clipped = clip(v, self.bound);
        let step = self.step();
        step * (clipped / step).ceil() - step / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Constants used throughout the cost-table comparisons: Q = 32, H = 32,
    /// ten neighbors, three rounds (400 for the ADMM baseline), J = 20,
    /// N_p = 1000, K = 2^10, M = 16.
    fn table_spec(t: u64) -> CommCostSpec {
        CommCostSpec {
            q: 32,
            h: 32,
            t,
            neighbors: 10,
            j: Some(20),
            c: Some(8),
            n_p: Some(1000),
            k: Some(1 << 10),
            m: Some(16),
        }
    }

    #[test]
    fn table_arithmetic_for_all_six_methods() {
        let s3 = table_spec(3);
        let s400 = table_spec(400);
        assert_eq!(comm_cost(CostMethod::VqMpnn, &s3).unwrap(), 1260);
        assert_eq!(comm_cost(CostMethod::Mpnn, &s3).unwrap(), 16320);
        assert_eq!(
            comm_cost(CostMethod::Plbp, &s3).unwrap(),
            20 * 10 * (192 + 32 + 384 + 96)
        );
        assert_eq!(
            comm_cost(CostMethod::PlbpCBit, &s3).unwrap(),
            20 * 10 * (192 + 32 + 4 * 8 * 3 + 96)
        );
        assert_eq!(
            comm_cost(CostMethod::SpAdmm, &s400).unwrap(),
            160 * 10 * 400
        );
        assert_eq!(comm_cost(CostMethod::Nbp, &s3).unwrap(), 2032 * 30);
    }

    #[test]
    fn missing_fields_are_typed_errors() {
        let mut s = table_spec(3);
        s.j = None;
        assert!(matches!(
            comm_cost(CostMethod::Plbp, &s),
            Err(CostError::MissingField { field: "j", .. })
        ));
        let mut s = table_spec(3);
        s.k = None;
        assert!(comm_cost(CostMethod::VqMpnn, &s).is_err());
    }

    #[test]
    fn vq_cost_ignores_m_q_and_particles() {
        let base = table_spec(3);
        let mut changed = base;
        changed.m = Some(1024);
        changed.q = 64;
        changed.n_p = Some(5);
        assert_eq!(
            comm_cost(CostMethod::VqMpnn, &base).unwrap(),
            comm_cost(CostMethod::VqMpnn, &changed).unwrap()
        );
    }

    #[test]
    fn small_codebook_index_width() {
        let mut s = table_spec(3);
        s.k = Some(5);
        // ceil(log2 5) = 3 bits
        assert_eq!(
            comm_cost(CostMethod::VqMpnn, &s).unwrap(),
            (32 + 3) * 10 * 3
        );
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(0.5, 1.0), 0.5);
        assert_eq!(clip(5.0, 1.0), 1.0);
        assert_eq!(clip(-5.0, 1.0), -1.0);
    }

    #[test]
    fn one_bit_quantizer_example() {
        // b = 1, C = 1 -> step 1; v = 0.2 -> ceil(0.2) - 0.5 = 0.5
        let q = ScalarQuantizer::new(1.0, 1);
        assert_eq!(q.step(), 1.0);
        assert_eq!(q.quantize(0.2), 0.5);
    }

    #[test]
    fn boundary_values_use_the_ceiling_convention() {
        let q = ScalarQuantizer::new(1.0, 2);
        let step = q.step();
        // v exactly at a level boundary: ceil(n) = n
        assert_eq!(q.quantize(step), step - step / 2.0);
        assert_eq!(q.quantize(0.0), -step / 2.0);
    }

    proptest! {
        #[test]
        fn clip_formula_equals_clamp(v in -1e4f64..1e4, b in 1e-3f64..1e3) {
            let expect = v.clamp(-b, b);
            prop_assert!((clip(v, b) - expect).abs() < 1e-12 * b.max(1.0));
        }

        #[test]
        fn quantizer_error_is_at_most_half_a_step(v in -1e3f64..1e3, bits in 1u32..12, b in 1e-2f64..100.0) {
            let q = ScalarQuantizer::new(b, bits);
            let err = (q.quantize(v) - clip(v, b)).abs();
            prop_assert!(err <= q.step() / 2.0 + 1e-12);
        }

        #[test]
        fn cost_is_monotone_in_every_parameter(
            q in 1u64..64, h in 1u64..64, t in 1u64..16, nei in 1u64..20,
            j in 1u64..16, c in 1u64..32, np in 1u64..256, k in 2u64..2048, m in 1u64..64,
            bump in 0usize..9,
        ) {
            let spec = CommCostSpec { q, h, t, neighbors: nei, j: Some(j), c: Some(c), n_p: Some(np), k: Some(k), m: Some(m) };
            let mut bigger = spec;
            match bump {
                0 => bigger.q += 1,
                1 => bigger.h += 1,
                2 => bigger.t += 1,
                3 => bigger.neighbors += 1,
                4 => bigger.j = Some(j + 1),
                5 => bigger.c = Some(c + 1),
                6 => bigger.n_p = Some(np + 1),
                7 => bigger.k = Some(k + 1),
                _ => bigger.m = Some(m + 1),
            }
            for method in CostMethod::ALL {
                let a = comm_cost(method, &spec).unwrap();
                let b = comm_cost(method, &bigger).unwrap();
                prop_assert!(b >= a, "{method:?} decreased from {a} to {b}");
            }
        }
    }

    #[test]
    fn runtime_bits_for_a_two_node_network() {
        use crate::mpnn::{PayloadKind, RunTrace, Transmission};
        let trace = RunTrace {
            n_nodes: 2,
            payload: PayloadKind::CodewordIndex { codebook_size: 4 },
            transmissions: vec![
                Transmission {
                    round: 1,
                    from: 0,
                    to: 1,
                },
                Transmission {
                    round: 1,
                    from: 1,
                    to: 0,
                },
            ],
        };
        // per node (8 + 2) * 1 * 1 = 10 bits
        assert_eq!(count_runtime_bits(&trace, 32, 8), vec![10, 10]);
    }
}
