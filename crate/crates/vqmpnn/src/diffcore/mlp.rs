use rand::Rng;

use super::{glorot_uniform, DiffError, ParamRef, ParamSet, Tape, ValueId};

/// One dense layer: references into the parameter set plus the activation
/// flag (GELU everywhere except layers the layer table marks plain linear).
#[derive(Debug, Clone, Copy)]
pub struct DenseLayer {
    pub weight: ParamRef,
    pub bias: ParamRef,
    pub gelu: bool,
}

/// An ordered stack of dense layers with consistent chained dimensions.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Register a new MLP in `params` under `name`, with layer sizes
    /// `dims = [in, hidden.., out]`. Weights are Glorot-uniform, biases zero.
    /// When `final_linear` is set the last layer skips the GELU.
    pub fn register(
        params: &mut ParamSet,
        name: &str,
        dims: &[usize],
        final_linear: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = glorot_uniform(rng, fan_in, fan_out, fan_in * fan_out);
            let weight = params.add_block(format!("{name}.layer{i}.weight"), fan_out, fan_in, w);
            let bias = params.add_block(
                format!("{name}.layer{i}.bias"),
                fan_out,
                1,
                vec![0.0; fan_out],
            );
            let last = i == dims.len() - 2;
            layers.push(DenseLayer {
                weight,
                bias,
                gelu: !(last && final_linear),
            });
        }
        Self { layers }
    }

    pub fn in_dim(&self, params: &ParamSet) -> usize {
        params.block(self.layers[0].weight).cols
    }

    pub fn out_dim(&self, params: &ParamSet) -> usize {
        params.block(self.layers.last().unwrap().weight).rows
    }

    /// Record the forward pass of the whole stack on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        input: ValueId,
    ) -> Result<ValueId, DiffError> {
        let mut h = input;
        for layer in &self.layers {
            h = tape.affine(params, layer.weight, layer.bias, h)?;
            if layer.gelu {
                h = tape.gelu(h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{gelu, ParamSet, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_zero_bias_give_zero_output() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::register(&mut ps, "f", &[3, 4, 2], false, &mut rng);
        for layer in &mlp.layers {
            ps.block_mut(layer.weight)
                .data
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let x = tape.input(&[1.0, -2.0, 3.0]);
        let y = mlp.forward(&mut tape, &ps, x).unwrap();
        assert_eq!(tape.value(y), &[0.0, 0.0]);
    }

    #[test]
    fn single_identity_activation_layer_is_affine() {
        // 1x1 layer, w = 2, b = 1, input 3 -> 7
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::register(&mut ps, "f", &[1, 1], true, &mut rng);
        ps.block_mut(mlp.layers[0].weight).data[0] = 2.0;
        ps.block_mut(mlp.layers[0].bias).data[0] = 1.0;
        let mut tape = Tape::new();
        let x = tape.input(&[3.0]);
        let y = mlp.forward(&mut tape, &ps, x).unwrap();
        assert_eq!(tape.value(y), &[7.0]);
    }

    // Straight-line re-evaluation with plain loops, independent of the tape.
    fn reference_forward(ps: &ParamSet, mlp: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut h = input.to_vec();
        for layer in &mlp.layers {
            let w = ps.block(layer.weight);
            let b = ps.block(layer.bias);
            let mut out = vec![0.0; w.rows];
            for (o, ov) in out.iter_mut().enumerate() {
                let mut acc = b.data[o];
                for (i, x) in h.iter().enumerate() {
                    acc += w.data[o * w.cols + i] * x;
                }
                *ov = if layer.gelu { gelu(acc) } else { acc };
            }
            h = out;
        }
        h
    }

    #[test]
    fn random_two_layer_net_matches_reference_evaluation() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mlp = Mlp::register(&mut ps, "f", &[5, 7, 3], false, &mut rng);
        let input = [0.3, -1.1, 2.4, 0.0, -0.5];
        let mut tape = Tape::new();
        let x = tape.input(&input);
        let y = mlp.forward(&mut tape, &ps, x).unwrap();
        assert_eq!(
            tape.value(y),
            reference_forward(&ps, &mlp, &input).as_slice()
        );
    }

    #[test]
    fn dimension_mismatch_is_a_typed_error() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::register(&mut ps, "f", &[3, 2], false, &mut rng);
        let mut tape = Tape::new();
        let x = tape.input(&[1.0, 2.0]);
        assert!(matches!(
            mlp.forward(&mut tape, &ps, x),
            Err(crate::diffcore::DiffError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forward_is_pure_and_bitwise_repeatable() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::register(&mut ps, "f", &[4, 8, 8, 2], false, &mut rng);
        let input = [0.1, 0.2, 0.3, 0.4];
        let run = |ps: &ParamSet| {
            let mut tape = Tape::new();
            let x = tape.input(&input);
            let y = mlp.forward(&mut tape, ps, x).unwrap();
            tape.value(y).to_vec()
        };
        assert_eq!(run(&ps), run(&ps));
    }
}
