use super::{DiffError, GradSet, ParamSet};

/// Adaptive-moment optimizer state. Accumulator shapes mirror the parameter
/// blocks; the update is the standard bias-corrected rule.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        Self {
            first: params.blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
            second: params.blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One in-place update. Rejects non-finite gradients, naming the block.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradSet) -> Result<(), DiffError> {
        for (i, g) in grads.slots.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(DiffError::NonFiniteGradient(
                    params.blocks()[i].name.clone(),
                ));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.slots.iter().enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let p = &mut params.block_mut(crate::diffcore::ParamRef(i)).data;
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ParamSet;

    fn one_param(v: f64) -> (ParamSet, GradSet) {
        let mut ps = ParamSet::new();
        ps.add_block("p", 1, 1, vec![v]);
        let g = ps.zero_grads();
        (ps, g)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut ps, g) = one_param(0.7);
        let mut opt = OptimizerState::new(&ps, 1e-3);
        opt.step(&mut ps, &g).unwrap();
        assert_eq!(ps.blocks()[0].data[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_about_learning_rate() {
        // closed form: first update is lr * g / (|g| + eps)
        let (mut ps, mut g) = one_param(1.0);
        g.slots[0][0] = 1.0;
        let mut opt = OptimizerState::new(&ps, 1e-3);
        opt.step(&mut ps, &g).unwrap();
        let moved = 1.0 - ps.blocks()[0].data[0];
        assert!((moved - 1e-3).abs() < 1e-9, "moved {moved}");
    }

    #[test]
    fn step_counter_and_moments_track_repeated_steps() {
        let (mut ps, mut g) = one_param(0.0);
        g.slots[0][0] = 0.5;
        let mut opt = OptimizerState::new(&ps, 1e-3);
        opt.step(&mut ps, &g).unwrap();
        opt.step(&mut ps, &g).unwrap();
        assert_eq!(opt.step_count, 2);
        let expect_m = 0.9 * (0.1 * 0.5) + 0.1 * 0.5;
        assert!((opt.first[0][0] - expect_m).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_block() {
        let mut ps = ParamSet::new();
        ps.add_block("fine", 1, 1, vec![0.0]);
        ps.add_block("broken", 1, 1, vec![0.0]);
        let mut g = ps.zero_grads();
        g.slots[1][0] = f64::NAN;
        let mut opt = OptimizerState::new(&ps, 1e-3);
        let err = opt.step(&mut ps, &g).unwrap_err();
        assert_eq!(
            err.to_string(),
            "non-finite gradient in parameter block `broken`"
        );
    }
}
