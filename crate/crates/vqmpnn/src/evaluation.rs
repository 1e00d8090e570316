//! RMSE computation, Monte-Carlo evaluation, codebook-size and agent-count
//! sweeps, and a classical damped Gauss-Newton least-squares oracle used as
//! an independent sanity baseline.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::comms::count_runtime_bits;
use crate::diffcore::DiffError;
use crate::mpnn::{run_network, ModelParams, PassMode};
use crate::scenario::{Position, ScenarioError, ScenarioInstance, ScenarioParams};
use crate::training::{generate_dataset, train, Split, TrainConfig, TrainError, TrainExample};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation requires at least one run and one agent")]
    Empty,
    #[error("estimate/truth shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Mean over Monte-Carlo runs of the per-run root-mean-square agent position
/// error (mean of roots, not root of means).
pub fn rmse(estimates: &[Vec<Position>], truths: &[Vec<Position>]) -> Result<f64, EvalError> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(EvalError::Empty);
    }
    let mut acc = 0.0;
    for (est, truth) in estimates.iter().zip(truths) {
        if est.is_empty() || est.len() != truth.len() {
            return Err(EvalError::Shape(format!(
                "{} estimates vs {} truths in one run",
                est.len(),
                truth.len()
            )));
        }
        let sq: f64 = est
            .iter()
            .zip(truth)
            .map(|(e, t)| (e.x - t.x).powi(2) + (e.y - t.y).powi(2))
            .sum();
        acc += (sq / est.len() as f64).sqrt();
    }
    Ok(acc / estimates.len() as f64)
}

/// Position estimators under evaluation.
pub enum Estimator<'a> {
    /// The trained network, quantized or not.
    Net {
        model: &'a ModelParams,
        mode: PassMode,
    },
    /// Reports the prior mean, ignoring all measurements.
    PriorOnly,
    /// Joint damped Gauss-Newton over agent positions.
    LeastSquares { iterations: usize },
}

impl Estimator<'_> {
    pub fn method_name(&self) -> &'static str {
        match self {
            Estimator::Net {
                mode: PassMode::Unquantized,
                ..
            } => "MPNN",
            Estimator::Net { .. } => "VQ-MPNN",
            Estimator::PriorOnly => "prior-only",
            Estimator::LeastSquares { .. } => "least-squares",
        }
    }

    pub fn codebook_size(&self) -> Option<usize> {
        match self {
            Estimator::Net {
                model,
                mode: PassMode::Vq,
            } => Some(model.config.codebook_size),
            _ => None,
        }
    }
}

/// Evaluation summary for one method over a Monte-Carlo scenario stream.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub method: String,
    pub codebook_size: Option<usize>,
    /// Mean over runs and nodes of actually-counted bits (0 for methods that
    /// do not communicate).
    pub bits_per_node: f64,
    pub rmse: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub per_run_rmse: Vec<f64>,
}

/// Run `estimator` on every example and aggregate the report. Runs are
/// independent; results are gathered by run index so the report does not
/// depend on scheduling.
pub fn evaluate(
    estimator: &Estimator,
    examples: &[TrainExample],
    q_bits: u64,
    header_bits: u64,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::Empty);
    }
    let runs: Vec<Result<(Vec<Position>, f64), EvalError>> = examples
        .par_iter()
        .map(|ex| {
            let (estimates, bits) = match estimator {
                Estimator::Net { model, mode } => {
                    let run = run_network(&ex.scenario, &ex.init_positions, model, *mode, None)?;
                    let per_node = count_runtime_bits(&run.trace, q_bits, header_bits);
                    let mean_bits = per_node.iter().sum::<u64>() as f64 / per_node.len() as f64;
                    (run.estimates, mean_bits)
                }
                Estimator::PriorOnly => (ex.scenario.prior_means.clone(), 0.0),
                Estimator::LeastSquares { iterations } => {
                    (least_squares_oracle(&ex.scenario, *iterations), 0.0)
                }
            };
            Ok((estimates, bits))
        })
        .collect();

    let mut per_run_rmse = Vec::with_capacity(examples.len());
    let mut bits_acc = 0.0;
    for (ex, run) in examples.iter().zip(runs) {
        let (estimates, bits) = run?;
        let truths: Vec<Position> = ex
            .scenario
            .agents()
            .map(|i| ex.scenario.positions[i])
            .collect();
        per_run_rmse.push(rmse(&[estimates], &[truths])?);
        bits_acc += bits;
    }
    let n_mc = examples.len();
    Ok(EvalReport {
        method: estimator.method_name().to_string(),
        codebook_size: estimator.codebook_size(),
        bits_per_node: bits_acc / n_mc as f64,
        rmse: per_run_rmse.iter().sum::<f64>() / n_mc as f64,
        n_mc,
        seed,
        per_run_rmse,
    })
}

/// Joint range-only least squares over all agent positions with anchors
/// fixed, initialized at the prior means. Levenberg-style additive damping:
/// start 1e-3, x10 on rejected steps, /10 on accepted; every accepted step
/// strictly decreases the objective.
pub fn least_squares_oracle(scenario: &ScenarioInstance, iterations: usize) -> Vec<Position> {
    let agents: Vec<usize> = scenario.agents().collect();
    let slot = |node: usize| agents.iter().position(|&a| a == node);
    let n_u = 2 * agents.len();

    // residual list: every directed measurement touching at least one agent
    let edges: Vec<(usize, usize, f64)> = scenario
        .measurements
        .iter()
        .filter(|(&(from, to), _)| slot(from).is_some() || slot(to).is_some())
        .map(|(&(from, to), &z)| (from, to, z))
        .collect();

    let mut u = DVector::zeros(n_u);
    for (s, &a) in agents.iter().enumerate() {
        let ord = scenario.agent_ordinal(a).unwrap();
        u[2 * s] = scenario.prior_means[ord].x;
        u[2 * s + 1] = scenario.prior_means[ord].y;
    }

    let pos_of = |u: &DVector<f64>, node: usize| -> (f64, f64) {
        match slot(node) {
            Some(s) => (u[2 * s], u[2 * s + 1]),
            None => (scenario.positions[node].x, scenario.positions[node].y),
        }
    };
    let objective = |u: &DVector<f64>| -> f64 {
        edges
            .iter()
            .map(|&(from, to, z)| {
                let (fx, fy) = pos_of(u, from);
                let (tx, ty) = pos_of(u, to);
                let d = ((fx - tx).powi(2) + (fy - ty).powi(2)).sqrt();
                (z - d).powi(2)
            })
            .sum()
    };

    let mut lambda = 1e-3;
    let mut f_cur = objective(&u);
    for _ in 0..iterations {
        // assemble J^T J and J^T r without materializing J
        let mut jtj = DMatrix::zeros(n_u, n_u);
        let mut jtr = DVector::zeros(n_u);
        for &(from, to, z) in &edges {
            let (fx, fy) = pos_of(&u, from);
            let (tx, ty) = pos_of(&u, to);
            let d = ((fx - tx).powi(2) + (fy - ty).powi(2)).sqrt().max(1e-12);
            let r = z - d;
            // dr/d(x_to) = -(x_to - x_from)/d, dr/d(x_from) = -(x_from - x_to)/d
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(4);
            if let Some(s) = slot(to) {
                row.push((2 * s, -(tx - fx) / d));
                row.push((2 * s + 1, -(ty - fy) / d));
            }
            if let Some(s) = slot(from) {
                row.push((2 * s, -(fx - tx) / d));
                row.push((2 * s + 1, -(fy - ty) / d));
            }
            for &(i, ji) in &row {
                jtr[i] += ji * r;
                for &(j, jj) in &row {
                    jtj[(i, j)] += ji * jj;
                }
            }
        }

        let mut accepted = false;
        for _ in 0..25 {
            let mut damped = jtj.clone();
            for i in 0..n_u {
                damped[(i, i)] += lambda;
            }
            let step = match Cholesky::new(damped) {
                Some(ch) => ch.solve(&(-&jtr)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate = &u + &step;
            let f_new = objective(&candidate);
            if f_new.is_finite() && f_new < f_cur {
                u = candidate;
                f_cur = f_new;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }

    agents
        .iter()
        .enumerate()
        .map(|(s, _)| Position::new(u[2 * s], u[2 * s + 1]))
        .collect()
}

/// One row of the codebook-size sweep.
#[derive(Debug, Clone, Copy)]
pub struct CodebookSweepRow {
    pub codebook_size: usize,
    pub bits_per_node: u64,
    pub rmse: f64,
}

/// One row of the agent-count generalization sweep.
#[derive(Debug, Clone, Copy)]
pub struct AgentSweepRow {
    pub num_agents: usize,
    pub rmse: f64,
}

/// Everything a sweep needs to train and score models.
pub struct SweepSetup<'a> {
    pub scenario: ScenarioParams,
    pub train: TrainConfig,
    pub train_samples: usize,
    pub val_samples: usize,
    pub n_mc: usize,
    pub seeds: &'a [u64],
    pub q_bits: u64,
    pub header_bits: u64,
    /// Nominal neighbor count used for the closed-form bits column.
    pub nominal_neighbors: u64,
}

/// Train one model per codebook size and seed, evaluate each, and emit
/// seed-mean RMSE rows sorted by codebook size.
pub fn sweep_codebook(
    setup: &SweepSetup,
    sizes: &[usize],
) -> Result<Vec<CodebookSweepRow>, EvalError> {
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    let mut rows = Vec::with_capacity(sizes.len());
    for &k in &sizes {
        let mut rmse_acc = 0.0;
        for &seed in setup.seeds {
            let mut cfg = setup.train;
            cfg.model.codebook_size = k;
            cfg.mode = PassMode::Vq;
            cfg.seed = seed;
            let train_set =
                generate_dataset(&setup.scenario, setup.train_samples, Split::Train, seed)?;
            let val_set = generate_dataset(&setup.scenario, setup.val_samples, Split::Val, seed)?;
            let outcome = train(&train_set, &val_set, &cfg)?;
            let test_set = generate_dataset(&setup.scenario, setup.n_mc, Split::Test, seed)?;
            let report = evaluate(
                &Estimator::Net {
                    model: &outcome.model,
                    mode: PassMode::Vq,
                },
                &test_set,
                setup.q_bits,
                setup.header_bits,
                seed,
            )?;
            rmse_acc += report.rmse;
        }
        let spec = crate::comms::CommCostSpec {
            q: setup.q_bits,
            h: setup.header_bits,
            t: setup.train.model.rounds as u64,
            neighbors: setup.nominal_neighbors,
            j: None,
            c: None,
            n_p: None,
            k: Some(k as u64),
            m: None,
        };
        let bits = crate::comms::comm_cost(crate::comms::CostMethod::VqMpnn, &spec)
            .expect("k is always present here");
        rows.push(CodebookSweepRow {
            codebook_size: k,
            bits_per_node: bits,
            rmse: rmse_acc / setup.seeds.len() as f64,
        });
    }
    Ok(rows)
}

/// Evaluate one fixed trained model on scenarios with different agent
/// counts; no retraining. Rows are sorted by agent count.
#[allow(clippy::too_many_arguments)]
pub fn sweep_agents(
    model: &ModelParams,
    mode: PassMode,
    scenario: &ScenarioParams,
    counts: &[usize],
    n_mc: usize,
    eval_seed: u64,
    q_bits: u64,
    header_bits: u64,
) -> Result<Vec<AgentSweepRow>, EvalError> {
    let mut counts = counts.to_vec();
    counts.sort_unstable();
    let mut rows = Vec::with_capacity(counts.len());
    for &num_agents in &counts {
        let params = ScenarioParams {
            num_agents,
            ..*scenario
        };
        let test_set = generate_dataset(&params, n_mc, Split::Test, eval_seed)?;
        let report = evaluate(
            &Estimator::Net { model, mode },
            &test_set,
            q_bits,
            header_bits,
            eval_seed,
        )?;
        rows.push(AgentSweepRow {
            num_agents,
            rmse: report.rmse,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{synthetic_scenario, NoiseModel};

    fn p(x: f64, y: f64) -> Position {
        Position::new(x, y)
    }

    #[test]
    fn perfect_estimates_have_zero_rmse() {
        let truths = vec![vec![p(1.0, 2.0), p(3.0, 4.0)]];
        assert_eq!(rmse(&truths, &truths).unwrap(), 0.0);
    }

    #[test]
    fn single_run_single_agent_345() {
        let est = vec![vec![p(3.0, 4.0)]];
        let truth = vec![vec![p(0.0, 0.0)]];
        assert_eq!(rmse(&est, &truth).unwrap(), 5.0);
    }

    #[test]
    fn mean_of_roots_not_root_of_means() {
        // run 1 rmse = 1, run 2 rmse = 3 -> 2
        let est = vec![vec![p(1.0, 0.0)], vec![p(3.0, 0.0)]];
        let truth = vec![vec![p(0.0, 0.0)], vec![p(0.0, 0.0)]];
        assert_eq!(rmse(&est, &truth).unwrap(), 2.0);
    }

    #[test]
    fn hand_expanded_two_run_case() {
        let est = vec![
            vec![p(1.0, 0.0), p(0.0, 2.0)],
            vec![p(2.0, 2.0), p(1.0, 1.0)],
        ];
        let truth = vec![
            vec![p(0.0, 0.0), p(0.0, 0.0)],
            vec![p(0.0, 0.0), p(0.0, 0.0)],
        ];
        let expected = ((1.0f64 + 4.0) / 2.0).sqrt() / 2.0 + ((8.0f64 + 2.0) / 2.0).sqrt() / 2.0;
        assert!((rmse(&est, &truth).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn empty_input_is_a_typed_error() {
        assert!(matches!(rmse(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn shape_mismatch_is_a_typed_error() {
        let est = vec![vec![p(0.0, 0.0)]];
        let truth = vec![vec![p(0.0, 0.0), p(1.0, 1.0)]];
        assert!(matches!(rmse(&est, &truth), Err(EvalError::Shape(_))));
    }

    fn zero_noise_triangle() -> ScenarioInstance {
        synthetic_scenario(
            &[p(0.0, 0.0), p(40.0, 0.0), p(0.0, 40.0), p(40.0, 40.0)],
            &[p(10.0, 12.0), p(25.0, 20.0), p(18.0, 30.0)],
            60.0,
            &NoiseModel::Awgn { sigma: 0.0 },
            10.0,
            77,
        )
        .unwrap()
    }

    #[test]
    fn oracle_recovers_zero_noise_positions() {
        let s = zero_noise_triangle();
        let est = least_squares_oracle(&s, 100);
        for (e, &a) in est.iter().zip(s.agents().collect::<Vec<_>>().iter()) {
            let t = s.positions[a];
            assert!(
                e.distance_to(&t) < 1e-6,
                "agent {a}: {e:?} vs {t:?} ({})",
                e.distance_to(&t)
            );
        }
    }

    #[test]
    fn oracle_never_increases_the_objective() {
        let s = synthetic_scenario(
            &[p(0.0, 0.0), p(40.0, 0.0), p(0.0, 40.0)],
            &[p(12.0, 9.0), p(28.0, 22.0)],
            60.0,
            &NoiseModel::Awgn { sigma: 2.0 },
            10.0,
            78,
        )
        .unwrap();
        let objective = |positions: &[Position]| -> f64 {
            let agents: Vec<usize> = s.agents().collect();
            s.measurements
                .iter()
                .map(|(&(from, to), &z)| {
                    let get = |n: usize| {
                        agents
                            .iter()
                            .position(|&a| a == n)
                            .map(|i| positions[i])
                            .unwrap_or(s.positions[n])
                    };
                    let d = get(from).distance_to(&get(to));
                    (z - d).powi(2)
                })
                .sum()
        };
        let init: Vec<Position> = s.prior_means.clone();
        let out = least_squares_oracle(&s, 100);
        assert!(objective(&out) <= objective(&init));
    }

    #[test]
    fn trilateration_with_three_anchors_is_unique() {
        let s = synthetic_scenario(
            &[p(0.0, 0.0), p(30.0, 0.0), p(0.0, 30.0)],
            &[p(11.0, 7.0)],
            60.0,
            &NoiseModel::Awgn { sigma: 0.0 },
            10.0,
            79,
        )
        .unwrap();
        let est = least_squares_oracle(&s, 100);
        assert!(est[0].distance_to(&p(11.0, 7.0)) < 1e-6);
    }

    #[test]
    fn oracle_initialized_at_truth_stays_at_truth() {
        // zero noise and truth initialization: the objective is already 0
        let mut s = zero_noise_triangle();
        // replace prior means by the truth
        let agent_truth: Vec<Position> = s.agents().map(|a| s.positions[a]).collect();
        s.prior_means = agent_truth.clone();
        let est = least_squares_oracle(&s, 10);
        for (e, t) in est.iter().zip(&agent_truth) {
            assert!(e.distance_to(t) < 1e-12);
        }
    }
}
