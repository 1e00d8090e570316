//! Dataset generation, composite loss assembly, the training loop with
//! validation-based early stopping, and binary checkpoints.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use thiserror::Error;

use crate::diffcore::{DiffError, GradSet, OptimizerState, ValueId};
use crate::mpnn::{run_network, ModelConfig, ModelParams, NetworkRun, PassMode};
use crate::rng;
use crate::scenario::{
    draw_init_positions, Position, ScenarioError, ScenarioInstance, ScenarioParams,
};

/// Improvements smaller than this do not reset early-stopping patience.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at scenario index {scenario}")]
    NonFiniteLoss { scenario: usize },
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Epoch rows recorded before the abort.
        log: Vec<EpochRow>,
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint block `{0}` does not exist in this model")]
    UnknownBlock(String),
    #[error("shape mismatch for block `{block}`: checkpoint {found_rows}x{found_cols}, model {rows}x{cols}")]
    ShapeMismatch {
        block: String,
        found_rows: usize,
        found_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
}

/// One training/validation/test example: a scenario plus the initial
/// position draw, frozen at dataset creation so epochs stay comparable.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub scenario: ScenarioInstance,
    pub init_positions: Vec<Position>,
}

/// Dataset split tags; each split derives its scenarios from a disjoint
/// seed stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn tag(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Generate `count` examples for `split`.
pub fn generate_dataset(
    params: &ScenarioParams,
    count: usize,
    split: Split,
    master_seed: u64,
) -> Result<Vec<TrainExample>, ScenarioError> {
    (0..count)
        .map(|i| {
            let mut seed_rng =
                rng::stream_indexed(master_seed, &format!("scenario-{}", split.tag()), i as u64);
            let scenario = params.generate(seed_rng.next_u64())?;
            let mut init_rng =
                rng::stream_indexed(master_seed, &format!("init-{}", split.tag()), i as u64);
            let init_positions = draw_init_positions(&scenario, &mut init_rng);
            Ok(TrainExample {
                scenario,
                init_positions,
            })
        })
        .collect()
}

/// Composite loss components of a batch. `total` is exactly
/// `mse + vq_scaled`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub mse: f64,
    pub vq_scaled: f64,
    pub total: f64,
}

/// Training knobs plus the model dimensions. Defaults carry the standard
/// setup: alpha 0.1, beta 0.25, patience 30, batch 32, learning rate 1e-3.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mode: PassMode,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            patience: 30,
            alpha: 0.1,
            beta: 0.25,
            batch_size: 32,
            learning_rate: 1e-3,
            mode: PassMode::Vq,
            model: ModelConfig::new(16, 12, 1 << 10, 3),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.patience < 1 {
            return Err(TrainError::InvalidConfig(
                "patience must be at least 1".into(),
            ));
        }
        if self.alpha <= 0.0
            || self.beta <= 0.0
            || !self.alpha.is_finite()
            || !self.beta.is_finite()
        {
            return Err(TrainError::InvalidConfig(
                "alpha and beta must be positive".into(),
            ));
        }
        if self.batch_size < 1 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        if self.epochs < 1 {
            return Err(TrainError::InvalidConfig(
                "epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Forward pass of one example with the composite loss assembled at the
/// tape tip: `total = mse + alpha * (sum of VQ terms over encode events)`.
pub struct ScenarioLoss {
    pub run: NetworkRun,
    pub tip: ValueId,
    pub breakdown: LossBreakdown,
}

pub fn scenario_loss(
    example: &TrainExample,
    model: &ModelParams,
    mode: PassMode,
    alpha: f64,
    beta: f64,
) -> Result<ScenarioLoss, DiffError> {
    let vq_beta = mode.quantizes().then_some(beta);
    let mut run = run_network(
        &example.scenario,
        &example.init_positions,
        model,
        mode,
        vq_beta,
    )?;
    let tape = &mut run.tape;

    let mut mse_terms = Vec::with_capacity(example.scenario.n_agents());
    for (slot, agent) in example.scenario.agents().enumerate() {
        let truth = example.scenario.positions[agent];
        let t = tape.input(&[truth.x, truth.y]);
        let term = tape.sq_dist(run.estimate_ids[slot], t)?;
        mse_terms.push((1.0, term));
    }
    let mse_id = tape.weighted_sum(&mse_terms);

    let (tip, mse, vq_scaled) = if run.vq_terms.is_empty() {
        let tip = tape.weighted_sum(&[(1.0, mse_id)]);
        (tip, tape.scalar(mse_id), 0.0)
    } else {
        let vq_parts: Vec<(f64, ValueId)> = run
            .vq_terms
            .iter()
            .flat_map(|t| {
                [
                    (1.0, t.reconstruction),
                    (1.0, t.codebook_term),
                    (1.0, t.commitment_term),
                ]
            })
            .collect();
        let vq_id = tape.weighted_sum(&vq_parts);
        let tip = tape.weighted_sum(&[(1.0, mse_id), (alpha, vq_id)]);
        (tip, tape.scalar(mse_id), alpha * tape.scalar(vq_id))
    };
    let total = mse + vq_scaled;
    Ok(ScenarioLoss {
        breakdown: LossBreakdown {
            mse,
            vq_scaled,
            total,
        },
        tip,
        run,
    })
}

/// The composite loss of one example as a scalar function of the parameters,
/// suitable for finite-difference verification. The quantization events and
/// every stop-gradient/straight-through site are frozen at the state recorded
/// from the construction-time forward pass, which is the surrogate function
/// the analytic gradient is defined against.
pub struct CompositeLossFn<'a> {
    example: &'a TrainExample,
    template: &'a ModelParams,
    mode: PassMode,
    alpha: f64,
    beta: f64,
    base: crate::diffcore::Tape,
    first_use: Vec<Option<usize>>,
}

impl<'a> CompositeLossFn<'a> {
    pub fn new(
        example: &'a TrainExample,
        template: &'a ModelParams,
        mode: PassMode,
        alpha: f64,
        beta: f64,
    ) -> Result<Self, DiffError> {
        let loss = scenario_loss(example, template, mode, alpha, beta)?;
        let first_use = loss.run.tape.first_param_use(template.set.n_blocks());
        Ok(Self {
            example,
            template,
            mode,
            alpha,
            beta,
            base: loss.run.tape,
            first_use,
        })
    }

    pub fn base_value(&self) -> f64 {
        self.base
            .replay(&self.template.set)
            .expect("base tape replays against its own parameters")
    }
}

impl crate::diffcore::ParamScalarFn for CompositeLossFn<'_> {
    fn value(&self, params: &crate::diffcore::ParamSet) -> f64 {
        self.base
            .replay(params)
            .expect("replay shares the recorded block layout")
    }

    fn gradient(&self, params: &crate::diffcore::ParamSet) -> GradSet {
        let mut model = self.template.clone();
        model.set = params.clone();
        let loss = scenario_loss(self.example, &model, self.mode, self.alpha, self.beta)
            .expect("forward pass succeeded at construction");
        loss.run.tape.backward(params).expect("closed tape")
    }

    fn value_after_block_change(&self, params: &crate::diffcore::ParamSet, block: usize) -> f64 {
        match self.first_use[block] {
            Some(start) => self
                .base
                .replay_from(params, start)
                .expect("replay shares the recorded block layout"),
            // untouched block: the recorded value stands
            None => self.base_value(),
        }
    }
}

/// Forward-only composite loss summed over a batch.
pub fn total_loss(
    batch: &[TrainExample],
    model: &ModelParams,
    cfg: &TrainConfig,
) -> Result<LossBreakdown, TrainError> {
    let parts: Vec<Result<LossBreakdown, DiffError>> = batch
        .par_iter()
        .map(|ex| scenario_loss(ex, model, cfg.mode, cfg.alpha, cfg.beta).map(|l| l.breakdown))
        .collect();
    let mut mse = 0.0;
    let mut vq = 0.0;
    for (i, p) in parts.into_iter().enumerate() {
        let b = p?;
        if !b.total.is_finite() {
            return Err(TrainError::NonFiniteLoss { scenario: i });
        }
        mse += b.mse;
        vq += b.vq_scaled;
    }
    Ok(LossBreakdown {
        mse,
        vq_scaled: vq,
        total: mse + vq,
    })
}

/// Loss, summed gradients, and codeword usage of one batch. Per-scenario
/// gradients come from independent tapes and are reduced in batch order, so
/// the result matches sequential accumulation bit for bit.
type ScenarioGrads = (LossBreakdown, GradSet, Vec<usize>);

fn batch_grads(
    batch: &[(usize, &TrainExample)],
    model: &ModelParams,
    cfg: &TrainConfig,
) -> Result<ScenarioGrads, TrainError> {
    let parts: Vec<(usize, Result<ScenarioGrads, DiffError>)> = batch
        .par_iter()
        .map(|&(idx, ex)| {
            let out = scenario_loss(ex, model, cfg.mode, cfg.alpha, cfg.beta).and_then(|l| {
                let grads = l.run.tape.backward(&model.set)?;
                Ok((l.breakdown, grads, l.run.encode_indices))
            });
            (idx, out)
        })
        .collect();
    let mut sum = model.set.zero_grads();
    let mut mse = 0.0;
    let mut vq = 0.0;
    let mut used = Vec::new();
    for (idx, part) in parts {
        let (b, g, indices) = part?;
        if !b.total.is_finite() {
            return Err(TrainError::NonFiniteLoss { scenario: idx });
        }
        mse += b.mse;
        vq += b.vq_scaled;
        sum.add_assign(&g);
        used.extend(indices);
    }
    Ok((
        LossBreakdown {
            mse,
            vq_scaled: vq,
            total: mse + vq,
        },
        sum,
        used,
    ))
}

/// One row of the training log CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_total: f64,
    pub train_mse: f64,
    pub train_vq: f64,
    pub val_total: f64,
    pub codebook_utilization: f64,
    pub wall_seconds: f64,
}

/// Result of a training run: the parameters of the best-validation epoch
/// plus the full per-epoch log.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub mode: PassMode,
    pub log: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Train a fresh model under `cfg`.
pub fn train(
    train_set: &[TrainExample],
    val_set: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let model = ModelParams::init(cfg.model, cfg.seed);
    train_from(model, 0, train_set, val_set, cfg)
}

/// Continue training `model` from `start_epoch` (epoch numbering in the log
/// carries on from there).
pub fn train_from(
    mut model: ModelParams,
    start_epoch: usize,
    train_set: &[TrainExample],
    val_set: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    assert!(
        !train_set.is_empty() && !val_set.is_empty(),
        "datasets must be generated first"
    );
    let started = Instant::now();
    let mut opt = OptimizerState::new(&model.set, cfg.learning_rate);
    let k = model.config.codebook_size;

    let mut log: Vec<EpochRow> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = start_epoch;
    let mut best_model = model.clone();
    let mut stale = 0usize;

    for epoch in (start_epoch + 1)..=(start_epoch + cfg.epochs) {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::stream_indexed(cfg.seed, "shuffle", epoch as u64));

        let mut epoch_mse = 0.0;
        let mut epoch_vq = 0.0;
        let mut used: HashSet<usize> = HashSet::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(usize, &TrainExample)> =
                chunk.iter().map(|&i| (i, &train_set[i])).collect();
            let (breakdown, grads, indices) = match batch_grads(&batch, &model, cfg) {
                Ok(v) => v,
                Err(e) => {
                    return Err(TrainError::Diverged {
                        epoch,
                        reason: e.to_string(),
                        log,
                    })
                }
            };
            epoch_mse += breakdown.mse;
            epoch_vq += breakdown.vq_scaled;
            used.extend(indices);
            if let Err(e) = opt.step(&mut model.set, &grads) {
                return Err(TrainError::Diverged {
                    epoch,
                    reason: e.to_string(),
                    log,
                });
            }
        }

        let val = match total_loss(val_set, &model, cfg) {
            Ok(v) => v,
            Err(e) => {
                return Err(TrainError::Diverged {
                    epoch,
                    reason: e.to_string(),
                    log,
                })
            }
        };

        let n_train = train_set.len() as f64;
        let train_mse = epoch_mse / n_train;
        let train_vq = epoch_vq / n_train;
        log.push(EpochRow {
            epoch,
            train_total: train_mse + train_vq,
            train_mse,
            train_vq,
            val_total: val.total / val_set.len() as f64,
            codebook_utilization: if cfg.mode.quantizes() {
                used.len() as f64 / k as f64
            } else {
                0.0
            },
            wall_seconds: started.elapsed().as_secs_f64(),
        });

        let val_mean = log.last().unwrap().val_total;
        if val_mean < best_val - MIN_IMPROVEMENT {
            best_val = val_mean;
            best_epoch = epoch;
            best_model = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best_model,
        mode: cfg.mode,
        log,
        best_epoch,
        best_val,
    })
}

/// Write the training log in the fixed CSV schema.
pub fn write_log_csv(log: &[EpochRow], path: &Path) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "epoch,train_total,train_mse,train_vq,val_total,codebook_utilization,wall_seconds"
    )?;
    for r in log {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.train_total,
            r.train_mse,
            r.train_vq,
            r.val_total,
            r.codebook_utilization,
            r.wall_seconds
        )?;
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"VQMPNNCP";
const CHECKPOINT_VERSION: u32 = 1;

/// A loaded checkpoint: parameters plus the mode and epoch it was saved at.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub mode: PassMode,
    pub epoch: usize,
}

fn mode_byte(mode: PassMode) -> u8 {
    match mode {
        PassMode::Vq => 0,
        PassMode::Unquantized => 1,
        PassMode::IdentityCodec => 2,
    }
}

fn byte_mode(b: u8) -> Result<PassMode, CheckpointError> {
    match b {
        0 => Ok(PassMode::Vq),
        1 => Ok(PassMode::Unquantized),
        2 => Ok(PassMode::IdentityCodec),
        other => Err(CheckpointError::Corrupt(format!(
            "unknown mode byte {other}"
        ))),
    }
}

/// Save every parameter block (keyed by name, with shape metadata) plus the
/// model dimensions; the numeric payload round-trips bit-exactly.
pub fn save_checkpoint(
    model: &ModelParams,
    mode: PassMode,
    epoch: usize,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(mode_byte(mode));
    buf.extend_from_slice(&(epoch as u64).to_le_bytes());
    let c = &model.config;
    for dim in [c.state_dim, c.latent_dim, c.codebook_size, c.rounds] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    buf.extend_from_slice(&c.feature_scale.to_le_bytes());
    buf.extend_from_slice(&(model.set.n_blocks() as u32).to_le_bytes());
    for b in model.set.blocks() {
        buf.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(b.name.as_bytes());
        buf.extend_from_slice(&(b.rows as u64).to_le_bytes());
        buf.extend_from_slice(&(b.cols as u64).to_le_bytes());
        for v in &b.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N], CheckpointError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let file = std::fs::File::open(path)?;
    let mut r = std::io::BufReader::new(file);
    let magic: [u8; 8] = read_exact(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mode = byte_mode(read_exact::<1>(&mut r)?[0])?;
    let epoch = u64::from_le_bytes(read_exact(&mut r)?) as usize;
    let state_dim = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let latent_dim = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let codebook_size = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let rounds = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let feature_scale = f64::from_le_bytes(read_exact(&mut r)?);

    let mut config = ModelConfig::new(state_dim, latent_dim, codebook_size, rounds);
    config.feature_scale = feature_scale;
    let mut model = ModelParams::init(config, 0);

    let n_blocks = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    if n_blocks != model.set.n_blocks() {
        return Err(CheckpointError::Corrupt(format!(
            "expected {} blocks, checkpoint has {n_blocks}",
            model.set.n_blocks()
        )));
    }
    for _ in 0..n_blocks {
        let name_len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Corrupt("unreasonable block name".into()));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Corrupt("block name is not utf8".into()))?;
        let rows = u64::from_le_bytes(read_exact(&mut r)?) as usize;
        let cols = u64::from_le_bytes(read_exact(&mut r)?) as usize;
        let pref = model
            .set
            .find(&name)
            .ok_or_else(|| CheckpointError::UnknownBlock(name.clone()))?;
        let block = model.set.block_mut(pref);
        if block.rows != rows || block.cols != cols {
            return Err(CheckpointError::ShapeMismatch {
                block: name,
                found_rows: rows,
                found_cols: cols,
                rows: block.rows,
                cols: block.cols,
            });
        }
        for v in block.data.iter_mut() {
            *v = f64::from_le_bytes(read_exact(&mut r)?);
        }
    }
    Ok(Checkpoint { model, mode, epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tape;
    use crate::scenario::NoiseModel;

    fn tiny_scenario_params() -> ScenarioParams {
        ScenarioParams {
            num_agents: 4,
            area: 50.0,
            range: 25.0,
            noise: NoiseModel::Awgn { sigma: 2.0 },
            prior_var: 10.0,
        }
    }

    fn tiny_cfg(mode: PassMode, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 3,
            patience: 2,
            batch_size: 4,
            model: ModelConfig::new(8, 6, 16, 2),
            mode,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn splits_are_disjoint() {
        let p = tiny_scenario_params();
        let a = generate_dataset(&p, 3, Split::Train, 7).unwrap();
        let b = generate_dataset(&p, 3, Split::Val, 7).unwrap();
        assert_ne!(a[0].scenario.positions, b[0].scenario.positions);
    }

    #[test]
    fn mse_of_single_offset_agent_is_squared_norm() {
        // estimate off by (3, 4) -> squared error 25
        let mut tape = Tape::new();
        let est = tape.input(&[3.0, 4.0]);
        let truth = tape.input(&[0.0, 0.0]);
        let term = tape.sq_dist(est, truth).unwrap();
        assert_eq!(tape.scalar(term), 25.0);
    }

    #[test]
    fn total_is_exactly_mse_plus_scaled_vq() {
        let p = tiny_scenario_params();
        let data = generate_dataset(&p, 2, Split::Train, 3).unwrap();
        let cfg = tiny_cfg(PassMode::Vq, 3);
        let model = ModelParams::init(cfg.model, 3);
        let b = total_loss(&data, &model, &cfg).unwrap();
        assert!(b.total.is_finite());
        assert_eq!(b.total, b.mse + b.vq_scaled);
        assert!(b.vq_scaled > 0.0);
    }

    #[test]
    fn alpha_scaling_is_linear() {
        let p = tiny_scenario_params();
        let data = generate_dataset(&p, 1, Split::Train, 4).unwrap();
        let cfg1 = TrainConfig {
            alpha: 0.1,
            ..tiny_cfg(PassMode::Vq, 4)
        };
        let cfg2 = TrainConfig {
            alpha: 0.2,
            ..tiny_cfg(PassMode::Vq, 4)
        };
        let model = ModelParams::init(cfg1.model, 4);
        let b1 = total_loss(&data, &model, &cfg1).unwrap();
        let b2 = total_loss(&data, &model, &cfg2).unwrap();
        assert_eq!(b2.vq_scaled, 2.0 * b1.vq_scaled);
        assert_eq!(b1.mse, b2.mse);
    }

    #[test]
    fn unquantized_mode_has_zero_vq_loss() {
        let p = tiny_scenario_params();
        let data = generate_dataset(&p, 1, Split::Train, 5).unwrap();
        let cfg = tiny_cfg(PassMode::Unquantized, 5);
        let model = ModelParams::init(cfg.model, 5);
        let b = total_loss(&data, &model, &cfg).unwrap();
        assert_eq!(b.vq_scaled, 0.0);
        assert_eq!(b.total, b.mse);
    }

    #[test]
    fn batch_gradients_match_sequential_accumulation() {
        let p = tiny_scenario_params();
        let data = generate_dataset(&p, 3, Split::Train, 6).unwrap();
        let cfg = tiny_cfg(PassMode::Vq, 6);
        let model = ModelParams::init(cfg.model, 6);
        let batch: Vec<(usize, &TrainExample)> =
            data.iter().enumerate().map(|(i, e)| (i, e)).collect();
        let (_, parallel, _) = batch_grads(&batch, &model, &cfg).unwrap();
        let mut seq = model.set.zero_grads();
        for ex in &data {
            let l = scenario_loss(ex, &model, cfg.mode, cfg.alpha, cfg.beta).unwrap();
            seq.add_assign(&l.run.tape.backward(&model.set).unwrap());
        }
        assert_eq!(parallel, seq);
    }

    #[test]
    fn frozen_optimizer_stops_after_exactly_patience_epochs() {
        let p = tiny_scenario_params();
        let train_set = generate_dataset(&p, 4, Split::Train, 8).unwrap();
        let val_set = generate_dataset(&p, 2, Split::Val, 8).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            patience: 1,
            learning_rate: 0.0,
            ..tiny_cfg(PassMode::Vq, 8)
        };
        let out = train(&train_set, &val_set, &cfg).unwrap();
        // epoch 1 sets the best; epoch 2 cannot improve and trips patience=1
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn training_runs_are_bit_deterministic() {
        let p = tiny_scenario_params();
        let train_set = generate_dataset(&p, 6, Split::Train, 9).unwrap();
        let val_set = generate_dataset(&p, 2, Split::Val, 9).unwrap();
        let cfg = tiny_cfg(PassMode::Vq, 9);
        let a = train(&train_set, &val_set, &cfg).unwrap();
        let b = train(&train_set, &val_set, &cfg).unwrap();
        let rows_eq = a.log.iter().zip(&b.log).all(|(x, y)| {
            (
                x.epoch,
                x.train_total,
                x.train_mse,
                x.train_vq,
                x.val_total,
                x.codebook_utilization,
            ) == (
                y.epoch,
                y.train_total,
                y.train_mse,
                y.train_vq,
                y.val_total,
                y.codebook_utilization,
            )
        });
        assert!(rows_eq && a.log.len() == b.log.len());
        assert_eq!(a.model.set, b.model.set);
    }

    #[test]
    fn best_epoch_has_the_lowest_logged_validation_loss() {
        let p = tiny_scenario_params();
        let train_set = generate_dataset(&p, 6, Split::Train, 10).unwrap();
        let val_set = generate_dataset(&p, 2, Split::Val, 10).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..tiny_cfg(PassMode::Vq, 10)
        };
        let out = train(&train_set, &val_set, &cfg).unwrap();
        let min_val = out
            .log
            .iter()
            .map(|r| r.val_total)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val, min_val);
        let best_row = out.log.iter().find(|r| r.epoch == out.best_epoch).unwrap();
        assert_eq!(best_row.val_total, out.best_val);
    }

    #[test]
    fn divergence_carries_the_partial_log() {
        let p = tiny_scenario_params();
        let train_set = generate_dataset(&p, 4, Split::Train, 11).unwrap();
        let val_set = generate_dataset(&p, 2, Split::Val, 11).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 1e12,
            ..tiny_cfg(PassMode::Vq, 11)
        };
        match train(&train_set, &val_set, &cfg) {
            Err(TrainError::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn desk_smoke_training_improves_on_the_first_epoch() {
        // 64 train / 16 val scenarios, 30 epochs
        let p = ScenarioParams {
            num_agents: 6,
            ..ScenarioParams::default()
        };
        let train_set = generate_dataset(&p, 64, Split::Train, 20).unwrap();
        let val_set = generate_dataset(&p, 16, Split::Val, 20).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            patience: 30,
            model: ModelConfig::new(8, 6, 32, 2),
            mode: PassMode::Vq,
            seed: 20,
            ..TrainConfig::default()
        };
        let out = train(&train_set, &val_set, &cfg).unwrap();
        let first = out.log.first().unwrap().train_total;
        let last = out.log.last().unwrap().train_total;
        assert!(last < first, "no improvement: {first} -> {last}");
    }

    #[test]
    fn checkpoint_reload_reproduces_evaluation_exactly() {
        use crate::evaluation::{evaluate, Estimator};
        let p = tiny_scenario_params();
        let train_set = generate_dataset(&p, 6, Split::Train, 21).unwrap();
        let val_set = generate_dataset(&p, 2, Split::Val, 21).unwrap();
        let test_set = generate_dataset(&p, 8, Split::Test, 21).unwrap();
        let cfg = TrainConfig {
            model: ModelConfig::new(8, 6, 1 << 10, 2),
            ..tiny_cfg(PassMode::Vq, 21)
        };
        let out = train(&train_set, &val_set, &cfg).unwrap();
        let before = evaluate(
            &Estimator::Net {
                model: &out.model,
                mode: PassMode::Vq,
            },
            &test_set,
            32,
            32,
            21,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&out.model, PassMode::Vq, 3, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let after = evaluate(
            &Estimator::Net {
                model: &loaded.model,
                mode: PassMode::Vq,
            },
            &test_set,
            32,
            32,
            21,
        )
        .unwrap();
        assert_eq!(before.rmse, after.rmse);
        assert_eq!(before.per_run_rmse, after.per_run_rmse);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = ModelParams::init(ModelConfig::new(8, 6, 32, 2), 13);
        save_checkpoint(&model, PassMode::Vq, 17, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.model.set, model.set);
        assert_eq!(loaded.epoch, 17);
        assert_eq!(loaded.mode, PassMode::Vq);
        assert_eq!(loaded.model.config, model.config);
    }

    #[test]
    fn truncated_checkpoint_is_a_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = ModelParams::init(ModelConfig::new(8, 6, 32, 2), 13);
        save_checkpoint(&model, PassMode::Vq, 0, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Io(_))
        ));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::BadMagic)
        ));
    }
}
