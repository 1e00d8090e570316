//! Structured run configuration. Every field has a default matching the
//! standard experimental setup, so an empty (or absent) TOML file is a valid
//! config; the resolved config is echoed into the output directory for
//! provenance.

use std::path::Path;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comms::{CommCostSpec, CostMethod};
use crate::mpnn::{ModelConfig, PassMode};
use crate::scenario::ScenarioParams;
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Estimator selection for evaluation commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalModeKind {
    Vq,
    Mpnn,
    Prior,
    Lsq,
}

impl EvalModeKind {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "vq" => Ok(EvalModeKind::Vq),
            "mpnn" => Ok(EvalModeKind::Mpnn),
            "prior" => Ok(EvalModeKind::Prior),
            "lsq" => Ok(EvalModeKind::Lsq),
            other => Err(ConfigError::Invalid(format!(
                "mode must be one of vq|mpnn|prior|lsq, got `{other}`"
            ))),
        }
    }
}

pub fn parse_pass_mode(s: &str) -> Result<PassMode, ConfigError> {
    match s {
        "vq" => Ok(PassMode::Vq),
        "mpnn" => Ok(PassMode::Unquantized),
        other => Err(ConfigError::Invalid(format!(
            "train.mode must be vq or mpnn, got `{other}`"
        ))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: usize,
    pub patience: usize,
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    /// vq | mpnn
    pub mode: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 300,
            patience: 30,
            alpha: 0.1,
            beta: 0.25,
            batch_size: 32,
            learning_rate: 1e-3,
            train_samples: 3000,
            val_samples: 300,
            test_samples: 300,
            mode: "vq".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CommsSection {
    /// Q: bits per transmitted scalar in unquantized methods.
    pub q: u64,
    /// H: header bits per message.
    pub h: u64,
    /// Nominal neighbor count for closed-form tables.
    pub neighbors: u64,
    /// J: linearization iterations of the parametric-BP baselines.
    pub j_linearization: u64,
    /// C: scalar-quantizer bits of the C-bit baseline.
    pub c_bits: u64,
    /// N_p: particle count of the nonparametric-BP baseline.
    pub n_particles: u64,
    /// Iterations of the ADMM baseline.
    pub t_admm: u64,
    /// Clip bound of the scalar quantizer harness.
    pub clip_bound: f64,
}

impl Default for CommsSection {
    fn default() -> Self {
        Self {
            q: 32,
            h: 32,
            neighbors: 10,
            j_linearization: 20,
            c_bits: 8,
            n_particles: 1000,
            t_admm: 400,
            clip_bound: 50.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub n_mc: usize,
    /// vq | mpnn | prior | lsq
    pub mode: String,
    pub lsq_iterations: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_mc: 300,
            mode: "vq".to_string(),
            lsq_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSection {
    /// Number of scenario fixture files to write.
    pub count: usize,
}

impl Default for GenSection {
    fn default() -> Self {
        Self { count: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub codebook_sizes: Vec<usize>,
    pub agent_counts: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            codebook_sizes: vec![64, 256, 1024],
            agent_counts: vec![10, 15, 20, 25, 30],
        }
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub scenario: ScenarioParams,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub comms: CommsSection,
    pub eval: EvalSection,
    pub gen: GenSection,
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        if cfg.seeds.is_empty() {
            cfg.seeds = vec![0];
        }
        Ok(cfg)
    }

    /// Load from `path`, or the pure defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p)?),
            None => Ok(RunConfig {
                seeds: vec![0],
                ..RunConfig::default()
            }),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    /// Echo the resolved config into the output directory.
    pub fn echo_to(&self, out_dir: &Path) -> Result<PathBuf, ConfigError> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join("config_echo.toml");
        std::fs::write(&path, self.to_toml())?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must not be empty".into()));
        }
        self.scenario
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let m = &self.model;
        for (name, v) in [
            ("model.state_dim", m.state_dim),
            ("model.latent_dim", m.latent_dim),
            ("model.codebook_size", m.codebook_size),
            ("model.rounds", m.rounds),
        ] {
            if v < 1 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        if !m.feature_scale.is_finite() || m.feature_scale <= 0.0 {
            return Err(ConfigError::Invalid(
                "model.feature_scale must be positive".into(),
            ));
        }
        let t = &self.train;
        if t.patience < 1 {
            return Err(ConfigError::Invalid(
                "train.patience must be at least 1".into(),
            ));
        }
        if t.alpha <= 0.0 || t.beta <= 0.0 || !t.alpha.is_finite() || !t.beta.is_finite() {
            return Err(ConfigError::Invalid(
                "train.alpha and train.beta must be positive".into(),
            ));
        }
        if t.batch_size < 1 || t.epochs < 1 {
            return Err(ConfigError::Invalid(
                "train.batch_size and train.epochs must be at least 1".into(),
            ));
        }
        if !t.learning_rate.is_finite() || t.learning_rate < 0.0 {
            return Err(ConfigError::Invalid(
                "train.learning_rate must be non-negative".into(),
            ));
        }
        parse_pass_mode(&t.mode)?;
        EvalModeKind::parse(&self.eval.mode)?;
        if self.eval.n_mc < 1 {
            return Err(ConfigError::Invalid("eval.n_mc must be at least 1".into()));
        }
        for (name, v) in [
            ("comms.q", self.comms.q),
            ("comms.h", self.comms.h),
            ("comms.neighbors", self.comms.neighbors),
            ("comms.j_linearization", self.comms.j_linearization),
            ("comms.c_bits", self.comms.c_bits),
            ("comms.n_particles", self.comms.n_particles),
            ("comms.t_admm", self.comms.t_admm),
        ] {
            if v < 1 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        if !self.comms.clip_bound.is_finite() || self.comms.clip_bound <= 0.0 {
            return Err(ConfigError::Invalid(
                "comms.clip_bound must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Training configuration for one seed.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, ConfigError> {
        Ok(TrainConfig {
            epochs: self.train.epochs,
            patience: self.train.patience,
            alpha: self.train.alpha,
            beta: self.train.beta,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            mode: parse_pass_mode(&self.train.mode)?,
            model: self.model,
            seed,
        })
    }

    /// Cost spec for one method; the round count follows the method
    /// (the ADMM baseline runs `comms.t_admm` iterations, everything else
    /// the model's T).
    pub fn cost_spec(&self, method: CostMethod) -> CommCostSpec {
        let t = match method {
            CostMethod::SpAdmm => self.comms.t_admm,
            _ => self.model.rounds as u64,
        };
        CommCostSpec {
            q: self.comms.q,
            h: self.comms.h,
            t,
            neighbors: self.comms.neighbors,
            j: Some(self.comms.j_linearization),
            c: Some(self.comms.c_bits),
            n_p: Some(self.comms.n_particles),
            k: Some(self.model.codebook_size as u64),
            m: Some(self.model.state_dim as u64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_the_default_setup() {
        let cfg = RunConfig::from_toml("").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.scenario.area, 50.0);
        assert_eq!(cfg.scenario.range, 25.0);
        assert_eq!(cfg.scenario.num_agents, 20);
        assert_eq!(cfg.model.state_dim, 16);
        assert_eq!(cfg.model.latent_dim, 12);
        assert_eq!(cfg.model.codebook_size, 1 << 10);
        assert_eq!(cfg.model.rounds, 3);
        assert_eq!(cfg.train.alpha, 0.1);
        assert_eq!(cfg.train.beta, 0.25);
        assert_eq!(cfg.train.patience, 30);
        assert_eq!(cfg.comms.q, 32);
        assert_eq!(cfg.comms.h, 32);
        assert_eq!(cfg.seeds, vec![0]);
    }

    #[test]
    fn partial_section_with_missing_field_names_it() {
        // noise table requires sigma
        let err = RunConfig::from_toml("[scenario]\nnoise = { kind = \"awgn\" }\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sigma"), "{msg}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        let cfg = RunConfig::from_toml("[scenario]\nrange = -1.0\n").unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("range"));
        let cfg = RunConfig::from_toml("[train]\nmode = \"bogus\"\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip_preserves_values() {
        let mut cfg = RunConfig::default();
        cfg.seeds = vec![3, 4];
        cfg.model.codebook_size = 64;
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back.seeds, vec![3, 4]);
        assert_eq!(back.model.codebook_size, 64);
    }

    #[test]
    fn cost_spec_uses_admm_iterations_for_admm_only() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.cost_spec(CostMethod::SpAdmm).t, 400);
        assert_eq!(cfg.cost_spec(CostMethod::VqMpnn).t, 3);
    }
}
