//! Command-line wiring for the `vqmpnn` binary: scenario generation,
//! training, evaluation, sweeps, and the communication-cost table, all
//! driven by one TOML config with full defaults.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::RngCore;
use thiserror::Error;

use crate::comms::{comm_cost, CostError, CostMethod};
use crate::config::{ConfigError, EvalModeKind, RunConfig};
use crate::evaluation::{
    evaluate, sweep_agents, sweep_codebook, Estimator, EvalError, EvalReport, SweepSetup,
};
use crate::mpnn::PassMode;
use crate::rng;
use crate::scenario::ScenarioError;
use crate::training::{
    generate_dataset, load_checkpoint, save_checkpoint, train, train_from, write_log_csv,
    Checkpoint, CheckpointError, Split, TrainError, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Exit codes: 1 for validation problems, 2 for runtime divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Train(TrainError::Diverged { .. })
            | CliError::Train(TrainError::NonFiniteLoss { .. })
            | CliError::Eval(EvalError::Train(TrainError::Diverged { .. })) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "vqmpnn",
    about = "Communication-efficient cooperative localization simulator",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML config; every field has a default, so this may be omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the config seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; all files land here.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Checkpoint to evaluate, sweep, or resume training from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Estimator mode: vq | mpnn | prior | lsq.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write scenario fixture files.
    Gen(CommonArgs),
    /// Train one model per seed; writes checkpoints and learning curves.
    Train(CommonArgs),
    /// Evaluate a checkpoint or baseline on fresh test scenarios.
    Eval(CommonArgs),
    /// Codebook-size and agent-count sweeps.
    Sweep(CommonArgs),
    /// Emit the per-node communication-cost table.
    Cost(CommonArgs),
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(args) => cmd_gen(&resolve(&args)?, &args),
        Command::Train(args) => cmd_train(&resolve(&args)?, &args),
        Command::Eval(args) => cmd_eval(&resolve(&args)?, &args),
        Command::Sweep(args) => cmd_sweep(&resolve(&args)?, &args),
        Command::Cost(args) => cmd_cost(&resolve(&args)?, &args),
    }
}

/// Load and validate the config, apply the seed override, and echo the
/// resolved config into the output directory.
fn resolve(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    std::fs::create_dir_all(&args.out)?;
    cfg.echo_to(&args.out)?;
    Ok(cfg)
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    Ok(())
}

pub fn cmd_gen(cfg: &RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    let seed = cfg.seeds[0];
    for i in 0..cfg.gen.count {
        let mut sr = rng::stream_indexed(seed, "gen-scenario", i as u64);
        let scenario = cfg.scenario.generate(sr.next_u64())?;
        scenario.save(&args.out.join(format!("scenario_{i:03}.json")))?;
    }
    println!(
        "wrote {} scenario file(s) under {}",
        cfg.gen.count,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    if args.checkpoint.is_some() && cfg.seeds.len() != 1 {
        return Err(CliError::Usage(
            "resuming from a checkpoint requires a single seed".into(),
        ));
    }
    let mut summary = Vec::new();
    let mut best_vals = Vec::new();
    for &seed in &cfg.seeds {
        let seed_dir = args.out.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&seed_dir)?;
        let train_set =
            generate_dataset(&cfg.scenario, cfg.train.train_samples, Split::Train, seed)?;
        let val_set = generate_dataset(&cfg.scenario, cfg.train.val_samples, Split::Val, seed)?;
        let tc = cfg.train_config(seed)?;
        let result = match &args.checkpoint {
            Some(path) => {
                let ck = load_checkpoint(path)?;
                if ck.model.config != cfg.model {
                    return Err(CliError::Usage(format!(
                        "checkpoint dimensions {:?} do not match the config {:?}",
                        ck.model.config, cfg.model
                    )));
                }
                if ck.mode != tc.mode {
                    return Err(CliError::Usage(
                        "checkpoint was trained in a different mode".into(),
                    ));
                }
                train_from(ck.model, ck.epoch, &train_set, &val_set, &tc)
            }
            None => train(&train_set, &val_set, &tc),
        };
        let outcome: TrainOutcome = match result {
            Ok(o) => o,
            Err(TrainError::Diverged { epoch, reason, log }) => {
                // keep the partial learning curve around for the post-mortem
                write_log_csv(&log, &seed_dir.join("train_log.csv"))?;
                return Err(CliError::Train(TrainError::Diverged {
                    epoch,
                    reason,
                    log: Vec::new(),
                }));
            }
            Err(e) => return Err(e.into()),
        };
        write_log_csv(&outcome.log, &seed_dir.join("train_log.csv"))?;
        let last_epoch = outcome.log.last().map(|r| r.epoch).unwrap_or(0);
        save_checkpoint(
            &outcome.model,
            outcome.mode,
            last_epoch,
            &seed_dir.join("checkpoint.bin"),
        )?;
        println!(
            "seed {seed}: {} epochs, best val {:.4} at epoch {}",
            outcome.log.len(),
            outcome.best_val,
            outcome.best_epoch
        );
        summary.push(format!(
            "{seed},{},{},{}",
            outcome.log.len(),
            outcome.best_epoch,
            outcome.best_val
        ));
        best_vals.push(outcome.best_val);
    }
    write_csv(
        &args.out.join("train_summary.csv"),
        "seed,epochs_run,best_epoch,best_val",
        &summary,
    )?;
    let n = best_vals.len() as f64;
    let mean = best_vals.iter().sum::<f64>() / n;
    let std = (best_vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    println!("best validation loss across seeds: {mean:.4} +- {std:.4}");
    Ok(())
}

fn load_net_checkpoint(args: &CommonArgs, expected: PassMode) -> Result<Checkpoint, CliError> {
    let path = args.checkpoint.as_ref().ok_or_else(|| {
        CliError::Usage("--checkpoint is required for vq and mpnn evaluation".into())
    })?;
    let ck = load_checkpoint(path)?;
    if ck.mode != expected {
        return Err(CliError::Usage(format!(
            "checkpoint was trained in {:?} mode, requested {:?}",
            ck.mode, expected
        )));
    }
    Ok(ck)
}

fn report_row(r: &EvalReport) -> String {
    format!(
        "{},{},{},{},{},{}",
        r.method,
        r.codebook_size.map(|k| k.to_string()).unwrap_or_default(),
        r.bits_per_node,
        r.rmse,
        r.n_mc,
        r.seed
    )
}

pub fn cmd_eval(cfg: &RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    let mode = match &args.mode {
        Some(s) => EvalModeKind::parse(s)?,
        None => EvalModeKind::parse(&cfg.eval.mode)?,
    };
    let ck = match mode {
        EvalModeKind::Vq => Some(load_net_checkpoint(args, PassMode::Vq)?),
        EvalModeKind::Mpnn => Some(load_net_checkpoint(args, PassMode::Unquantized)?),
        _ => None,
    };
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let test_set = generate_dataset(&cfg.scenario, cfg.eval.n_mc, Split::Test, seed)?;
        let estimator = match (mode, &ck) {
            (EvalModeKind::Vq, Some(ck)) => Estimator::Net {
                model: &ck.model,
                mode: PassMode::Vq,
            },
            (EvalModeKind::Mpnn, Some(ck)) => Estimator::Net {
                model: &ck.model,
                mode: PassMode::Unquantized,
            },
            (EvalModeKind::Prior, _) => Estimator::PriorOnly,
            (EvalModeKind::Lsq, _) => Estimator::LeastSquares {
                iterations: cfg.eval.lsq_iterations,
            },
            _ => unreachable!("checkpoint presence is checked above"),
        };
        let report = evaluate(&estimator, &test_set, cfg.comms.q, cfg.comms.h, seed)?;
        println!(
            "seed {seed}: {} rmse {:.4} m over {} runs ({} bits/node)",
            report.method, report.rmse, report.n_mc, report.bits_per_node
        );
        rows.push(report_row(&report));
    }
    write_csv(
        &args.out.join("eval.csv"),
        "method,k,bits_per_node,rmse,n_mc,seed",
        &rows,
    )?;
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    // codebook sweep: trains one model per size and seed
    let setup = SweepSetup {
        scenario: cfg.scenario,
        train: cfg.train_config(cfg.seeds[0])?,
        train_samples: cfg.train.train_samples,
        val_samples: cfg.train.val_samples,
        n_mc: cfg.eval.n_mc,
        seeds: &cfg.seeds,
        q_bits: cfg.comms.q,
        header_bits: cfg.comms.h,
        nominal_neighbors: cfg.comms.neighbors,
    };
    let rows = sweep_codebook(&setup, &cfg.sweep.codebook_sizes)?;
    write_csv(
        &args.out.join("sweep_codebook.csv"),
        "k,bits_per_node,rmse",
        &rows
            .iter()
            .map(|r| format!("{},{},{}", r.codebook_size, r.bits_per_node, r.rmse))
            .collect::<Vec<_>>(),
    )?;
    for r in &rows {
        println!(
            "K = {:>5}: {} bits/node, rmse {:.4} m",
            r.codebook_size, r.bits_per_node, r.rmse
        );
    }

    // agent-count sweep: one fixed trained model, no retraining
    if !cfg.sweep.agent_counts.is_empty() {
        let (model, mode) = match &args.checkpoint {
            Some(path) => {
                let ck = load_checkpoint(path)?;
                (ck.model, ck.mode)
            }
            None => {
                let seed = cfg.seeds[0];
                let train_set =
                    generate_dataset(&cfg.scenario, cfg.train.train_samples, Split::Train, seed)?;
                let val_set =
                    generate_dataset(&cfg.scenario, cfg.train.val_samples, Split::Val, seed)?;
                let tc = cfg.train_config(seed)?;
                let outcome = train(&train_set, &val_set, &tc)?;
                (outcome.model, outcome.mode)
            }
        };
        let rows = sweep_agents(
            &model,
            mode,
            &cfg.scenario,
            &cfg.sweep.agent_counts,
            cfg.eval.n_mc,
            cfg.seeds[0],
            cfg.comms.q,
            cfg.comms.h,
        )?;
        write_csv(
            &args.out.join("sweep_agents.csv"),
            "n_agents,rmse",
            &rows
                .iter()
                .map(|r| format!("{},{}", r.num_agents, r.rmse))
                .collect::<Vec<_>>(),
        )?;
        for r in &rows {
            println!("{:>3} agents: rmse {:.4} m", r.num_agents, r.rmse);
        }
    } else {
        write_csv(&args.out.join("sweep_agents.csv"), "n_agents,rmse", &[])?;
    }
    Ok(())
}

pub fn cmd_cost(cfg: &RunConfig, args: &CommonArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    println!("{:<12} bits per node", "method");
    for method in CostMethod::ALL {
        let bits = comm_cost(method, &cfg.cost_spec(method))?;
        println!("{:<12} {bits}", method.name());
        rows.push(format!("{},{bits}", method.name()));
    }
    write_csv(&args.out.join("cost_table.csv"), "method,bits", &rows)?;
    Ok(())
}
