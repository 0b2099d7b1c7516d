//! `spnn`: runs training sessions, sweeps and the leakage attack from JSON
//! configs and prints JSON reports.

mod parse;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spnn_core::harness::{
    bandwidth_sweep, leakage_attack, mean_std, run_experiment, scale_sweep, write_synthetic, AttackReport,
    AttackSetup, DataSource, ExperimentConfig, HarnessError, SynthConfig,
};
use spnn_core::neural::{OptimizerConfig, OptimizerKind};
use spnn_core::protocol::{ProtocolMode, TrainConfig};

#[derive(Parser)]
#[command(name = "spnn", version, about = "Split-graph private training sessions, sweeps and attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (with repetitions and the plaintext baseline) and report metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulated epoch time of both modes over a list of link rates.
    SweepBandwidth {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated rates, e.g. 100K,1M,10M,100M.
        #[arg(long, value_delimiter = ',', value_parser = parse::bandwidth, required = true)]
        bandwidths: Vec<f64>,
        /// One-way latency in seconds.
        #[arg(long, default_value_t = 0.001)]
        latency: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Epoch time over growing fractions of the training rows.
    SweepScale {
        /// Defaults to the desk-scale synthetic table in SS mode.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', value_parser = parse::fraction, required = true)]
        fractions: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "ss")]
        modes: Vec<ProtocolMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shadow-model property attack on the hidden features the server sees.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        optimizer: Optimizer,
        /// Column to infer, binarized at its median.
        #[arg(long)]
        property: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic table with a planted property column.
    GenSynth {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        features_a: usize,
        #[arg(long)]
        features_b: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Optimizer {
    Sgd,
    Sgld,
}

#[derive(Serialize)]
struct AttackSummary {
    config: ExperimentConfig,
    setup: AttackSetup,
    runs: Vec<AttackReport>,
    task_auc_mean: f64,
    task_auc_std: f64,
    attack_auc_mean: f64,
    attack_auc_std: f64,
    shuffled_attack_auc_mean: f64,
}

#[derive(Serialize)]
struct SynthOutput {
    data: PathBuf,
    manifest: PathBuf,
    config: SynthConfig,
}

#[derive(Serialize)]
struct ErrorBody {
    kind: &'static str,
    message: String,
}

#[derive(Serialize)]
struct ErrorObject {
    error: ErrorBody,
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn default_scale_config() -> ExperimentConfig {
    let synth = SynthConfig::desk_scale(1);
    let train = TrainConfig::new(ProtocolMode::Ss, vec![8, 8], OptimizerConfig::sgd(0.1, 64), 1, 1);
    let mut cfg = ExperimentConfig::new(train, DataSource::Synthetic(synth.clone()));
    cfg.split = synth.split();
    cfg.baseline = false;
    cfg
}

fn attack(cfg: ExperimentConfig, optimizer: Optimizer, property: String) -> Result<AttackSummary> {
    let ds = cfg.data.load()?;
    let setup = AttackSetup::new(property);
    let mut runs = Vec::new();
    for rep in 0..cfg.repetitions {
        let mut train = cfg.train.clone();
        train.seed = cfg.train.seed.wrapping_add(rep as u64);
        train.optimizer.kind = match optimizer {
            Optimizer::Sgd => OptimizerKind::Sgd,
            Optimizer::Sgld => OptimizerKind::Sgld,
        };
        if matches!(optimizer, Optimizer::Sgld) && train.optimizer.noise_seed == 0 {
            train.optimizer.noise_seed = train.seed;
        }
        runs.push(leakage_attack(&train, &ds, &cfg.split, &setup)?);
    }
    let col = |f: fn(&AttackReport) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
    let (task_auc_mean, task_auc_std) = col(|r| r.task_auc);
    let (attack_auc_mean, attack_auc_std) = col(|r| r.attack_auc);
    let (shuffled_attack_auc_mean, _) = col(|r| r.shuffled_attack_auc);
    Ok(AttackSummary {
        config: cfg,
        setup,
        runs,
        task_auc_mean,
        task_auc_std,
        attack_auc_mean,
        attack_auc_std,
        shuffled_attack_auc_mean,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out } => {
            let report = run_experiment(&read_config(&config)?)?;
            emit(&report, out.as_deref())
        }
        Command::SweepBandwidth {
            config,
            bandwidths,
            latency,
            out,
        } => {
            let report = bandwidth_sweep(&read_config(&config)?, &bandwidths, latency)?;
            emit(&report, out.as_deref())
        }
        Command::SweepScale {
            config,
            fractions,
            modes,
            out,
        } => {
            let cfg = match config {
                Some(path) => read_config(&path)?,
                None => default_scale_config(),
            };
            let report = scale_sweep(&cfg, &fractions, &modes)?;
            emit(&report, out.as_deref())
        }
        Command::Attack {
            config,
            optimizer,
            property,
            out,
        } => {
            let summary = attack(read_config(&config)?, optimizer, property)?;
            emit(&summary, out.as_deref())
        }
        Command::GenSynth {
            rows,
            features_a,
            features_b,
            seed,
            out,
        } => {
            if features_a == 0 {
                bail!("--features-a must be positive");
            }
            let config = SynthConfig::new(rows, features_a, features_b, seed);
            let data = write_synthetic(&config, &out)?;
            let output = SynthOutput {
                manifest: out.join("manifest.json"),
                data,
                config,
            };
            emit(&output, None)
        }
    }
}

fn kind(e: &anyhow::Error) -> &'static str {
    if let Some(h) = e.downcast_ref::<HarnessError>() {
        h.kind()
    } else if e.downcast_ref::<serde_json::Error>().is_some() {
        "config_error"
    } else if e.downcast_ref::<std::io::Error>().is_some() {
        "io_error"
    } else {
        "error"
    }
}

fn fail(kind: &'static str, message: String, code: u8) -> ExitCode {
    let obj = ErrorObject {
        error: ErrorBody { kind, message },
    };
    println!("{}", serde_json::to_string(&obj).expect("error object serializes"));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail("usage_error", e.to_string().trim_end().to_string(), 2),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(kind(&e), format!("{e:#}"), 1),
    }
}
