use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::report::mean_std;
use super::{
    generate, load_csv, split_train_test, split_vertical, train_plaintext, Dataset, HarnessError, Result, SplitSpec,
    SynthConfig,
};
use crate::protocol::{init_partition, run_inproc, EpochMetrics, SessionData, SessionResult, TrainConfig};
use crate::transport::{replay, MsgType, NetworkConfig, ReplayResult, Role, TraceEvent, TraceLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf, label_column: String },
    Synthetic(SynthConfig),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Csv { path, label_column } => load_csv(path, label_column),
            DataSource::Synthetic(cfg) => generate(cfg),
        }
    }
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_repetitions() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub data: DataSource,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Runs with seeds `train.seed`, `train.seed + 1`, ...
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Links between the server and the clients. Coordinator links and a
    /// missing entry are instantaneous.
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    /// Also train the plaintext model on the same split.
    #[serde(default = "default_true")]
    pub baseline: bool,
}

impl ExperimentConfig {
    pub fn new(train: TrainConfig, data: DataSource) -> Self {
        ExperimentConfig {
            train,
            data,
            split: SplitSpec::default(),
            train_fraction: default_train_fraction(),
            repetitions: default_repetitions(),
            network: None,
            baseline: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.repetitions == 0 {
            return Err(HarnessError::InvalidSpec("repetitions must be positive".into()));
        }
        if let Some(n) = &self.network {
            n.validate()?;
        }
        Ok(())
    }

    fn seeded(&self, rep: usize) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.seed = self.train.seed.wrapping_add(rep as u64);
        cfg
    }
}

/// Train/test split with seed `seed`, then the vertical split.
pub fn prepare_session(ds: &Dataset, split: &SplitSpec, train_fraction: f64, seed: u64) -> Result<SessionData> {
    let (train, test) = split_train_test(ds, train_fraction, seed)?;
    let (tr, te) = (split_vertical(&train, split)?, split_vertical(&test, split)?);
    Ok(SessionData {
        a_train: tr.part_a,
        a_test: te.part_a,
        b_train: tr.part_b,
        b_test: te.part_b,
        y_train: tr.labels,
        y_test: te.labels,
    })
}

/// Replays a session's traces. `network` applies to every link between
/// the server and the clients.
pub fn replay_session(traces: &BTreeMap<Role, TraceLog>, network: Option<NetworkConfig>) -> Result<ReplayResult> {
    Ok(replay(traces, |from, to| {
        if from == Role::Coordinator || to == Role::Coordinator {
            None
        } else {
            network
        }
    })?)
}

/// Simulated seconds from the clients receiving each epoch's batch order
/// to both finishing its last training step.
pub(crate) fn epoch_seconds(replayed: &ReplayResult, epochs: usize) -> Vec<f64> {
    (0..epochs)
        .map_while(|e| {
            let end = replayed.mark_time(&format!("train_end:{e}"))?;
            let begin = replayed.mark_time(&format!("epoch_begin:{e}"))?;
            Some(end - begin)
        })
        .collect()
}

/// Bytes sent between the server and the clients during training and
/// evaluation steps, setup excluded.
pub(crate) fn online_bytes(traces: &BTreeMap<Role, TraceLog>) -> u64 {
    traces
        .iter()
        .filter(|(r, _)| **r != Role::Coordinator)
        .flat_map(|(_, log)| &log.events)
        .map(|e| match e {
            TraceEvent::Send {
                to, bytes, msg_type, step,
            } if *to != Role::Coordinator && *step > 0 && *msg_type != MsgType::Control => *bytes as u64,
            _ => 0,
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkBytes {
    pub from: Role,
    pub to: Role,
    pub bytes: u64,
    pub frames: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub wall_seconds: f64,
    pub compute_seconds: BTreeMap<Role, f64>,
    /// Simulated makespan of the whole session.
    pub simulated_seconds: f64,
    pub epoch_seconds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub train_rows: usize,
    pub test_rows: usize,
    pub metrics: Vec<EpochMetrics>,
    pub final_test_auc: Option<f64>,
    pub baseline_metrics: Option<Vec<EpochMetrics>>,
    pub baseline_test_auc: Option<f64>,
    pub links: Vec<LinkBytes>,
    pub online_bytes: u64,
    pub triples_dealt: u64,
    pub steps: u64,
    pub timing: RunTiming,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub spnn_auc_mean: f64,
    pub spnn_auc_std: f64,
    pub baseline_auc_mean: Option<f64>,
    pub baseline_auc_std: Option<f64>,
    /// Mean of `baseline − spnn` test AUC.
    pub auc_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub rows: usize,
    pub dropped_rows: usize,
    pub columns_a: Vec<String>,
    pub columns_b: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub dataset: DatasetInfo,
    pub runs: Vec<RunReport>,
    pub summary: Summary,
}

pub(crate) fn link_bytes(replayed: &ReplayResult) -> Vec<LinkBytes> {
    replayed
        .links
        .iter()
        .map(|l| LinkBytes {
            from: l.from,
            to: l.to,
            bytes: l.stats.bytes_sent,
            frames: l.stats.frames,
        })
        .collect()
}

fn run_once(cfg: &ExperimentConfig, ds: &Dataset, rep: usize) -> Result<RunReport> {
    let train = cfg.seeded(rep);
    let data = prepare_session(ds, &cfg.split, cfg.train_fraction, train.seed)?;
    let plan = train.plan(data.a_train.cols(), data.b_train.cols())?;
    let init = init_partition(&plan, train.seed);
    let res: SessionResult = run_inproc(&train, &plan, &data, &init, false)?;
    let replayed = replay_session(&res.traces, cfg.network)?;
    let baseline = if cfg.baseline {
        Some(train_plaintext(&train, &data, &init)?)
    } else {
        None
    };
    Ok(RunReport {
        seed: train.seed,
        train_rows: data.y_train.len(),
        test_rows: data.y_test.len(),
        final_test_auc: res.final_test_auc(),
        metrics: res.metrics().to_vec(),
        baseline_test_auc: baseline.as_ref().and_then(|b| b.metrics.last()).and_then(|m| m.test_auc),
        baseline_metrics: baseline.map(|b| b.metrics),
        links: link_bytes(&replayed),
        online_bytes: online_bytes(&res.traces),
        triples_dealt: res.coordinator.triples_dealt,
        steps: res.coordinator.steps,
        timing: RunTiming {
            wall_seconds: res.wall_seconds,
            compute_seconds: res.traces.iter().map(|(r, l)| (*r, l.compute_seconds())).collect(),
            simulated_seconds: replayed.makespan,
            epoch_seconds: epoch_seconds(&replayed, res.coordinator.epochs_run),
        },
    })
}

/// Runs every repetition of `cfg` and the matching plaintext baselines.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ds = cfg.data.load()?;
    let (a, b) = cfg.split.assign(&ds.columns)?;
    let runs = (0..cfg.repetitions)
        .map(|rep| run_once(cfg, &ds, rep))
        .collect::<Result<Vec<_>>>()?;
    let spnn: Vec<f64> = runs.iter().map(|r| r.final_test_auc.unwrap_or(f64::NAN)).collect();
    let (spnn_auc_mean, spnn_auc_std) = mean_std(&spnn);
    let (baseline_auc_mean, baseline_auc_std, auc_gap) = if cfg.baseline {
        let base: Vec<f64> = runs.iter().map(|r| r.baseline_test_auc.unwrap_or(f64::NAN)).collect();
        let (m, s) = mean_std(&base);
        let gaps: Vec<f64> = base.iter().zip(&spnn).map(|(b, s)| b - s).collect();
        (Some(m), Some(s), Some(mean_std(&gaps).0))
    } else {
        (None, None, None)
    };
    Ok(ExperimentReport {
        config: cfg.clone(),
        dataset: DatasetInfo {
            rows: ds.rows(),
            dropped_rows: ds.dropped_rows,
            columns_a: a.iter().map(|&c| ds.columns[c].clone()).collect(),
            columns_b: b.iter().map(|&c| ds.columns[c].clone()).collect(),
        },
        runs,
        summary: Summary {
            spnn_auc_mean,
            spnn_auc_std,
            baseline_auc_mean,
            baseline_auc_std,
            auc_gap,
        },
    })
}
