use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::experiment::{epoch_seconds, link_bytes, online_bytes, prepare_session, replay_session, LinkBytes};
use super::report::{linear_fit, LinearFit};
use super::{ExperimentConfig, HarnessError, Result};
use crate::protocol::{init_partition, run_inproc, ProtocolMode, SessionData, TrainConfig};
use crate::transport::{MsgType, NetworkConfig, Role, TraceEvent, TraceLog};

/// One recorded training epoch in one mode.
#[derive(Clone, Debug)]
pub struct ModeTrace {
    pub mode: ProtocolMode,
    pub traces: BTreeMap<Role, TraceLog>,
    pub train_rows: usize,
    pub triples_dealt: u64,
}

impl ModeTrace {
    /// Runs one training epoch without evaluation and keeps the traces.
    pub fn record(train: &TrainConfig, mode: ProtocolMode, data: &SessionData) -> Result<Self> {
        let mut cfg = train.clone();
        cfg.protocol_mode = mode;
        cfg.epochs = 1;
        cfg.evaluate = false;
        cfg.early_stop_loss = None;
        let plan = cfg.plan(data.a_train.cols(), data.b_train.cols())?;
        let init = init_partition(&plan, cfg.seed);
        let res = run_inproc(&cfg, &plan, data, &init, false)?;
        Ok(ModeTrace {
            mode,
            train_rows: data.y_train.len(),
            triples_dealt: res.coordinator.triples_dealt,
            traces: res.traces,
        })
    }

    /// Simulated time of the training epoch over `network`.
    pub fn epoch_seconds(&self, network: Option<NetworkConfig>) -> Result<f64> {
        let replayed = replay_session(&self.traces, network)?;
        epoch_seconds(&replayed, 1)
            .first()
            .copied()
            .ok_or_else(|| HarnessError::InvalidSpec("trace has no complete epoch".into()))
    }

    /// Bytes between the server and the clients during the epoch.
    pub fn online_bytes(&self) -> u64 {
        online_bytes(&self.traces)
    }

    /// Bytes of Beaver triples the coordinator dealt.
    pub fn dealer_bytes(&self) -> u64 {
        self.traces.get(&Role::Coordinator).map_or(0, |log| {
            log.events
                .iter()
                .map(|e| match e {
                    TraceEvent::Send {
                        bytes,
                        msg_type: MsgType::TripleDeal,
                        ..
                    } => *bytes as u64,
                    _ => 0,
                })
                .sum()
        })
    }

    pub fn links(&self) -> Result<Vec<LinkBytes>> {
        Ok(link_bytes(&replay_session(&self.traces, None)?))
    }

    /// CPU seconds each role spent.
    pub fn compute_seconds(&self) -> BTreeMap<Role, f64> {
        self.traces.iter().map(|(r, l)| (*r, l.compute_seconds())).collect()
    }
}

fn link(bandwidth: f64, latency: f64) -> Result<NetworkConfig> {
    Ok(NetworkConfig::new(bandwidth, latency, 0.0)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPoint {
    pub bandwidth: f64,
    pub ss_epoch_seconds: f64,
    pub he_epoch_seconds: f64,
    pub faster: ProtocolMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub config: ExperimentConfig,
    pub train_rows: usize,
    pub latency: f64,
    pub ss_online_bytes: u64,
    pub he_online_bytes: u64,
    pub ss_dealer_bytes: u64,
    pub ss_links: Vec<LinkBytes>,
    pub he_links: Vec<LinkBytes>,
    pub points: Vec<BandwidthPoint>,
    /// Bandwidth at which the two epoch times are equal, if they cross
    /// inside the swept range.
    pub crossover_bandwidth: Option<f64>,
    pub ss_compute_seconds: BTreeMap<Role, f64>,
    pub he_compute_seconds: BTreeMap<Role, f64>,
}

/// Records one training epoch in each mode, then replays both over links
/// of every given bandwidth.
pub fn bandwidth_sweep(cfg: &ExperimentConfig, bandwidths: &[f64], latency: f64) -> Result<BandwidthReport> {
    cfg.validate()?;
    if bandwidths.is_empty() {
        return Err(HarnessError::InvalidSpec("no bandwidths to sweep".into()));
    }
    let ds = cfg.data.load()?;
    let data = prepare_session(&ds, &cfg.split, cfg.train_fraction, cfg.train.seed)?;
    let ss = ModeTrace::record(&cfg.train, ProtocolMode::Ss, &data)?;
    let he = ModeTrace::record(&cfg.train, ProtocolMode::He, &data)?;
    let mut sorted = bandwidths.to_vec();
    sorted.sort_by(f64::total_cmp);

    let gap = |bw: f64| -> Result<(f64, f64)> {
        let net = Some(link(bw, latency)?);
        Ok((ss.epoch_seconds(net)?, he.epoch_seconds(net)?))
    };
    let mut points = Vec::with_capacity(sorted.len());
    for &bw in &sorted {
        let (s, h) = gap(bw)?;
        points.push(BandwidthPoint {
            bandwidth: bw,
            ss_epoch_seconds: s,
            he_epoch_seconds: h,
            faster: if s <= h { ProtocolMode::Ss } else { ProtocolMode::He },
        });
    }
    let mut crossover = None;
    for w in points.windows(2) {
        let (lo, hi) = (&w[0], &w[1]);
        if lo.faster == hi.faster {
            continue;
        }
        // bisect in log-bandwidth on the sign of he - ss
        let sign = |p: (f64, f64)| p.1 - p.0 > 0.0;
        let lo_sign = sign((lo.ss_epoch_seconds, lo.he_epoch_seconds));
        let (mut a, mut b) = (lo.bandwidth.ln(), hi.bandwidth.ln());
        for _ in 0..48 {
            let mid = 0.5 * (a + b);
            if sign(gap(mid.exp())?) == lo_sign {
                a = mid;
            } else {
                b = mid;
            }
        }
        crossover = Some((0.5 * (a + b)).exp());
        break;
    }
    Ok(BandwidthReport {
        config: cfg.clone(),
        train_rows: ss.train_rows,
        latency,
        ss_online_bytes: ss.online_bytes(),
        he_online_bytes: he.online_bytes(),
        ss_dealer_bytes: ss.dealer_bytes(),
        ss_links: ss.links()?,
        he_links: he.links()?,
        points,
        crossover_bandwidth: crossover,
        ss_compute_seconds: ss.compute_seconds(),
        he_compute_seconds: he.compute_seconds(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub mode: ProtocolMode,
    pub fraction: f64,
    pub rows: usize,
    pub epoch_seconds: f64,
    pub triples_dealt: u64,
    pub online_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub config: ExperimentConfig,
    pub points: Vec<ScalePoint>,
    /// Epoch seconds against rows, per mode.
    pub fits: BTreeMap<ProtocolMode, LinearFit>,
}

fn take_rows(data: &SessionData, rows: usize) -> SessionData {
    let idx: Vec<usize> = (0..rows).collect();
    SessionData {
        a_train: data.a_train.select_rows(&idx),
        b_train: data.b_train.select_rows(&idx),
        y_train: data.y_train[..rows].to_vec(),
        ..data.clone()
    }
}

/// One training epoch per mode on the first `floor(f · n)` training rows
/// for each fraction `f`, timed over `cfg.network`.
pub fn scale_sweep(cfg: &ExperimentConfig, fractions: &[f64], modes: &[ProtocolMode]) -> Result<ScaleReport> {
    cfg.validate()?;
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(HarnessError::InvalidSpec(format!("fraction {f} outside (0, 1]")));
    }
    let ds = cfg.data.load()?;
    let data = prepare_session(&ds, &cfg.split, cfg.train_fraction, cfg.train.seed)?;
    let n = data.y_train.len();
    let mut points = Vec::new();
    for &mode in modes {
        for &f in fractions {
            let rows = (f * n as f64).floor() as usize;
            if rows == 0 {
                return Err(HarnessError::InvalidSpec(format!("fraction {f} of {n} rows is empty")));
            }
            let t = ModeTrace::record(&cfg.train, mode, &take_rows(&data, rows))?;
            points.push(ScalePoint {
                mode,
                fraction: f,
                rows,
                epoch_seconds: t.epoch_seconds(cfg.network)?,
                triples_dealt: t.triples_dealt,
                online_bytes: t.online_bytes(),
            });
        }
    }
    let fits = modes
        .iter()
        .filter_map(|&m| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = points
                .iter()
                .filter(|p| p.mode == m)
                .map(|p| (p.rows as f64, p.epoch_seconds))
                .unzip();
            linear_fit(&xs, &ys).map(|fit| (m, fit))
        })
        .collect();
    Ok(ScaleReport {
        config: cfg.clone(),
        points,
        fits,
    })
}
