//! Store-and-forward link model and trace replay.
//!
//! A frame of `b` bytes sent at time `t` on a link that is free at `busy`
//! starts serializing at `max(t, busy)`, occupies the link for
//! `8 b / bandwidth` seconds, and arrives `latency` seconds after the last
//! bit leaves.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Role, TraceEvent, TraceLog};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("link closed")]
    LinkClosed,
    #[error("replay stalled; blocked roles: {0:?}")]
    Deadlock(Vec<Role>),
    #[error("{role} received {got} bytes from {from} but {sent} were sent")]
    TraceMismatch { role: Role, from: Role, got: usize, sent: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Bits per second.
    pub bandwidth: f64,
    /// One-way latency in seconds.
    pub latency: f64,
    #[serde(default)]
    pub loss_rate: f64,
}

impl NetworkConfig {
    pub fn new(bandwidth: f64, latency: f64, loss_rate: f64) -> Result<Self, SimError> {
        let cfg = NetworkConfig {
            bandwidth,
            latency,
            loss_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.bandwidth > 0.0) {
            return Err(SimError::InvalidConfig(format!("bandwidth {} must be positive", self.bandwidth)));
        }
        if !(self.latency >= 0.0) {
            return Err(SimError::InvalidConfig(format!("latency {} must be non-negative", self.latency)));
        }
        if !(0.0..1.0).contains(&self.loss_rate) {
            return Err(SimError::InvalidConfig(format!("loss rate {} outside [0, 1)", self.loss_rate)));
        }
        Ok(())
    }

    /// Seconds the link is occupied by `bytes`. Losses are charged as the
    /// expected number of retransmissions.
    pub fn serialization_time(&self, bytes: usize) -> f64 {
        bytes as f64 * 8.0 / self.bandwidth / (1.0 - self.loss_rate)
    }
}

/// Parses `100K`, `1.5M`, `2G` or a plain number of bits per second.
pub fn parse_bandwidth(s: &str) -> Result<f64, SimError> {
    let s = s.trim();
    let (num, mult) = match s.chars().last() {
        Some('K' | 'k') => (&s[..s.len() - 1], 1e3),
        Some('M' | 'm') => (&s[..s.len() - 1], 1e6),
        Some('G' | 'g') => (&s[..s.len() - 1], 1e9),
        _ => (s, 1.0),
    };
    let v: f64 = num
        .parse()
        .map_err(|_| SimError::InvalidConfig(format!("bad bandwidth `{s}`")))?;
    if !(v > 0.0) {
        return Err(SimError::InvalidConfig(format!("bad bandwidth `{s}`")));
    }
    Ok(v * mult)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames: u64,
    /// Total seconds frames spent in transit on this link.
    pub simulated_elapsed: f64,
}

/// One directed link. `None` config means an instantaneous link.
#[derive(Clone, Debug)]
pub struct SimLink {
    cfg: Option<NetworkConfig>,
    busy_until: f64,
    last_delivery: f64,
    stats: LinkStats,
    closed: bool,
}

impl SimLink {
    pub fn new(cfg: Option<NetworkConfig>) -> Self {
        SimLink {
            cfg,
            busy_until: 0.0,
            last_delivery: 0.0,
            stats: LinkStats::default(),
            closed: false,
        }
    }

    /// Sends `bytes` at time `now`; returns the delivery time.
    pub fn send(&mut self, now: f64, bytes: usize) -> Result<f64, SimError> {
        if self.closed {
            return Err(SimError::LinkClosed);
        }
        let delivery = match &self.cfg {
            None => now.max(self.last_delivery),
            Some(cfg) => {
                let start = now.max(self.busy_until);
                self.busy_until = start + cfg.serialization_time(bytes);
                self.busy_until + cfg.latency
            }
        };
        self.stats.bytes_sent += bytes as u64;
        self.stats.frames += 1;
        self.stats.simulated_elapsed += delivery - now;
        self.last_delivery = delivery;
        Ok(delivery)
    }

    pub fn deliver(&mut self, bytes: usize) {
        self.stats.bytes_received += bytes as u64;
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub from: Role,
    pub to: Role,
    pub stats: LinkStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayResult {
    /// Simulated finish time of every role that had a trace.
    pub finish: BTreeMap<Role, f64>,
    pub makespan: f64,
    pub links: Vec<LinkReport>,
    /// `(role, label, time)` for every mark.
    pub marks: Vec<(Role, String, f64)>,
}

impl ReplayResult {
    /// Latest time any role reached the mark `label`.
    pub fn mark_time(&self, label: &str) -> Option<f64> {
        self.marks
            .iter()
            .filter(|(_, l, _)| l == label)
            .map(|(_, _, t)| *t)
            .fold(None, |acc, t| Some(acc.map_or(t, |a: f64| a.max(t))))
    }

    pub fn link(&self, from: Role, to: Role) -> LinkStats {
        self.links
            .iter()
            .find(|l| l.from == from && l.to == to)
            .map(|l| l.stats)
            .unwrap_or_default()
    }
}

/// Replays recorded role traces over simulated links. Compute segments
/// advance a role's clock, sends never block, and a receive waits for the
/// matching delivery on its link.
pub fn replay(
    logs: &BTreeMap<Role, TraceLog>,
    link_cfg: impl Fn(Role, Role) -> Option<NetworkConfig>,
) -> Result<ReplayResult, SimError> {
    let roles: Vec<Role> = logs.keys().copied().collect();
    let mut clock: HashMap<Role, f64> = roles.iter().map(|&r| (r, 0.0)).collect();
    let mut pos: HashMap<Role, usize> = roles.iter().map(|&r| (r, 0)).collect();
    let mut links: BTreeMap<(Role, Role), SimLink> = BTreeMap::new();
    let mut queues: HashMap<(Role, Role), VecDeque<(f64, usize)>> = HashMap::new();
    let mut marks = Vec::new();

    loop {
        let mut progressed = false;
        let mut blocked = Vec::new();
        for &r in &roles {
            let events = &logs[&r].events;
            let p = pos.get_mut(&r).unwrap();
            let t = clock.get_mut(&r).unwrap();
            while *p < events.len() {
                match &events[*p] {
                    TraceEvent::Compute { seconds } => *t += seconds,
                    TraceEvent::Mark { label } => marks.push((r, label.clone(), *t)),
                    TraceEvent::Send { to, bytes, .. } => {
                        let link = links.entry((r, *to)).or_insert_with(|| SimLink::new(link_cfg(r, *to)));
                        let at = link.send(*t, *bytes)?;
                        queues.entry((r, *to)).or_default().push_back((at, *bytes));
                    }
                    TraceEvent::Recv { from, bytes, .. } => {
                        let Some((at, sent)) = queues.get_mut(&(*from, r)).and_then(VecDeque::pop_front) else {
                            blocked.push(r);
                            break;
                        };
                        if sent != *bytes {
                            return Err(SimError::TraceMismatch {
                                role: r,
                                from: *from,
                                got: *bytes,
                                sent,
                            });
                        }
                        links.get_mut(&(*from, r)).unwrap().deliver(sent);
                        *t = t.max(at);
                    }
                }
                *p += 1;
                progressed = true;
            }
        }
        if blocked.is_empty() {
            break;
        }
        if !progressed {
            return Err(SimError::Deadlock(blocked));
        }
    }
    let finish: BTreeMap<Role, f64> = clock.into_iter().collect();
    Ok(ReplayResult {
        makespan: finish.values().copied().fold(0.0, f64::max),
        finish,
        links: links
            .into_iter()
            .map(|((from, to), l)| LinkReport {
                from,
                to,
                stats: l.stats(),
            })
            .collect(),
        marks,
    })
}
