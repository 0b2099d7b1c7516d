use serde::{Deserialize, Serialize};

use super::{Frame, MsgType, Role, Transport, TransportError};

/// CPU time consumed by the calling thread, in seconds.
pub fn thread_cpu_time() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    Compute { seconds: f64 },
    Send { to: Role, bytes: usize, msg_type: MsgType, step: u64 },
    Recv { from: Role, bytes: usize, msg_type: MsgType, step: u64 },
    Mark { label: String },
}

/// Everything one role did, in order.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TraceLog {
    pub events: Vec<TraceEvent>,
    /// Frames this role received, kept only when capture is enabled.
    #[serde(skip)]
    pub received: Vec<(Role, Frame)>,
}

impl TraceLog {
    pub fn compute_seconds(&self) -> f64 {
        self.events
            .iter()
            .map(|e| match e {
                TraceEvent::Compute { seconds } => *seconds,
                _ => 0.0,
            })
            .sum()
    }

    pub fn bytes_sent(&self) -> u64 {
        self.events
            .iter()
            .map(|e| match e {
                TraceEvent::Send { bytes, .. } => *bytes as u64,
                _ => 0,
            })
            .sum()
    }
}

/// Records thread CPU time between transport calls together with every
/// send and receive.
pub struct Traced<T> {
    inner: T,
    log: TraceLog,
    capture: bool,
    last: f64,
}

impl<T: Transport> Traced<T> {
    pub fn new(inner: T, capture: bool) -> Self {
        Traced {
            inner,
            log: TraceLog::default(),
            capture,
            last: thread_cpu_time(),
        }
    }

    /// Starts the compute clock on the current thread.
    pub fn restart_clock(&mut self) {
        self.last = thread_cpu_time();
    }

    fn lap(&mut self) {
        let now = thread_cpu_time();
        let dt = (now - self.last).max(0.0);
        if dt > 0.0 {
            self.log.events.push(TraceEvent::Compute { seconds: dt });
        }
    }

    pub fn into_log(mut self) -> TraceLog {
        self.lap();
        self.log
    }

    pub fn log(&self) -> &TraceLog {
        &self.log
    }
}

impl<T: Transport> Transport for Traced<T> {
    fn role(&self) -> Role {
        self.inner.role()
    }

    fn send(&mut self, to: Role, frame: &Frame) -> Result<(), TransportError> {
        self.lap();
        let r = self.inner.send(to, frame);
        if r.is_ok() {
            self.log.events.push(TraceEvent::Send {
                to,
                bytes: frame.wire_len(),
                msg_type: frame.msg_type,
                step: frame.step,
            });
        }
        self.last = thread_cpu_time();
        r
    }

    fn recv(&mut self, from: Role) -> Result<Frame, TransportError> {
        self.lap();
        let r = self.inner.recv(from);
        if let Ok(f) = &r {
            self.log.events.push(TraceEvent::Recv {
                from,
                bytes: f.wire_len(),
                msg_type: f.msg_type,
                step: f.step,
            });
            if self.capture {
                self.log.received.push((from, f.clone()));
            }
        }
        self.last = thread_cpu_time();
        r
    }

    fn mark(&mut self, label: &str) {
        self.lap();
        self.log.events.push(TraceEvent::Mark { label: label.to_string() });
        self.last = thread_cpu_time();
    }
}
