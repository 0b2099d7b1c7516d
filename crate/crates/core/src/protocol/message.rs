use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{PartitionPlan, ProtocolError, Result, TrainConfig};
use crate::fixedpoint::{Ring, RingMatrix};
use crate::neural::Tensor;
use crate::secretshare::decode_matrices;
use crate::transport::{Frame, Hello, MsgType, Role, Transport};

/// Body of every `Control` frame, serialized as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    Start(Hello),
    Config(SessionSetup),
    /// Batch order for one epoch, as indices into the training rows.
    EpochStart { epoch: usize, permutation: Vec<usize> },
    /// The test rows are scored in order after the epoch.
    EvalStart { epoch: usize },
    EpochReport(EpochMetrics),
    Stop { reason: String },
}

impl Control {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("control message serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| ProtocolError::Malformed("control", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSetup {
    pub config: TrainConfig,
    pub plan: PartitionPlan,
    pub train_rows: usize,
    pub test_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_auc: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_auc: Option<f64>,
}

/// Splits `0..n` (in `order`) into consecutive batches of at most `size`.
pub(crate) fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size.max(1))
}

pub(crate) fn tensor_payload(t: &Tensor) -> Vec<u8> {
    t.to_bytes()
}

pub(crate) fn tensor_from(what: &'static str, bytes: &[u8]) -> Result<Tensor> {
    let (t, rest) = Tensor::from_bytes(bytes).map_err(|e| ProtocolError::Malformed(what, e.to_string()))?;
    if !rest.is_empty() {
        return Err(ProtocolError::Malformed(what, format!("{} trailing bytes", rest.len())));
    }
    Ok(t)
}

pub(crate) fn matrices_from(what: &'static str, ring: Ring, bytes: &[u8], count: usize) -> Result<Vec<RingMatrix>> {
    let mats = decode_matrices(ring, bytes).map_err(|e| ProtocolError::Malformed(what, e.to_string()))?;
    if mats.len() != count {
        return Err(ProtocolError::Malformed(what, format!("{} matrices, expected {count}", mats.len())));
    }
    Ok(mats)
}

/// A role's view of the session: stamps outgoing frames and checks the
/// session id, type and step of incoming ones.
pub(crate) struct Endpoint<'a> {
    transport: &'a mut dyn Transport,
    session: u64,
    last_step: HashMap<Role, u64>,
}

impl<'a> Endpoint<'a> {
    pub fn new(transport: &'a mut dyn Transport, session: u64) -> Self {
        Endpoint {
            transport,
            session,
            last_step: HashMap::new(),
        }
    }

    pub fn role(&self) -> Role {
        self.transport.role()
    }

    pub fn mark(&mut self, label: &str) {
        self.transport.mark(label);
    }

    pub fn send(&mut self, to: Role, step: u64, msg_type: MsgType, payload: Vec<u8>) -> Result<()> {
        let frame = Frame::new(self.session, step, msg_type, payload);
        self.transport.send(to, &frame)?;
        Ok(())
    }

    pub fn send_control(&mut self, to: Role, step: u64, msg: &Control) -> Result<()> {
        self.send(to, step, MsgType::Control, msg.to_bytes())
    }

    fn next_frame(&mut self, from: Role) -> Result<Frame> {
        let frame = self.transport.recv(from)?;
        if frame.session_id != self.session {
            return Err(ProtocolError::SessionMismatch {
                from,
                expected: self.session,
                got: frame.session_id,
            });
        }
        let last = self.last_step.entry(from).or_insert(0);
        if frame.step < *last {
            return Err(ProtocolError::SequenceViolation {
                from,
                expected: frame.msg_type,
                expected_step: *last,
                got: frame.msg_type,
                got_step: frame.step,
            });
        }
        *last = frame.step;
        Ok(frame)
    }

    /// Receives the next frame from `from`, which must have type
    /// `msg_type` and step `step`. A `Stop` in its place ends the session.
    pub fn recv(&mut self, from: Role, step: u64, msg_type: MsgType) -> Result<Vec<u8>> {
        let frame = self.next_frame(from)?;
        if frame.msg_type == msg_type && frame.step == step {
            return Ok(frame.payload);
        }
        if frame.msg_type == MsgType::Control {
            if let Ok(Control::Stop { reason }) = Control::from_bytes(&frame.payload) {
                return Err(ProtocolError::Stopped(reason));
            }
        }
        Err(ProtocolError::SequenceViolation {
            from,
            expected: msg_type,
            expected_step: step,
            got: frame.msg_type,
            got_step: frame.step,
        })
    }

    pub fn recv_control(&mut self, from: Role) -> Result<Control> {
        let frame = self.next_frame(from)?;
        if frame.msg_type != MsgType::Control {
            return Err(ProtocolError::SequenceViolation {
                from,
                expected: MsgType::Control,
                expected_step: frame.step,
                got: frame.msg_type,
                got_step: frame.step,
            });
        }
        Control::from_bytes(&frame.payload)
    }

    /// Best-effort `Stop` to every other role.
    pub fn abort(&mut self, step: u64, reason: &str) {
        let me = self.role();
        let msg = Control::Stop {
            reason: format!("{me}: {reason}"),
        };
        for r in Role::ALL {
            if r != me {
                let _ = self.send_control(r, step, &msg);
            }
        }
    }
}
