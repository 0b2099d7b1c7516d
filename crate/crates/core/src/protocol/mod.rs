//! The four-role split training protocol.
//!
//! Clients A and B jointly compute the first affine layer over their private
//! feature blocks, either on additive shares or under Paillier encryption.
//! The server reconstructs or decrypts the first hidden layer, applies its
//! activation and runs the hidden stack. Client A, the label holder, owns the
//! prediction head. The coordinator distributes the configuration, the
//! per-epoch batch order and, in secret-sharing mode, Beaver triples.

mod client;
mod config;
mod coordinator;
mod first_hidden;
mod message;
mod plan;
mod server;
mod session;

#[cfg(test)]
mod tests;

use thiserror::Error;

use crate::fixedpoint::FixedPointError;
use crate::neural::NeuralError;
use crate::paillier::PaillierError;
use crate::secretshare::ShareError;
use crate::transport::{MsgType, Role, TransportError};

pub use client::{ClientInputs, ClientOutcome, FirstLayerState};
pub use config::{ProtocolMode, SgldTarget, TrainConfig};
pub use coordinator::{CoordinatorOutcome, EpochOrders};
pub use first_hidden::{
    decrypt_hidden, first_hidden_float, first_hidden_he, first_hidden_ss, he_partial, HeCiphertexts, SsFirstLayer,
};
pub use message::{Control, EpochMetrics, SessionSetup};
pub use plan::{init_partition, split_graph, ModelPartition, NetSpec, PartitionPlan};
pub use server::{ServerInputs, ServerOutcome};
pub use session::{run_inproc, run_role, run_session, RoleInputs, RoleOutcome, SessionData, SessionResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("row count mismatch: {0}")]
    RowCountMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("triples exhausted at step {0}")]
    TripleExhausted(u64),
    #[error("from {from}: expected {expected:?} at step {expected_step}, got {got:?} at step {got_step}")]
    SequenceViolation {
        from: Role,
        expected: MsgType,
        expected_step: u64,
        got: MsgType,
        got_step: u64,
    },
    #[error("frame from {from} carries session {got}, expected {expected}")]
    SessionMismatch { from: Role, expected: u64, got: u64 },
    #[error("malformed {0} payload: {1}")]
    Malformed(&'static str, String),
    #[error("session stopped: {0}")]
    Stopped(String),
    #[error("role {0} panicked")]
    RolePanicked(Role),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Share(#[from] ShareError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;
