//! Framed messaging between protocol roles: in-process channels, TCP
//! sockets, execution traces and a bandwidth/latency link simulator.

mod frame;
mod inproc;
pub mod sim;
pub mod tcp;
mod trace;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use frame::{Frame, FrameError, MsgType, HEADER_LEN, MAGIC, MAX_PAYLOAD};
pub use inproc::{inproc_mesh, InProcTransport};
pub use sim::{parse_bandwidth, replay, LinkReport, LinkStats, NetworkConfig, ReplayResult, SimError, SimLink};
pub use tcp::{Hello, TcpOptions, TcpTransport};
pub use trace::{thread_cpu_time, TraceEvent, TraceLog, Traced};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Coordinator,
    Server,
    ClientA,
    ClientB,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Coordinator, Role::Server, Role::ClientA, Role::ClientB];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Role> {
        Role::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Coordinator => "coordinator",
            Role::Server => "server",
            Role::ClientA => "client_a",
            Role::ClientB => "client_b",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown role `{s}`"))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("peer {0} closed the connection")]
    PeerClosed(Role),
    #[error("timed out waiting for {0}")]
    Timeout(Role),
    #[error("no link to {0}")]
    NoRoute(Role),
    #[error("connection refused: {0}")]
    ConnectRefused(String),
    #[error("handshake timed out")]
    HandshakeTimeout,
    #[error("handshake rejected: {0}")]
    HandshakeRejected(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Point-to-point frame delivery for one role. Frames between any ordered
/// pair of roles arrive in the order they were sent.
pub trait Transport: Send {
    fn role(&self) -> Role;

    fn send(&mut self, to: Role, frame: &Frame) -> Result<(), TransportError>;

    /// Blocks until the next frame from `from` arrives.
    fn recv(&mut self, from: Role) -> Result<Frame, TransportError>;

    /// Labels a point in the role's timeline. Only tracing transports keep
    /// marks.
    fn mark(&mut self, _label: &str) {}
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn role(&self) -> Role {
        (**self).role()
    }

    fn send(&mut self, to: Role, frame: &Frame) -> Result<(), TransportError> {
        (**self).send(to, frame)
    }

    fn recv(&mut self, from: Role) -> Result<Frame, TransportError> {
        (**self).recv(from)
    }

    fn mark(&mut self, label: &str) {
        (**self).mark(label)
    }
}
