//! Split-graph private training of vertically partitioned networks.
//!
//! Two clients hold disjoint feature columns of the same rows; client A also
//! holds the labels. The clients compute the first hidden layer jointly,
//! either over additive secret shares or under Paillier encryption, a server
//! runs the hidden stack on the result, and client A runs the prediction
//! head. [`harness`] drives whole experiments on top of the protocol.

pub mod fixedpoint;
pub mod harness;
pub mod secretshare;
pub mod neural;
pub mod paillier;
pub mod protocol;
pub mod transport;

pub use fixedpoint::{FixedPointCodec, Ring, RingElement};
pub use harness::{Dataset, ExperimentConfig, ExperimentReport, HarnessError};
pub use neural::{Activation, Mlp, OptimizerConfig, OptimizerKind, Tensor};
pub use protocol::{ProtocolError, ProtocolMode, TrainConfig};
pub use transport::{MsgType, NetworkConfig, Role};
