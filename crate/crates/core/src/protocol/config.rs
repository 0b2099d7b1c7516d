use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{split_graph, NetSpec, PartitionPlan, ProtocolError, Result};
use crate::neural::{Activation, OptimizerConfig};
use crate::paillier::{min_key_bits, DEFAULT_KEY_BITS};
use crate::transport::Role;

/// How the clients compute the first hidden layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolMode {
    /// Additive secret sharing with Beaver triples.
    Ss,
    /// Paillier encryption of the client partial products.
    He,
}

impl std::fmt::Display for ProtocolMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProtocolMode::Ss => "ss",
            ProtocolMode::He => "he",
        })
    }
}

impl std::str::FromStr for ProtocolMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ss" => Ok(ProtocolMode::Ss),
            "he" => Ok(ProtocolMode::He),
            other => Err(format!("unknown protocol mode `{other}`")),
        }
    }
}

/// Parameter blocks that take Langevin noise when the optimizer is SGLD.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgldTarget {
    /// The server stack and the first-layer bias.
    Server,
    /// The prediction head at client A.
    Head,
    /// The first-layer weights held by the clients.
    Clients,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub protocol_mode: ProtocolMode,
    /// Hidden layer widths; the first one is computed jointly by the clients.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default = "default_outputs")]
    pub outputs: usize,
    pub optimizer: OptimizerConfig,
    /// Number of epochs `T`.
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_ring_bits")]
    pub ring_bits: u32,
    #[serde(default = "default_frac_bits")]
    pub frac_bits: u32,
    /// Fractional bits of the public gradient factor in the shared update.
    #[serde(default = "default_grad_frac_bits")]
    pub grad_frac_bits: u32,
    #[serde(default = "default_key_bits")]
    pub key_bits: u64,
    /// Pack several fixed-point values into each Paillier plaintext.
    #[serde(default)]
    pub he_packing: bool,
    #[serde(default = "default_sgld_targets")]
    pub sgld_targets: Vec<SgldTarget>,
    /// Stop after the first epoch whose mean training loss is below this.
    #[serde(default)]
    pub early_stop_loss: Option<f64>,
    /// Score the test rows after every epoch.
    #[serde(default = "default_true")]
    pub evaluate: bool,
    /// Keep the first hidden layer the server sees for the test rows.
    #[serde(default)]
    pub record_hidden: bool,
    #[serde(default = "default_session_id")]
    pub session_id: u64,
    #[serde(default)]
    pub endpoints: BTreeMap<Role, String>,
    /// Runs the first layer in plain floating point. Test use only.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub float_path: bool,
}

fn default_outputs() -> usize {
    2
}

fn default_ring_bits() -> u32 {
    64
}

fn default_frac_bits() -> u32 {
    16
}

fn default_grad_frac_bits() -> u32 {
    24
}

fn default_key_bits() -> u64 {
    DEFAULT_KEY_BITS
}

fn default_sgld_targets() -> Vec<SgldTarget> {
    vec![SgldTarget::Server]
}

fn default_true() -> bool {
    true
}

fn default_session_id() -> u64 {
    1
}

impl TrainConfig {
    pub fn new(protocol_mode: ProtocolMode, hidden: Vec<usize>, optimizer: OptimizerConfig, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            protocol_mode,
            hidden,
            activation: Activation::Sigmoid,
            outputs: default_outputs(),
            optimizer,
            epochs,
            seed,
            ring_bits: default_ring_bits(),
            frac_bits: default_frac_bits(),
            grad_frac_bits: default_grad_frac_bits(),
            key_bits: default_key_bits(),
            he_packing: false,
            sgld_targets: default_sgld_targets(),
            early_stop_loss: None,
            evaluate: true,
            record_hidden: false,
            session_id: default_session_id(),
            endpoints: BTreeMap::new(),
            float_path: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ProtocolError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("T must be at least 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths {:?}", self.hidden));
        }
        if self.outputs == 0 {
            return bad("outputs must be positive".into());
        }
        let lr = self.optimizer.learning_rate;
        if !(lr.is_finite() && lr > 0.0) {
            return bad(format!("learning rate {lr}"));
        }
        if self.optimizer.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(2..=64).contains(&self.ring_bits) || self.frac_bits == 0 || 2 * self.frac_bits >= self.ring_bits {
            return bad(format!("ring {} bits with {} fractional bits", self.ring_bits, self.frac_bits));
        }
        if self.grad_frac_bits == 0 || self.frac_bits + self.grad_frac_bits >= self.ring_bits {
            return bad(format!("gradient fractional bits {}", self.grad_frac_bits));
        }
        if self.protocol_mode == ProtocolMode::He && !self.float_path {
            if self.key_bits < min_key_bits() || self.key_bits % 2 != 0 {
                return bad(format!("key size {} (minimum {})", self.key_bits, min_key_bits()));
            }
            if self.ring_bits != 64 {
                return bad("HE mode requires a 64-bit ring".into());
            }
        }
        if let Some(t) = self.early_stop_loss {
            if !t.is_finite() {
                return bad(format!("early-stop threshold {t}"));
            }
        }
        Ok(())
    }

    /// The split of `[d_a + d_b, hidden.., outputs]` for these input blocks.
    pub fn plan(&self, d_a: usize, d_b: usize) -> Result<PartitionPlan> {
        let mut dims = vec![d_a + d_b];
        dims.extend(&self.hidden);
        dims.push(self.outputs);
        split_graph(
            &NetSpec {
                dims,
                activation: self.activation,
            },
            d_a,
            d_b,
        )
    }

    pub fn langevin_on(&self, target: SgldTarget) -> bool {
        self.sgld_targets.contains(&target)
    }
}
