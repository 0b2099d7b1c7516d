use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ProtocolError, Result};
use crate::neural::{Activation, AffineLayer, Mlp, Tensor};

/// Layer widths `[d, h_1, ..., h_k, out]` and the hidden activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub dims: Vec<usize>,
    pub activation: Activation,
}

/// Where every parameter block lives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub d_a: usize,
    pub d_b: usize,
    /// Width `m` of the jointly computed first hidden layer.
    pub first_width: usize,
    /// `[h_1, ..., h_k]`; the server runs `k - 1` affine layers.
    pub server_dims: Vec<usize>,
    pub head_outputs: usize,
    pub activation: Activation,
    /// Set when the server stack has no layers and only applies the
    /// first-layer activation.
    pub server_identity: bool,
}

impl PartitionPlan {
    pub fn input_width(&self) -> usize {
        self.d_a + self.d_b
    }

    pub fn head_inputs(&self) -> usize {
        *self.server_dims.last().unwrap()
    }

    /// Widths of the equivalent monolithic network.
    pub fn full_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_width()];
        dims.extend(&self.server_dims);
        dims.push(self.head_outputs);
        dims
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| ProtocolError::Malformed("plan", e.to_string()))
    }
}

/// Assigns the first affine layer to the clients, the middle stack to the
/// server and the last layer to client A.
pub fn split_graph(spec: &NetSpec, d_a: usize, d_b: usize) -> Result<PartitionPlan> {
    let dims = &spec.dims;
    if dims.len() < 3 {
        return Err(ProtocolError::InvalidSpec(format!("{dims:?} has no hidden layer")));
    }
    if dims.contains(&0) {
        return Err(ProtocolError::InvalidSpec(format!("zero width in {dims:?}")));
    }
    if d_a == 0 || d_b == 0 || d_a + d_b != dims[0] {
        return Err(ProtocolError::InvalidSpec(format!("input split {d_a}|{d_b} for width {}", dims[0])));
    }
    let server_dims = dims[1..dims.len() - 1].to_vec();
    Ok(PartitionPlan {
        d_a,
        d_b,
        first_width: dims[1],
        server_identity: server_dims.len() == 1,
        server_dims,
        head_outputs: dims[dims.len() - 1],
        activation: spec.activation,
    })
}

/// Parameters of one split model, grouped by owner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPartition {
    /// `d_A x m`, client A.
    pub theta_a: Tensor,
    /// `d_B x m`, client B.
    pub theta_b: Tensor,
    /// Bias and activation of the first layer, applied by the server.
    pub first_bias: Tensor,
    pub first_activation: Activation,
    pub theta_s: Mlp,
    /// Prediction head, client A.
    pub theta_y: AffineLayer,
}

impl ModelPartition {
    pub fn from_mlp(mlp: &Mlp, plan: &PartitionPlan) -> Result<Self> {
        if mlp.dims() != plan.full_dims() {
            return Err(ProtocolError::ShapeMismatch(format!(
                "network {:?} for plan {:?}",
                mlp.dims(),
                plan.full_dims()
            )));
        }
        let first = &mlp.layers[0];
        let last = mlp.layers.len() - 1;
        Ok(ModelPartition {
            theta_a: first.weights.row_block(0, plan.d_a),
            theta_b: first.weights.row_block(plan.d_a, plan.input_width()),
            first_bias: first.bias.clone(),
            first_activation: first.activation,
            theta_s: Mlp::new(mlp.layers[1..last].to_vec())?,
            theta_y: mlp.layers[last].clone(),
        })
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        let first = AffineLayer::new(self.theta_a.vconcat(&self.theta_b)?, self.first_bias.clone(), self.first_activation)?;
        let mut layers = vec![first];
        layers.extend(self.theta_s.layers.iter().cloned());
        layers.push(self.theta_y.clone());
        Ok(Mlp::new(layers)?)
    }
}

/// Initial parameters for `plan`, identical to a monolithic network
/// initialized from `seed`.
pub fn init_partition(plan: &PartitionPlan, seed: u64) -> ModelPartition {
    let mlp = init_mlp(plan, seed);
    ModelPartition::from_mlp(&mlp, plan).expect("freshly initialized network matches its plan")
}

pub(crate) fn init_mlp(plan: &PartitionPlan, seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mlp::init(&plan.full_dims(), plan.activation, &mut rng)
}
