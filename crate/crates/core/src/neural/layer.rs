use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, NeuralError, Tensor};

/// `h_out = f(h_in * weights + bias)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// Batch-summed parameter gradients plus the gradient for the layer input.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
}

impl AffineLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self, NeuralError> {
        if bias.shape() != (1, weights.cols()) {
            return Err(NeuralError::DimensionMismatch(format!(
                "bias {:?} for weights {:?}",
                bias.shape(),
                weights.shape()
            )));
        }
        Ok(AffineLayer {
            weights,
            bias,
            activation,
        })
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        AffineLayer {
            weights: Tensor::from_vec(inputs, outputs, data).unwrap(),
            bias: Tensor::zeros(1, outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    /// `x * weights + bias`.
    pub fn pre_activation(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        x.matmul(&self.weights)?.add_row(&self.bias)
    }

    pub fn activate(&self, z: &Tensor) -> Tensor {
        let f = self.activation;
        z.map(|v| f.apply(v))
    }

    /// Returns `(z, f(z))`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor), NeuralError> {
        let z = self.pre_activation(x)?;
        let h = self.activate(&z);
        Ok((z, h))
    }

    /// `dL/dz` from `dL/dh`.
    pub fn pre_gradient(&self, z: &Tensor, grad_out: &Tensor) -> Result<Tensor, NeuralError> {
        let f = self.activation;
        grad_out
            .zip_map(z, |g, zv| g * f.derivative(zv))
            .map_err(|_| NeuralError::StaleCache("activation gradient shape".into()))
    }

    /// Gradients given the layer input `x` and `dL/dz`.
    pub fn backward_pre(&self, x: &Tensor, grad_pre: &Tensor) -> Result<LayerGrads, NeuralError> {
        if x.rows() != grad_pre.rows() || x.cols() != self.inputs() || grad_pre.cols() != self.outputs() {
            return Err(NeuralError::StaleCache(format!(
                "input {:?}, gradient {:?}, layer {}x{}",
                x.shape(),
                grad_pre.shape(),
                self.inputs(),
                self.outputs()
            )));
        }
        Ok(LayerGrads {
            weights: x.tr_matmul(grad_pre)?,
            bias: grad_pre.sum_rows(),
            input: grad_pre.matmul_tr(&self.weights)?,
        })
    }

    pub fn backward(&self, x: &Tensor, z: &Tensor, grad_out: &Tensor) -> Result<LayerGrads, NeuralError> {
        let dz = self.pre_gradient(z, grad_out)?;
        self.backward_pre(x, &dz)
    }
}
