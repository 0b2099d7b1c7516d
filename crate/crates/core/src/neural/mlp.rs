use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, AffineLayer, LayerGrads, NeuralError, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<AffineLayer>,
}

/// Inputs and pre-activations of every layer from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub inputs: Vec<Tensor>,
    pub pre: Vec<Tensor>,
}

impl Mlp {
    pub fn new(layers: Vec<AffineLayer>) -> Result<Self, NeuralError> {
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(NeuralError::DimensionMismatch(format!(
                    "layer widths {} -> {}",
                    pair[0].outputs(),
                    pair[1].inputs()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    /// `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the last
    /// layer is linear.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, rng: &mut R) -> Self {
        let n = dims.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { hidden };
                AffineLayer::init(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.first().map(|l| vec![l.inputs()]).unwrap_or_default();
        d.extend(self.layers.iter().map(AffineLayer::outputs));
        d
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache), NeuralError> {
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for layer in &self.layers {
            if h.cols() != layer.inputs() {
                return Err(NeuralError::DimensionMismatch(format!(
                    "input width {} for layer of {}",
                    h.cols(),
                    layer.inputs()
                )));
            }
            let (z, out) = layer.forward(&h)?;
            cache.inputs.push(std::mem::replace(&mut h, out));
            cache.pre.push(z);
        }
        Ok((h, cache))
    }

    pub fn output(&self, x: &Tensor) -> Result<Tensor, NeuralError> {
        Ok(self.forward(x)?.0)
    }

    /// Returns per-layer gradients and `dL/dx`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Tensor) -> Result<(Vec<LayerGrads>, Tensor), NeuralError> {
        if cache.inputs.len() != self.layers.len() || cache.pre.len() != self.layers.len() {
            return Err(NeuralError::StaleCache("cache depth differs from network".into()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let lg = layer.backward(&cache.inputs[i], &cache.pre[i], &g)?;
            g = lg.input.clone();
            grads.push(lg);
        }
        grads.reverse();
        Ok((grads, g))
    }
}
