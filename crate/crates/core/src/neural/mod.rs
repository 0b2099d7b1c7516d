//! Dense feed-forward networks with exact backpropagation, SGD and SGLD.

mod activation;
pub mod checkpoint;
mod layer;
mod loss;
mod metrics;
mod mlp;
mod optim;
mod tensor;

use thiserror::Error;

pub use activation::{sigmoid, Activation};
pub use layer::{AffineLayer, LayerGrads};
pub use loss::{
    cross_entropy, head_probabilities, loss_and_grad, positive_scores, predict_head, softmax, HeadKind,
    PROB_FLOOR,
};
pub use metrics::{auc, auc_from_classes};
pub use mlp::{ForwardCache, Mlp};
pub use optim::{sgd_step, sgld_step, sgld_step_with, Optimizer, OptimizerConfig, OptimizerKind, SgldGradient};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("stale forward cache: {0}")]
    StaleCache(String),
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("malformed data: {0}")]
    Malformed(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[cfg(test)]
mod tests;
