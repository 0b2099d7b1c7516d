use serde::{Deserialize, Serialize};

use super::{activation::sigmoid, AffineLayer, NeuralError, Tensor};

pub const PROB_FLOOR: f64 = 1e-12;

/// Output transform of the prediction head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// One logit per class.
    Softmax,
    /// A single logit for class 1.
    Sigmoid,
}

impl HeadKind {
    pub fn for_outputs(outputs: usize) -> Self {
        if outputs == 1 {
            HeadKind::Sigmoid
        } else {
            HeadKind::Softmax
        }
    }
}

pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let cols = logits.cols().max(1);
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Class probabilities from logits.
pub fn head_probabilities(logits: &Tensor, kind: HeadKind) -> Tensor {
    match kind {
        HeadKind::Softmax => softmax(logits),
        HeadKind::Sigmoid => logits.map(sigmoid),
    }
}

/// `δ(h_L θ_y + b_y)`.
pub fn predict_head(h_last: &Tensor, head: &AffineLayer, kind: HeadKind) -> Result<Tensor, NeuralError> {
    if h_last.cols() != head.inputs() {
        return Err(NeuralError::DimensionMismatch(format!(
            "head expects {} features, got {}",
            head.inputs(),
            h_last.cols()
        )));
    }
    let (_, logits) = head.forward(h_last)?;
    Ok(head_probabilities(&logits, kind))
}

/// Probability of class 1 per row.
pub fn positive_scores(probs: &Tensor, kind: HeadKind) -> Vec<f64> {
    match kind {
        HeadKind::Sigmoid => probs.data().to_vec(),
        HeadKind::Softmax => (0..probs.rows()).map(|r| probs.get(r, 1)).collect(),
    }
}

fn check_labels(rows: usize, labels: &[usize]) -> Result<(), NeuralError> {
    if labels.len() != rows {
        return Err(NeuralError::DimensionMismatch(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    Ok(())
}

/// Mean negative log-likelihood of probability rows, floored at
/// [`PROB_FLOOR`].
pub fn cross_entropy(probs: &Tensor, labels: &[usize], kind: HeadKind) -> Result<f64, NeuralError> {
    check_labels(probs.rows(), labels)?;
    let n = labels.len().max(1) as f64;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            let p = match kind {
                HeadKind::Softmax => probs.get(r, y),
                HeadKind::Sigmoid if y == 1 => probs.get(r, 0),
                HeadKind::Sigmoid => 1.0 - probs.get(r, 0),
            };
            -p.max(PROB_FLOOR).ln()
        })
        .sum();
    Ok(total / n)
}

/// Fused loss on logits: mean NLL plus the batch-summed gradient
/// `probs - onehot(y)` with respect to the logits.
pub fn loss_and_grad(logits: &Tensor, labels: &[usize], kind: HeadKind) -> Result<(f64, Tensor), NeuralError> {
    check_labels(logits.rows(), labels)?;
    let probs = head_probabilities(logits, kind);
    let n = labels.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        match kind {
            HeadKind::Softmax => {
                if y >= logits.cols() {
                    return Err(NeuralError::DimensionMismatch(format!("label {y} out of range")));
                }
                let row = logits.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += (lse - row[y]).min(-PROB_FLOOR.ln());
                grad.set(r, y, grad.get(r, y) - 1.0);
            }
            HeadKind::Sigmoid => {
                let z = logits.get(r, 0);
                // -log σ(z) = softplus(-z)
                let s = if y == 1 { -z } else { z };
                let nll = s.max(0.0) + (-s.abs()).exp().ln_1p();
                total += nll.min(-PROB_FLOOR.ln());
                grad.set(r, 0, grad.get(r, 0) - y as f64);
            }
        }
    }
    Ok((total / n, grad))
}
