use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AffineLayer, LayerGrads, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Sgld,
}

/// What the SGLD drift term multiplies: the batch-mean gradient, or the
/// gradient of the loss summed over all `n` training rows, estimated from
/// the batch as `n` times the mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SgldGradient {
    #[default]
    Mean,
    Dataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default, skip_serializing_if = "is_mean")]
    pub sgld_gradient: SgldGradient,
}

fn is_mean(g: &SgldGradient) -> bool {
    *g == SgldGradient::Mean
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, batch_size: usize) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            batch_size,
            noise_seed: 0,
            sgld_gradient: SgldGradient::Mean,
        }
    }

    pub fn sgld(learning_rate: f64, batch_size: usize, noise_seed: u64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgld,
            learning_rate,
            batch_size,
            noise_seed,
            sgld_gradient: SgldGradient::Mean,
        }
    }
}

/// `θ ← θ - (α / |B|) g`, with `g` summed over the batch.
pub fn sgd_step(theta: &mut [f64], grad_sum: &[f64], lr: f64, batch: usize) {
    assert_eq!(theta.len(), grad_sum.len(), "parameter/gradient length");
    let s = lr / batch as f64;
    for (t, g) in theta.iter_mut().zip(grad_sum) {
        *t -= s * g;
    }
}

/// `θ ← θ - (α/2 · mean(g) + η)` with `η` drawn from `noise`.
pub fn sgld_step_with(theta: &mut [f64], grad_sum: &[f64], lr: f64, batch: usize, mut noise: impl FnMut() -> f64) {
    assert_eq!(theta.len(), grad_sum.len(), "parameter/gradient length");
    let s = lr / 2.0 / batch as f64;
    for (t, g) in theta.iter_mut().zip(grad_sum) {
        *t -= s * g + noise();
    }
}

/// SGLD step with `η ~ N(0, α I)`.
pub fn sgld_step<R: Rng + ?Sized>(theta: &mut [f64], grad_sum: &[f64], lr: f64, batch: usize, rng: &mut R) {
    let normal = Normal::new(0.0, lr.sqrt()).expect("learning rate must be positive");
    sgld_step_with(theta, grad_sum, lr, batch, || normal.sample(rng));
}

/// Per-role optimizer state. `noisy` is false for parameter blocks that
/// SGLD is not applied to; those take plain SGD steps.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    noisy: bool,
    rng: ChaCha8Rng,
    dataset_rows: usize,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, noisy: bool, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
        rng.set_stream(stream);
        Optimizer {
            cfg,
            noisy,
            rng,
            dataset_rows: 0,
        }
    }

    /// Training-set size for [`SgldGradient::Dataset`]. Unset, the batch
    /// stands in for the training set.
    pub fn with_dataset_rows(mut self, rows: usize) -> Self {
        self.dataset_rows = rows;
        self
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn is_langevin(&self) -> bool {
        self.noisy && self.cfg.kind == OptimizerKind::Sgld
    }

    pub fn step(&mut self, theta: &mut Tensor, grad_sum: &Tensor, batch: usize) {
        assert_eq!(theta.shape(), grad_sum.shape(), "parameter/gradient shape");
        if self.is_langevin() {
            let s = self.gradient_scale(batch);
            let normal = Normal::new(0.0, self.cfg.learning_rate.sqrt()).expect("learning rate must be positive");
            let rng = &mut self.rng;
            for (t, g) in theta.data_mut().iter_mut().zip(grad_sum.data()) {
                *t -= s * g + normal.sample(rng);
            }
        } else {
            sgd_step(theta.data_mut(), grad_sum.data(), self.cfg.learning_rate, batch);
        }
    }

    pub fn update_layer(&mut self, layer: &mut AffineLayer, grads: &LayerGrads, batch: usize) {
        self.step(&mut layer.weights, &grads.weights, batch);
        self.step(&mut layer.bias, &grads.bias, batch);
    }

    /// Scale applied to a batch-summed gradient: `α/|B|` (SGD), `α/(2|B|)`
    /// (SGLD on the mean) or `α n/(2|B|)` (SGLD on the training-set sum).
    pub fn gradient_scale(&self, batch: usize) -> f64 {
        if !self.is_langevin() {
            return self.cfg.learning_rate / batch as f64;
        }
        match self.cfg.sgld_gradient {
            SgldGradient::Mean => self.cfg.learning_rate / 2.0 / batch as f64,
            SgldGradient::Dataset => {
                let n = if self.dataset_rows == 0 { batch } else { self.dataset_rows };
                self.cfg.learning_rate / 2.0 * (n as f64 / batch as f64)
            }
        }
    }

    /// One `N(0, α)` draw per element, or zeros without Langevin noise.
    pub fn noise(&mut self, rows: usize, cols: usize) -> Tensor {
        if !self.is_langevin() {
            return Tensor::zeros(rows, cols);
        }
        let normal = Normal::new(0.0, self.cfg.learning_rate.sqrt()).expect("learning rate must be positive");
        let data = (0..rows * cols).map(|_| normal.sample(&mut self.rng)).collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }
}
