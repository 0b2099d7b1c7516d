use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train_plaintext, Dataset, HarnessError, Result, SplitSpec};
use crate::neural::{auc, sigmoid, OptimizerKind, Tensor};
use crate::protocol::{init_partition, run_inproc, SessionData, TrainConfig};

fn default_shadow() -> f64 {
    0.5
}

fn default_quarter() -> f64 {
    0.25
}

/// How the rows are divided between the attacker and the target.
///
/// The shadow rows train the attacker's copy of the model; its hidden
/// features on the attack-train rows train the classifier, which is then
/// scored on the target's hidden features for the attack-test rows. The
/// target trains on the shadow and attack-train rows and is tested on the
/// attack-test rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSetup {
    #[serde(default = "default_shadow")]
    pub shadow_fraction: f64,
    #[serde(default = "default_quarter")]
    pub attack_train_fraction: f64,
    #[serde(default = "default_quarter")]
    pub attack_test_fraction: f64,
    /// Binarized at its median.
    pub property_column: String,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

fn default_lr() -> f64 {
    0.1
}

fn default_epochs() -> usize {
    500
}

impl AttackSetup {
    pub fn new(property_column: impl Into<String>) -> Self {
        AttackSetup {
            shadow_fraction: default_shadow(),
            attack_train_fraction: default_quarter(),
            attack_test_fraction: default_quarter(),
            property_column: property_column.into(),
            learning_rate: default_lr(),
            epochs: default_epochs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.shadow_fraction, self.attack_train_fraction, self.attack_test_fraction];
        if f.iter().any(|x| !(*x > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(HarnessError::InvalidSpec(format!("attack fractions {f:?} must be positive and sum to 1")));
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 {
            return Err(HarnessError::InvalidSpec("attack classifier needs lr > 0 and epochs > 0".into()));
        }
        Ok(())
    }

    /// Row counts `(shadow, attack_train, attack_test)` for `n` rows.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let s = (self.shadow_fraction * n as f64).floor() as usize;
        let t = (self.attack_train_fraction * n as f64).floor() as usize;
        (s, t, n - s - t)
    }
}

/// `v > median(values)`. Errors when that leaves one class empty.
pub fn binarize_median(name: &str, values: &[f64]) -> Result<Vec<bool>> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return Err(HarnessError::DegenerateProperty(name.into()));
    }
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let out: Vec<bool> = values.iter().map(|&v| v > median).collect();
    if out.iter().all(|&b| b) || out.iter().all(|&b| !b) {
        return Err(HarnessError::DegenerateProperty(name.into()));
    }
    Ok(out)
}

/// Binary logistic regression fitted by full-batch gradient descent on the
/// mean log-loss, over inputs standardized with the training statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl LogisticRegression {
    pub fn fit(x: &Tensor, y: &[bool], lr: f64, epochs: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 || n != y.len() {
            return Err(HarnessError::InvalidSpec(format!("{n} rows with {} labels", y.len())));
        }
        let mut means = vec![0.0; d];
        let mut stds = vec![1.0; d];
        for c in 0..d {
            let m = (0..n).map(|r| x.get(r, c)).sum::<f64>() / n as f64;
            let v = (0..n).map(|r| (x.get(r, c) - m).powi(2)).sum::<f64>() / n as f64;
            means[c] = m;
            stds[c] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        let mut model = LogisticRegression {
            weights: vec![0.0; d],
            bias: 0.0,
            means,
            stds,
        };
        let z = model.standardize(x);
        for _ in 0..epochs {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (r, &label) in y.iter().enumerate() {
                let row = z.row(r);
                let p = sigmoid(model.bias + row.iter().zip(&model.weights).map(|(a, w)| a * w).sum::<f64>());
                let err = p - f64::from(label);
                gb += err;
                for (g, a) in gw.iter_mut().zip(row) {
                    *g += err * a;
                }
            }
            model.bias -= lr * gb / n as f64;
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= lr * g / n as f64;
            }
        }
        Ok(model)
    }

    fn standardize(&self, x: &Tensor) -> Tensor {
        let mut z = x.clone();
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                z.set(r, c, (x.get(r, c) - self.means[c]) / self.stds[c]);
            }
        }
        z
    }

    pub fn predict(&self, x: &Tensor) -> Vec<f64> {
        let z = self.standardize(x);
        (0..z.rows())
            .map(|r| sigmoid(self.bias + z.row(r).iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub property_column: String,
    pub shadow_rows: usize,
    pub attack_train_rows: usize,
    pub attack_test_rows: usize,
    /// Test AUC of the target model on its prediction task.
    pub task_auc: f64,
    pub attack_auc: f64,
    /// The same attack with the property permuted across rows, for both
    /// fitting and scoring.
    pub shuffled_attack_auc: f64,
}

fn blocks(ds: &Dataset, rows: &[usize], cols: &(Vec<usize>, Vec<usize>)) -> (Tensor, Tensor, Vec<usize>) {
    let x = ds.features.select_rows(rows);
    (x.select_cols(&cols.0), x.select_cols(&cols.1), rows.iter().map(|&r| ds.labels[r]).collect())
}

/// Trains the target with the secure protocol, recording the first hidden
/// layer the server sees for the attack-test rows, and attacks it with a
/// classifier fitted on a shadow model's hidden features.
pub fn leakage_attack(
    cfg: &TrainConfig,
    ds: &Dataset,
    split: &SplitSpec,
    setup: &AttackSetup,
) -> Result<AttackReport> {
    setup.validate()?;
    let values = ds
        .column(&setup.property_column)
        .ok_or_else(|| HarnessError::InvalidSpec(format!("unknown property column `{}`", setup.property_column)))?;
    let property = binarize_median(&setup.property_column, &values)?;
    let cols = split.assign(&ds.columns)?;
    let order = ds.shuffled_rows(cfg.seed);
    let (n_shadow, n_train, n_test) = setup.sizes(ds.rows());
    if n_shadow == 0 || n_train == 0 || n_test == 0 {
        return Err(HarnessError::InvalidSpec(format!("{} rows are too few for the attack split", ds.rows())));
    }
    let shadow_rows = &order[..n_shadow];
    let train_rows = &order[n_shadow..n_shadow + n_train];
    let test_rows = &order[n_shadow + n_train..];

    // target
    let mut target_cfg = cfg.clone();
    target_cfg.record_hidden = true;
    target_cfg.evaluate = true;
    let (a_train, b_train, y_train) = blocks(ds, &order[..n_shadow + n_train], &cols);
    let (a_test, b_test, y_test) = blocks(ds, test_rows, &cols);
    let target_data = SessionData {
        a_train,
        a_test,
        b_train,
        b_test,
        y_train,
        y_test,
    };
    let plan = target_cfg.plan(cols.0.len(), cols.1.len())?;
    let init = init_partition(&plan, cfg.seed);
    let res = run_inproc(&target_cfg, &plan, &target_data, &init, false)?;
    let task_auc = res.final_test_auc().unwrap_or(f64::NAN);
    let target_hidden = res
        .server
        .hidden
        .clone()
        .ok_or_else(|| HarnessError::InvalidSpec("server recorded no hidden features".into()))?;

    // shadow: same architecture, initialization and hyperparameters, its own
    // noise draws
    let mut shadow_cfg = cfg.clone();
    shadow_cfg.evaluate = false;
    shadow_cfg.optimizer.noise_seed = cfg.optimizer.noise_seed.wrapping_add(0x5eed);
    let (a, b, y) = blocks(ds, shadow_rows, &cols);
    let (ta, tb, ty) = blocks(ds, train_rows, &cols);
    let shadow_data = SessionData {
        a_train: a,
        b_train: b,
        y_train: y,
        a_test: ta.clone(),
        b_test: tb.clone(),
        y_test: ty,
    };
    let shadow = train_plaintext(&shadow_cfg, &shadow_data, &init)?.model;
    let mut shadow_hidden = ta.matmul(&shadow.theta_a)?;
    shadow_hidden.matmul_acc(&tb, &shadow.theta_b)?;

    let fit_labels: Vec<bool> = train_rows.iter().map(|&r| property[r]).collect();
    let test_labels: Vec<bool> = test_rows.iter().map(|&r| property[r]).collect();
    let clf = LogisticRegression::fit(&shadow_hidden, &fit_labels, setup.learning_rate, setup.epochs)?;
    let attack_auc = auc(&clf.predict(&target_hidden), &test_labels)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut shuffled_fit = fit_labels.clone();
    shuffled_fit.shuffle(&mut rng);
    let mut shuffled_test = test_labels.clone();
    shuffled_test.shuffle(&mut rng);
    let null = LogisticRegression::fit(&shadow_hidden, &shuffled_fit, setup.learning_rate, setup.epochs)?;
    let shuffled_attack_auc = auc(&null.predict(&target_hidden), &shuffled_test)?;

    Ok(AttackReport {
        optimizer: cfg.optimizer.kind,
        seed: cfg.seed,
        property_column: setup.property_column.clone(),
        shadow_rows: n_shadow,
        attack_train_rows: n_train,
        attack_test_rows: n_test,
        task_auc,
        attack_auc,
        shuffled_attack_auc,
    })
}
