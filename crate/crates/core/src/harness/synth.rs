use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, HarnessError, Result, SplitSpec};
use crate::neural::Tensor;

pub const LABEL_COLUMN: &str = "label";

/// Two Gaussian blobs per class over the informative columns of both
/// clients, plus a skewed `amount` column at client A driven by a latent
/// property that also leaks into A's other columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub rows: usize,
    pub features_a: usize,
    pub features_b: usize,
    /// Informative columns per client.
    #[serde(default = "default_informative")]
    pub informative: usize,
    /// Spread of the blob centres.
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Weight of the latent property in A's non-informative columns.
    #[serde(default = "default_property_strength")]
    pub property_strength: f64,
    #[serde(default = "default_property_column")]
    pub property_column: String,
    pub seed: u64,
}

fn default_informative() -> usize {
    6
}

fn default_separation() -> f64 {
    0.6
}

fn default_property_strength() -> f64 {
    1.0
}

fn default_property_column() -> String {
    "amount".into()
}

impl SynthConfig {
    pub fn new(rows: usize, features_a: usize, features_b: usize, seed: u64) -> Self {
        SynthConfig {
            rows,
            features_a,
            features_b,
            informative: default_informative(),
            separation: default_separation(),
            property_strength: default_property_strength(),
            property_column: default_property_column(),
            seed,
        }
    }

    /// The shipped desk-scale table: 20 000 rows, 14 + 14 columns.
    pub fn desk_scale(seed: u64) -> Self {
        SynthConfig::new(20_000, 14, 14, seed)
    }

    pub fn columns(&self) -> (Vec<String>, Vec<String>) {
        let mut a: Vec<String> = (0..self.features_a - 1).map(|i| format!("a{i}")).collect();
        a.push(self.property_column.clone());
        let b = (0..self.features_b).map(|i| format!("b{i}")).collect();
        (a, b)
    }

    /// The split that hands the generated columns back to their owners.
    pub fn split(&self) -> SplitSpec {
        SplitSpec::Columns { a: self.columns().0 }
    }

    fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.features_a < 1 || self.features_b < 1 {
            return Err(HarnessError::InvalidSpec(format!(
                "synthetic table needs 2+ rows and a column per client, got {} rows, {}+{} columns",
                self.rows, self.features_a, self.features_b
            )));
        }
        if !(self.separation >= 0.0 && self.property_strength >= 0.0) {
            return Err(HarnessError::InvalidSpec("negative separation or property strength".into()));
        }
        if self.property_column == LABEL_COLUMN {
            return Err(HarnessError::InvalidSpec("property column clashes with the label".into()));
        }
        Ok(())
    }

    /// Raw values in column order A then B, and the labels.
    fn raw(&self) -> Result<(Tensor, Vec<usize>)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (d_a, d_b) = (self.features_a, self.features_b);
        let d = d_a + d_b;
        // informative columns: the first few of A (excluding amount) and of B
        let inf_a = self.informative.min(d_a - 1);
        let inf_b = self.informative.min(d_b);
        let informative: Vec<usize> = (0..inf_a).chain(d_a..d_a + inf_b).collect();
        let planted: Vec<usize> = if inf_a < d_a - 1 { (inf_a..d_a - 1).collect() } else { (0..d_a - 1).collect() };
        let spread = Normal::new(0.0, self.separation.max(f64::MIN_POSITIVE)).unwrap();
        let centres: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| (0..2).map(|_| informative.iter().map(|_| spread.sample(&mut rng)).collect()).collect())
            .collect();

        let mut data = Vec::with_capacity(self.rows * d);
        let mut labels = Vec::with_capacity(self.rows);
        for _ in 0..self.rows {
            let y = usize::from(rng.random_bool(0.5));
            let blob = usize::from(rng.random_bool(0.5));
            let p: f64 = StandardNormal.sample(&mut rng);
            let mut row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            for (k, &c) in informative.iter().enumerate() {
                row[c] += centres[y][blob][k];
            }
            for &c in &planted {
                row[c] += self.property_strength * p;
            }
            let jitter: f64 = StandardNormal.sample(&mut rng);
            row[d_a - 1] = (0.8 * p + 0.2 * jitter).exp() * 50.0;
            data.extend(row);
            labels.push(y);
        }
        Ok((Tensor::from_vec(self.rows, d, data)?, labels))
    }
}

/// The generated table, standardized exactly as loading its CSV would.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    let (raw, labels) = cfg.raw()?;
    let (a, b) = cfg.columns();
    Dataset::from_raw(raw, labels, a.into_iter().chain(b).collect(), 0)
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a SynthConfig,
    data: &'a str,
    label_column: &'a str,
    property_column: &'a str,
    columns_a: Vec<String>,
    columns_b: Vec<String>,
}

/// Writes `data.csv` and `manifest.json` into `dir`. Returns the CSV path.
pub fn write_synthetic(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let (raw, labels) = cfg.raw()?;
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let csv_path = dir.join("data.csv");
    let (a, b) = cfg.columns();
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| HarnessError::io(&csv_path, e))?;
    let header: Vec<&str> = a.iter().chain(&b).map(String::as_str).chain([LABEL_COLUMN]).collect();
    w.write_record(&header).map_err(|e| HarnessError::io(&csv_path, e))?;
    for (r, y) in labels.iter().enumerate() {
        let rec: Vec<String> = raw.row(r).iter().map(|v| v.to_string()).chain([y.to_string()]).collect();
        w.write_record(&rec).map_err(|e| HarnessError::io(&csv_path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(&csv_path, e))?;

    let manifest_path = dir.join("manifest.json");
    let manifest = Manifest {
        config: cfg,
        data: "data.csv",
        label_column: LABEL_COLUMN,
        property_column: &cfg.property_column,
        columns_a: a,
        columns_b: b,
    };
    let mut f = std::fs::File::create(&manifest_path).map_err(|e| HarnessError::io(&manifest_path, e))?;
    serde_json::to_writer_pretty(&mut f, &manifest).map_err(|e| HarnessError::io(&manifest_path, e))?;
    f.write_all(b"\n").map_err(|e| HarnessError::io(&manifest_path, e))?;
    Ok(csv_path)
}
