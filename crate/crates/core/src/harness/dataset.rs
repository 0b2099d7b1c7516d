use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::neural::Tensor;

/// A standardized table with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub columns: Vec<String>,
    /// Per-column mean and standard deviation of the raw values.
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Rows dropped at ingestion for missing values.
    pub dropped_rows: usize,
}

impl Dataset {
    /// Standardizes `raw` column by column. Constant columns are centred
    /// and left with unit scale.
    pub fn from_raw(raw: Tensor, labels: Vec<usize>, columns: Vec<String>, dropped_rows: usize) -> Result<Self> {
        let (n, d) = raw.shape();
        if n == 0 {
            return Err(HarnessError::EmptyDataset);
        }
        if labels.len() != n || columns.len() != d {
            return Err(HarnessError::InvalidSpec(format!(
                "{n}x{d} features with {} labels and {} column names",
                labels.len(),
                columns.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(HarnessError::InvalidSpec(format!("label {bad} is not binary")));
        }
        let mut means = vec![0.0; d];
        let mut stds = vec![0.0; d];
        for c in 0..d {
            let mean = (0..n).map(|r| raw.get(r, c)).sum::<f64>() / n as f64;
            let var = (0..n).map(|r| (raw.get(r, c) - mean).powi(2)).sum::<f64>() / n as f64;
            means[c] = mean;
            stds[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let mut features = raw;
        for r in 0..n {
            for c in 0..d {
                features.set(r, c, (features.get(r, c) - means[c]) / stds[c]);
            }
        }
        Ok(Dataset {
            features,
            labels,
            columns,
            means,
            stds,
            dropped_rows,
        })
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn cols(&self) -> usize {
        self.features.cols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Standardized values of one column.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column_index(name)?;
        Some((0..self.rows()).map(|r| self.features.get(r, c)).collect())
    }

    /// The given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            columns: self.columns.clone(),
            means: self.means.clone(),
            stds: self.stds.clone(),
            dropped_rows: 0,
        }
    }

    /// Row order after a seeded shuffle.
    pub fn shuffled_rows(&self, seed: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.rows()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }
}

fn is_missing(s: &str) -> bool {
    s.is_empty() || ["na", "nan", "null", "?"].contains(&s.to_ascii_lowercase().as_str())
}

pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_csv(file, label_column)
}

/// Parses a headed CSV table. Numeric columns are kept, other columns are
/// one-hot encoded with one `name=value` column per distinct value, and
/// rows with a missing field are dropped.
pub fn read_csv<R: Read>(input: R, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let parse_err = |e: csv::Error| {
        let row = e.position().map_or(0, |p| p.line() as usize);
        HarnessError::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        }
    };
    let header: Vec<String> = reader.headers().map_err(parse_err)?.iter().map(str::to_string).collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| HarnessError::InvalidSpec(format!("no label column `{label_column}`")))?;

    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    let mut dropped = 0;
    for rec in reader.records() {
        let rec = rec.map_err(parse_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().any(is_missing) {
            dropped += 1;
            continue;
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    if rows.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }

    let mut labels = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let v = &rec[label_idx];
        let y = match v.parse::<f64>() {
            Ok(x) if x == 0.0 => 0,
            Ok(x) if x == 1.0 => 1,
            _ => {
                return Err(HarnessError::Parse {
                    row: *line,
                    column: label_column.to_string(),
                    message: format!("label `{v}` is not 0 or 1"),
                })
            }
        };
        labels.push(y);
    }

    let mut columns = Vec::new();
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if c == label_idx {
            continue;
        }
        let numeric: Option<Vec<f64>> = rows
            .iter()
            .map(|(_, rec)| rec[c].parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect();
        match numeric {
            Some(values) => {
                columns.push(name.clone());
                blocks.push(values);
            }
            None => {
                let levels: BTreeSet<&str> = rows.iter().map(|(_, rec)| rec[c].as_str()).collect();
                for level in levels {
                    columns.push(format!("{name}={level}"));
                    blocks.push(rows.iter().map(|(_, rec)| f64::from(rec[c] == level)).collect());
                }
            }
        }
    }
    let n = rows.len();
    let d = columns.len();
    let mut raw = Tensor::zeros(n, d);
    for (c, block) in blocks.iter().enumerate() {
        for (r, &v) in block.iter().enumerate() {
            raw.set(r, c, v);
        }
    }
    Dataset::from_raw(raw, labels, columns, dropped)
}

/// Seeded row shuffle, then `floor(fraction · n)` rows for training and the
/// rest for testing.
pub fn split_train_test(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(HarnessError::InvalidSpec(format!("train fraction {fraction} outside (0, 1)")));
    }
    let n = ds.rows();
    let n_train = (fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(HarnessError::InvalidSpec(format!(
            "train fraction {fraction} of {n} rows leaves an empty side"
        )));
    }
    let order = ds.shuffled_rows(seed);
    Ok((ds.subset(&order[..n_train]), ds.subset(&order[n_train..])))
}

/// Column assignment between the two clients. Client B gets every column
/// client A does not.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// The first `ceil(d/2)` columns go to A.
    #[default]
    EqualHalves,
    /// Columns named here go to A. A categorical source column name selects
    /// all of its one-hot columns.
    Columns { a: Vec<String> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerticalSplit {
    pub part_a: Tensor,
    pub part_b: Tensor,
    pub labels: Vec<usize>,
    pub columns_a: Vec<String>,
    pub columns_b: Vec<String>,
}

impl SplitSpec {
    /// Column indices owned by A and B.
    pub fn assign(&self, columns: &[String]) -> Result<(Vec<usize>, Vec<usize>)> {
        let d = columns.len();
        let a: Vec<usize> = match self {
            SplitSpec::EqualHalves => (0..d.div_ceil(2)).collect(),
            SplitSpec::Columns { a } => {
                for name in a {
                    let found = columns.iter().any(|c| c == name || c.starts_with(&format!("{name}=")));
                    if !found {
                        return Err(HarnessError::InvalidSpec(format!("unknown column `{name}`")));
                    }
                }
                (0..d)
                    .filter(|&c| {
                        a.iter()
                            .any(|n| columns[c] == *n || columns[c].starts_with(&format!("{n}=")))
                    })
                    .collect()
            }
        };
        let b: Vec<usize> = (0..d).filter(|c| !a.contains(c)).collect();
        if a.is_empty() || b.is_empty() {
            return Err(HarnessError::InvalidSpec(format!(
                "split leaves {} columns at A and {} at B",
                a.len(),
                b.len()
            )));
        }
        Ok((a, b))
    }
}

pub fn split_vertical(ds: &Dataset, spec: &SplitSpec) -> Result<VerticalSplit> {
    let (a, b) = spec.assign(&ds.columns)?;
    Ok(VerticalSplit {
        part_a: ds.features.select_cols(&a),
        part_b: ds.features.select_cols(&b),
        labels: ds.labels.clone(),
        columns_a: a.iter().map(|&c| ds.columns[c].clone()).collect(),
        columns_b: b.iter().map(|&c| ds.columns[c].clone()).collect(),
    })
}
