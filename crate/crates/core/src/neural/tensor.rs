use serde::{Deserialize, Serialize};

use super::NeuralError;

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NeuralError> {
        if data.len() != rows * cols {
            return Err(NeuralError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NeuralError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NeuralError::DimensionMismatch("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor, NeuralError> {
        let mut out = Tensor::zeros(self.rows, rhs.cols);
        out.matmul_acc(self, rhs)?;
        Ok(out)
    }

    /// `self += a * b`, accumulated row by row over the inner index in
    /// ascending order. Splitting `a` by columns and `b` by rows and calling
    /// this once per block in order gives the same bits as one call.
    pub fn matmul_acc(&mut self, a: &Tensor, b: &Tensor) -> Result<(), NeuralError> {
        if a.cols != b.rows || self.rows != a.rows || self.cols != b.cols {
            return Err(NeuralError::DimensionMismatch(format!(
                "{:?} += {:?} x {:?}",
                self.shape(),
                a.shape(),
                b.shape()
            )));
        }
        let m = b.cols;
        for i in 0..a.rows {
            let out = &mut self.data[i * m..(i + 1) * m];
            for k in 0..a.cols {
                let x = a.data[i * a.cols + k];
                let brow = &b.data[k * m..(k + 1) * m];
                for (o, w) in out.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        Ok(())
    }

    /// `self^T * rhs`. Row `r` of the result depends only on column `r` of
    /// `self`.
    pub fn tr_matmul(&self, rhs: &Tensor) -> Result<Tensor, NeuralError> {
        if self.rows != rhs.rows {
            return Err(NeuralError::DimensionMismatch(format!(
                "{:?}^T x {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let (n, m) = (self.cols, rhs.cols);
        let mut out = Tensor::zeros(n, m);
        for i in 0..self.rows {
            let g = &rhs.data[i * m..(i + 1) * m];
            for r in 0..n {
                let x = self.data[i * n + r];
                let o = &mut out.data[r * m..(r + 1) * m];
                for (o, gv) in o.iter_mut().zip(g) {
                    *o += x * gv;
                }
            }
        }
        Ok(out)
    }

    /// `self * rhs^T`.
    pub fn matmul_tr(&self, rhs: &Tensor) -> Result<Tensor, NeuralError> {
        if self.cols != rhs.cols {
            return Err(NeuralError::DimensionMismatch(format!(
                "{:?} x {:?}^T",
                self.shape(),
                rhs.shape()
            )));
        }
        let mut out = Tensor::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = a.iter().zip(rhs.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    fn check_same(&self, other: &Tensor, what: &str) -> Result<(), NeuralError> {
        if self.shape() != other.shape() {
            return Err(NeuralError::DimensionMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, NeuralError> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, NeuralError> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor, NeuralError> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NeuralError> {
        self.check_same(other, "elementwise")?;
        Ok(Tensor {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor, NeuralError> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(NeuralError::DimensionMismatch(format!(
                "bias {:?} for {:?}",
                bias.shape(),
                self.shape()
            )));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols.max(1)) {
            for (o, b) in row.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Column sums as a `1 x cols` tensor.
    pub fn sum_rows(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        for row in self.data.chunks(self.cols.max(1)) {
            for (o, v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(idx.iter().map(|&c| row[c]));
        }
        Tensor {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    pub fn row_block(&self, start: usize, end: usize) -> Tensor {
        Tensor {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn col_block(&self, start: usize, end: usize) -> Tensor {
        self.select_cols(&(start..end).collect::<Vec<_>>())
    }

    pub fn hconcat(&self, other: &Tensor) -> Result<Tensor, NeuralError> {
        if self.rows != other.rows {
            return Err(NeuralError::DimensionMismatch("hconcat row counts".into()));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols + other.cols,
            data,
        })
    }

    pub fn vconcat(&self, other: &Tensor) -> Result<Tensor, NeuralError> {
        if self.cols != other.cols {
            return Err(NeuralError::DimensionMismatch("vconcat column counts".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Tensor {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `rows: u32 LE`, `cols: u32 LE`, then `f64` LE values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.data.len() * 8);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses one tensor and returns the remaining bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Tensor, &[u8]), NeuralError> {
        let bad = || NeuralError::Malformed("truncated tensor".into());
        let header = bytes.get(..8).ok_or_else(bad)?;
        let rows = u32::from_le_bytes(header[..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(header[4..].try_into().unwrap()) as usize;
        let n = rows.checked_mul(cols).ok_or_else(bad)?;
        let body = bytes.get(8..8 + n * 8).ok_or_else(bad)?;
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Tensor { rows, cols, data }, &bytes[8 + n * 8..]))
    }
}
