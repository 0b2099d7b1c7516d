//! Fixed-point encoding of reals into the ring `Z_{2^l}`.
//!
//! Every secure computation in this crate runs over a power-of-two ring with
//! wrapping arithmetic. A real `x` is carried as `round(x * 2^f)` in two's
//! complement, where `f` is the number of fractional bits. Multiplying two
//! encoded values doubles the fractional bits, so products are truncated by
//! `f` bits afterwards. Truncation of a plaintext value is an exact signed
//! shift; truncation of an additively shared value is done locally by each
//! party on its own share, which is exact up to one unit in the last place
//! except with probability about `2^(lx + 1 - l)` when the secret is bounded
//! by `2^lx`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixedPointError {
    #[error("ring width {0} is outside 1..=64")]
    InvalidRingWidth(u32),
    #[error("fractional bits {frac_bits} must satisfy 0 < f < l/2 for l = {ring_bits}")]
    InvalidFractionalBits { ring_bits: u32, frac_bits: u32 },
    #[error("value {value} is outside the representable range +/-{bound}")]
    Range { value: f64, bound: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, FixedPointError>;

/// An element of `Z_{2^l}`, always reduced below `2^l`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RingElement(u64);

impl RingElement {
    pub const ZERO: RingElement = RingElement(0);

    pub fn value(self) -> u64 {
        self.0
    }
}

/// The ring `Z_{2^l}` for `1 <= l <= 64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Ring {
    bits: u32,
}

impl TryFrom<u32> for Ring {
    type Error = FixedPointError;

    fn try_from(bits: u32) -> Result<Self> {
        Ring::new(bits)
    }
}

impl From<Ring> for u32 {
    fn from(ring: Ring) -> u32 {
        ring.bits
    }
}

impl Default for Ring {
    fn default() -> Self {
        Ring::R64
    }
}

impl Ring {
    pub const R64: Ring = Ring { bits: 64 };

    pub fn new(bits: u32) -> Result<Self> {
        if bits == 0 || bits > 64 {
            return Err(FixedPointError::InvalidRingWidth(bits));
        }
        Ok(Ring { bits })
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn mask(self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    /// Bytes needed to carry one element on the wire.
    pub fn byte_width(self) -> usize {
        self.bits.div_ceil(8) as usize
    }

    /// Reduces an arbitrary `u64` modulo `2^l`.
    #[inline]
    pub fn elem(self, v: u64) -> RingElement {
        RingElement(v & self.mask())
    }

    #[inline]
    pub fn add(self, a: RingElement, b: RingElement) -> RingElement {
        self.elem(a.0.wrapping_add(b.0))
    }

    #[inline]
    pub fn sub(self, a: RingElement, b: RingElement) -> RingElement {
        self.elem(a.0.wrapping_sub(b.0))
    }

    #[inline]
    pub fn mul(self, a: RingElement, b: RingElement) -> RingElement {
        self.elem(a.0.wrapping_mul(b.0))
    }

    #[inline]
    pub fn neg(self, a: RingElement) -> RingElement {
        self.elem(a.0.wrapping_neg())
    }

    /// Two's-complement reading: the upper half of the ring is negative.
    #[inline]
    pub fn to_signed(self, a: RingElement) -> i64 {
        let shift = 64 - self.bits;
        ((a.0 << shift) as i64) >> shift
    }

    #[inline]
    pub fn from_signed(self, v: i64) -> RingElement {
        self.elem(v as u64)
    }

    pub fn random<R: Rng + ?Sized>(self, rng: &mut R) -> RingElement {
        self.elem(rng.random::<u64>())
    }
}

/// Encoder between `f64` and fixed-point ring elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    ring: Ring,
    frac_bits: u32,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec {
            ring: Ring::R64,
            frac_bits: 16,
        }
    }
}

impl FixedPointCodec {
    pub fn new(ring: Ring, frac_bits: u32) -> Result<Self> {
        if frac_bits == 0 || 2 * frac_bits >= ring.bits() {
            return Err(FixedPointError::InvalidFractionalBits {
                ring_bits: ring.bits(),
                frac_bits,
            });
        }
        Ok(FixedPointCodec { ring, frac_bits })
    }

    pub fn ring(&self) -> Ring {
        self.ring
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn scale(&self) -> f64 {
        (self.frac_bits as f64).exp2()
    }

    /// Largest magnitude accepted by [`encode`](Self::encode).
    pub fn bound(&self) -> f64 {
        ((self.ring.bits() - self.frac_bits - 1) as f64).exp2()
    }

    /// Encodes `x` as `round(x * 2^f)`, rounding half away from zero.
    pub fn encode(&self, x: f64) -> Result<RingElement> {
        let bound = self.bound();
        if !(x.abs() < bound) {
            return Err(FixedPointError::Range { value: x, bound });
        }
        let scaled = (x * self.scale()).round();
        // rounding can land exactly on the boundary
        let limit = ((self.ring.bits() - 1) as f64).exp2();
        if scaled.abs() >= limit {
            return Err(FixedPointError::Range { value: x, bound });
        }
        Ok(self.ring.from_signed(scaled as i64))
    }

    pub fn decode(&self, e: RingElement) -> f64 {
        self.ring.to_signed(e) as f64 / self.scale()
    }

    /// Exact arithmetic right shift of the signed reading by `f` bits.
    pub fn truncate(&self, e: RingElement) -> RingElement {
        self.ring.from_signed(self.ring.to_signed(e) >> self.frac_bits)
    }

    /// Local truncation of one party's additive share.
    ///
    /// Party 0 shifts its share as an unsigned integer; party 1 negates,
    /// shifts and negates back. The two results reconstruct to the truncated
    /// secret within one unit.
    pub fn truncate_share(&self, party: usize, e: RingElement) -> RingElement {
        truncate_share_bits(self.ring, party, e, self.frac_bits)
    }

    pub fn encode_slice(&self, xs: &[f64]) -> Result<Vec<RingElement>> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }
}

/// Encodes `x` with `bits` fractional bits, independent of any codec.
pub fn encode_scaled(ring: Ring, x: f64, bits: u32) -> Result<RingElement> {
    let limit = ((ring.bits() - 1) as f64).exp2();
    let scaled = (x * (bits as f64).exp2()).round();
    if !(scaled.abs() < limit) {
        return Err(FixedPointError::Range { value: x, bound: limit / (bits as f64).exp2() });
    }
    Ok(ring.from_signed(scaled as i64))
}

/// Share-local truncation by an arbitrary number of bits.
pub fn truncate_share_bits(ring: Ring, party: usize, e: RingElement, bits: u32) -> RingElement {
    if party == 0 {
        ring.elem(e.0 >> bits)
    } else {
        let negated = ring.neg(e);
        ring.neg(ring.elem(negated.0 >> bits))
    }
}

/// Dense row-major matrix over a ring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingMatrix {
    ring: Ring,
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

impl RingMatrix {
    pub fn zeros(ring: Ring, rows: usize, cols: usize) -> Self {
        RingMatrix {
            ring,
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    /// Builds a matrix, reducing every entry modulo `2^l`.
    pub fn from_raw(ring: Ring, rows: usize, cols: usize, mut data: Vec<u64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(FixedPointError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        let mask = ring.mask();
        data.iter_mut().for_each(|v| *v &= mask);
        Ok(RingMatrix {
            ring,
            rows,
            cols,
            data,
        })
    }

    pub fn random<R: Rng + ?Sized>(ring: Ring, rows: usize, cols: usize, rng: &mut R) -> Self {
        let mask = ring.mask();
        let data = (0..rows * cols).map(|_| rng.random::<u64>() & mask).collect();
        RingMatrix {
            ring,
            rows,
            cols,
            data,
        }
    }

    pub fn encode(codec: &FixedPointCodec, rows: usize, cols: usize, xs: &[f64]) -> Result<Self> {
        let data = codec.encode_slice(xs)?.into_iter().map(|e| e.0).collect();
        RingMatrix::from_raw(codec.ring(), rows, cols, data)
    }

    pub fn decode(&self, codec: &FixedPointCodec) -> Vec<f64> {
        self.data
            .iter()
            .map(|&v| codec.decode(RingElement(v)))
            .collect()
    }

    pub fn ring(&self) -> Ring {
        self.ring
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

    pub fn raw(&self) -> &[u64] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> RingElement {
        RingElement(self.data[r * self.cols + c])
    }

    pub fn set(&mut self, r: usize, c: usize, v: RingElement) {
        self.data[r * self.cols + c] = v.0 & self.ring.mask();
    }

    fn check_same_shape(&self, other: &RingMatrix, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(FixedPointError::DimensionMismatch(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &RingMatrix) -> Result<RingMatrix> {
        self.check_same_shape(other, "add")?;
        let mask = self.ring.mask();
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.wrapping_add(*b) & mask)
            .collect();
        Ok(RingMatrix { data, ..*self })
    }

    pub fn sub(&self, other: &RingMatrix) -> Result<RingMatrix> {
        self.check_same_shape(other, "sub")?;
        let mask = self.ring.mask();
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.wrapping_sub(*b) & mask)
            .collect();
        Ok(RingMatrix { data, ..*self })
    }

    pub fn add_assign(&mut self, other: &RingMatrix) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        let mask = self.ring.mask();
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = a.wrapping_add(*b) & mask;
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &RingMatrix) -> Result<()> {
        self.check_same_shape(other, "sub_assign")?;
        let mask = self.ring.mask();
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = a.wrapping_sub(*b) & mask;
        }
        Ok(())
    }

    pub fn neg(&self) -> RingMatrix {
        let mask = self.ring.mask();
        let data = self.data.iter().map(|a| a.wrapping_neg() & mask).collect();
        RingMatrix { data, ..*self }
    }

    /// Wrapping matrix product modulo `2^l`.
    pub fn matmul(&self, other: &RingMatrix) -> Result<RingMatrix> {
        if self.cols != other.rows {
            return Err(FixedPointError::DimensionMismatch(format!(
                "matmul: {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (n, d, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0u64; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == 0 {
                    continue;
                }
                let brow = &other.data[k * m..(k + 1) * m];
                for (o, b) in row.iter_mut().zip(brow) {
                    *o = o.wrapping_add(a.wrapping_mul(*b));
                }
            }
        }
        let mask = self.ring.mask();
        out.iter_mut().for_each(|v| *v &= mask);
        Ok(RingMatrix {
            ring: self.ring,
            rows: n,
            cols: m,
            data: out,
        })
    }

    pub fn transpose(&self) -> RingMatrix {
        let mut data = vec![0u64; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        RingMatrix {
            ring: self.ring,
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hconcat(&self, other: &RingMatrix) -> Result<RingMatrix> {
        if self.rows != other.rows {
            return Err(FixedPointError::DimensionMismatch(format!(
                "hconcat: {:?} | {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.data[r * self.cols..(r + 1) * self.cols]);
            data.extend_from_slice(&other.data[r * other.cols..(r + 1) * other.cols]);
        }
        Ok(RingMatrix {
            ring: self.ring,
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Row-wise concatenation: `other` stacked below `self`.
    pub fn vconcat(&self, other: &RingMatrix) -> Result<RingMatrix> {
        if self.cols != other.cols {
            return Err(FixedPointError::DimensionMismatch(format!(
                "vconcat: {:?} over {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(RingMatrix {
            ring: self.ring,
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Rows `[start, end)` as a new matrix.
    pub fn row_block(&self, start: usize, end: usize) -> RingMatrix {
        RingMatrix {
            ring: self.ring,
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(RingElement) -> RingElement) -> RingMatrix {
        let data = self.data.iter().map(|&v| f(RingElement(v)).0).collect();
        RingMatrix { data, ..*self }
    }

    pub fn truncate(&self, codec: &FixedPointCodec) -> RingMatrix {
        self.map(|e| codec.truncate(e))
    }

    pub fn truncate_share(&self, codec: &FixedPointCodec, party: usize) -> RingMatrix {
        self.map(|e| codec.truncate_share(party, e))
    }

}
