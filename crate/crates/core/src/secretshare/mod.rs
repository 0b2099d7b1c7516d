//! Two-party additive secret sharing over `Z_{2^l}`.
//!
//! A secret `a` is split as `<a>_0 = a - r`, `<a>_1 = r` with `r` uniform, so
//! each share alone is uniformly distributed. Addition is local; products use
//! Beaver triples (see [`beaver`]).

mod beaver;
mod channel;

pub use beaver::{
    beaver_mul, dealer_gen_triples, matmul_shared, matmul_shared_untruncated, BeaverOpening,
    BeaverTriple, CrossTermParty, PendingProduct, TripleShape, TrustedDealer,
};
pub use channel::{DirectionStats, PairwiseChannel};

use rand::Rng;
use thiserror::Error;

use crate::fixedpoint::{FixedPointError, Ring, RingElement, RingMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShareError {
    #[error("both shares belong to party {0}")]
    PartyMismatch(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("triple shape {expected} does not fit operands {found}")]
    TripleShapeMismatch { expected: String, found: String },
    #[error("Beaver triple was already consumed")]
    TripleReuse,
    #[error("channel closed")]
    ChannelClosed,
    #[error("malformed share payload: {0}")]
    MalformedPayload(String),
}

impl From<FixedPointError> for ShareError {
    fn from(e: FixedPointError) -> Self {
        ShareError::DimensionMismatch(e.to_string())
    }
}

/// One of the two computing parties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Party {
    P0,
    P1,
}

impl Party {
    pub fn index(self) -> usize {
        match self {
            Party::P0 => 0,
            Party::P1 => 1,
        }
    }

    pub fn peer(self) -> Party {
        match self {
            Party::P0 => Party::P1,
            Party::P1 => Party::P0,
        }
    }

    pub fn from_index(i: usize) -> Option<Party> {
        match i {
            0 => Some(Party::P0),
            1 => Some(Party::P1),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Share {
    pub party: Party,
    pub value: RingElement,
}

/// A matrix of shares, all held by one party.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareMatrix {
    party: Party,
    data: RingMatrix,
}

impl ShareMatrix {
    pub fn new(party: Party, data: RingMatrix) -> Self {
        ShareMatrix { party, data }
    }

    pub fn party(&self) -> Party {
        self.party
    }

    pub fn matrix(&self) -> &RingMatrix {
        &self.data
    }

    pub fn into_matrix(self) -> RingMatrix {
        self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }
}

/// Splits `secret` into `(secret - r, r)`.
pub fn shr<R: Rng + ?Sized>(ring: Ring, secret: RingElement, rng: &mut R) -> (Share, Share) {
    let r = ring.random(rng);
    shr_with(ring, secret, r)
}

/// Sharing with caller-supplied mask `r`.
pub fn shr_with(ring: Ring, secret: RingElement, r: RingElement) -> (Share, Share) {
    (
        Share {
            party: Party::P0,
            value: ring.sub(secret, r),
        },
        Share {
            party: Party::P1,
            value: r,
        },
    )
}

pub fn rec(ring: Ring, s0: Share, s1: Share) -> Result<RingElement, ShareError> {
    if s0.party == s1.party {
        return Err(ShareError::PartyMismatch(s0.party.index()));
    }
    Ok(ring.add(s0.value, s1.value))
}

pub fn shr_matrix<R: Rng + ?Sized>(secret: &RingMatrix, rng: &mut R) -> (ShareMatrix, ShareMatrix) {
    let (rows, cols) = secret.shape();
    let mask = RingMatrix::random(secret.ring(), rows, cols, rng);
    let s0 = secret.sub(&mask).expect("same shape");
    (ShareMatrix::new(Party::P0, s0), ShareMatrix::new(Party::P1, mask))
}

pub fn rec_matrix(a: &ShareMatrix, b: &ShareMatrix) -> Result<RingMatrix, ShareError> {
    if a.party == b.party {
        return Err(ShareError::PartyMismatch(a.party.index()));
    }
    if a.shape() != b.shape() {
        return Err(ShareError::DimensionMismatch(format!(
            "rec: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.data.add(&b.data)?)
}

/// Local share addition; no communication.
pub fn add_shared(a: &ShareMatrix, b: &ShareMatrix) -> Result<ShareMatrix, ShareError> {
    if a.party != b.party {
        return Err(ShareError::DimensionMismatch(
            "add_shared operands come from different parties".into(),
        ));
    }
    if a.shape() != b.shape() {
        return Err(ShareError::DimensionMismatch(format!(
            "add_shared: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(ShareMatrix::new(a.party, a.data.add(&b.data)?))
}

/// Share-transfer payload: for each matrix, `rows: u32`, `cols: u32`, then
/// row-major values in `ceil(l/8)` little-endian bytes each.
pub fn encode_matrices(ring: Ring, mats: &[&RingMatrix]) -> Vec<u8> {
    let width = ring.byte_width();
    let total: usize = mats.iter().map(|m| 8 + m.raw().len() * width).sum();
    let mut out = Vec::with_capacity(total);
    for m in mats {
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.raw() {
            out.extend_from_slice(&v.to_le_bytes()[..width]);
        }
    }
    out
}

pub fn decode_matrices(ring: Ring, mut bytes: &[u8]) -> Result<Vec<RingMatrix>, ShareError> {
    let width = ring.byte_width();
    let mut out = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 8 {
            return Err(ShareError::MalformedPayload("truncated matrix header".into()));
        }
        let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        bytes = &bytes[8..];
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| ShareError::MalformedPayload("matrix too large".into()))?;
        let need = count
            .checked_mul(width)
            .ok_or_else(|| ShareError::MalformedPayload("matrix too large".into()))?;
        if bytes.len() < need {
            return Err(ShareError::MalformedPayload(format!(
                "{rows}x{cols} matrix needs {need} bytes, {} left",
                bytes.len()
            )));
        }
        let data = bytes[..need]
            .chunks_exact(width)
            .map(|chunk| {
                let mut buf = [0u8; 8];
                buf[..width].copy_from_slice(chunk);
                u64::from_le_bytes(buf)
            })
            .collect();
        bytes = &bytes[need..];
        out.push(RingMatrix::from_raw(ring, rows, cols, data)?);
    }
    Ok(out)
}
