use std::ops::Range;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use rand::Rng;

use super::{ProtocolError, Result};
use crate::fixedpoint::{encode_scaled, truncate_share_bits, FixedPointCodec, RingMatrix};
use crate::neural::Tensor;
use crate::paillier::{Ciphertext, PackedEncoder, PaillierError, PaillierKeypair, PublicKey, SecretKey, SignedEncoder};
use crate::secretshare::{
    shr_matrix, BeaverOpening, BeaverTriple, CrossTermParty, PairwiseChannel, Party, ShareError, TripleShape,
    TrustedDealer,
};

/// Packed plaintext slots are one ring element wide.
const SLOT_BITS: u32 = 64;

fn check_rows(x_a: &Tensor, x_b: &Tensor) -> Result<()> {
    if x_a.rows() != x_b.rows() {
        return Err(ProtocolError::RowCountMismatch(format!("{} rows at A, {} at B", x_a.rows(), x_b.rows())));
    }
    Ok(())
}

fn encode_tensor(codec: &FixedPointCodec, t: &Tensor) -> Result<RingMatrix> {
    Ok(RingMatrix::encode(codec, t.rows(), t.cols(), t.data())?)
}

/// One client's secret-shared copy of the first-layer weights
/// `[theta_A; theta_B]` and the operations it performs on it.
#[derive(Clone, Debug)]
pub struct SsFirstLayer {
    party: Party,
    codec: FixedPointCodec,
    grad_bits: u32,
    theta: RingMatrix,
    own_rows: Range<usize>,
}

impl SsFirstLayer {
    /// Encodes `block` and splits it; returns `(share of P0, share of P1)`.
    pub fn share_block<R: Rng + ?Sized>(
        codec: &FixedPointCodec,
        block: &Tensor,
        rng: &mut R,
    ) -> Result<(RingMatrix, RingMatrix)> {
        let (s0, s1) = shr_matrix(&encode_tensor(codec, block)?, rng);
        Ok((s0.into_matrix(), s1.into_matrix()))
    }

    /// `theta_a` and `theta_b` are this party's shares of the two blocks.
    pub fn new(
        party: Party,
        codec: FixedPointCodec,
        grad_bits: u32,
        theta_a: &RingMatrix,
        theta_b: &RingMatrix,
    ) -> Result<Self> {
        let theta = theta_a.vconcat(theta_b)?;
        let own_rows = match party {
            Party::P0 => 0..theta_a.rows(),
            Party::P1 => theta_a.rows()..theta.rows(),
        };
        Ok(SsFirstLayer {
            party,
            codec,
            grad_bits,
            theta,
            own_rows,
        })
    }

    pub fn party(&self) -> Party {
        self.party
    }

    pub fn theta_share(&self) -> &RingMatrix {
        &self.theta
    }

    /// `[<X_A>_i | <X_B>_i]`.
    pub fn join(a_block: &RingMatrix, b_block: &RingMatrix) -> Result<RingMatrix> {
        if a_block.rows() != b_block.rows() {
            return Err(ProtocolError::RowCountMismatch(format!("{} vs {} rows", a_block.rows(), b_block.rows())));
        }
        Ok(a_block.hconcat(b_block)?)
    }

    pub fn triple_shape(&self, rows: usize) -> TripleShape {
        TripleShape::Matrix {
            n: rows,
            d: self.theta.rows(),
            m: self.theta.cols(),
        }
    }

    pub fn start(&self, x_share: &RingMatrix, triples: [&mut BeaverTriple; 2]) -> Result<CrossTermParty> {
        if x_share.cols() != self.theta.rows() {
            return Err(ProtocolError::ShapeMismatch(format!(
                "input width {} for first layer of {}",
                x_share.cols(),
                self.theta.rows()
            )));
        }
        for t in &triples {
            if t.is_consumed() {
                return Err(ShareError::TripleReuse.into());
            }
        }
        Ok(CrossTermParty::start(self.party, x_share, &self.theta, triples)?)
    }

    /// This party's truncated share of `X theta`.
    pub fn finish(&self, cross: CrossTermParty, peer: [&BeaverOpening; 2]) -> Result<RingMatrix> {
        Ok(cross.finish(peer)?.truncate_share(&self.codec, self.party.index()))
    }

    /// `<theta>_i -= trunc(<X>_i^T enc(scaled_grad))`, plus `noise` on this
    /// party's own rows.
    pub fn update(&mut self, x_share: &RingMatrix, scaled_grad: &Tensor, noise: Option<&Tensor>) -> Result<()> {
        let ring = self.codec.ring();
        let g = scaled_grad
            .data()
            .iter()
            .map(|&v| encode_scaled(ring, v, self.grad_bits).map(|e| e.value()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let g = RingMatrix::from_raw(ring, scaled_grad.rows(), scaled_grad.cols(), g)?;
        let party = self.party.index();
        let bits = self.grad_bits;
        let delta = x_share
            .transpose()
            .matmul(&g)?
            .map(|e| truncate_share_bits(ring, party, e, bits));
        self.theta.sub_assign(&delta)?;
        if let Some(noise) = noise {
            if noise.shape() != (self.own_rows.len(), self.theta.cols()) {
                return Err(ProtocolError::ShapeMismatch(format!("noise {:?}", noise.shape())));
            }
            let enc = encode_tensor(&self.codec, noise)?;
            for (i, r) in self.own_rows.clone().enumerate() {
                for c in 0..self.theta.cols() {
                    let v = ring.sub(self.theta.get(r, c), enc.get(i, c));
                    self.theta.set(r, c, v);
                }
            }
        }
        Ok(())
    }
}

/// Fixed-point `x theta`, truncated to `f` fractional bits, as signed
/// integers in row-major order.
pub fn he_partial(codec: &FixedPointCodec, x: &Tensor, theta: &Tensor) -> Result<Vec<i64>> {
    let prod = encode_tensor(codec, x)?.matmul(&encode_tensor(codec, theta)?)?.truncate(codec);
    let ring = codec.ring();
    Ok(prod.raw().iter().map(|&v| ring.to_signed(ring.elem(v))).collect())
}

/// An encrypted `rows x cols` matrix, one value per ciphertext or packed.
#[derive(Clone, Debug, PartialEq)]
pub struct HeCiphertexts {
    pub rows: usize,
    pub cols: usize,
    pub packed: bool,
    /// Number of encrypted matrices summed into this one.
    pub addends: u32,
    pub cts: Vec<Ciphertext>,
}

impl HeCiphertexts {
    fn expected_len(pk: &PublicKey, rows: usize, cols: usize, packed: bool) -> Result<usize> {
        Ok(if packed {
            PackedEncoder::new(pk, SLOT_BITS, 2)?.plaintexts_for(rows * cols)
        } else {
            rows * cols
        })
    }

    pub fn encrypt<R: Rng + ?Sized>(
        pk: &PublicKey,
        values: &[i64],
        rows: usize,
        cols: usize,
        packed: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(ProtocolError::ShapeMismatch(format!("{} values for {rows}x{cols}", values.len())));
        }
        let plaintexts = if packed {
            PackedEncoder::new(pk, SLOT_BITS, 2)?.pack(values)?
        } else {
            let enc = SignedEncoder::new(pk, 0);
            values.iter().map(|&v| enc.encode_fixed(&BigInt::from(v))).collect()
        };
        let cts = plaintexts
            .iter()
            .map(|m| pk.encrypt(m, rng))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(HeCiphertexts {
            rows,
            cols,
            packed,
            addends: 1,
            cts,
        })
    }

    pub fn add(&self, pk: &PublicKey, other: &HeCiphertexts) -> Result<Self> {
        if (self.rows, self.cols, self.packed) != (other.rows, other.cols, other.packed) || self.cts.len() != other.cts.len()
        {
            return Err(ProtocolError::ShapeMismatch("ciphertext matrices differ in layout".into()));
        }
        let cts = self
            .cts
            .iter()
            .zip(&other.cts)
            .map(|(a, b)| pk.add(a, b))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(HeCiphertexts {
            rows: self.rows,
            cols: self.cols,
            packed: self.packed,
            addends: self.addends + other.addends,
            cts,
        })
    }

    /// `rows: u32`, `cols: u32`, `packed: u8`, `addends: u8`, then the
    /// ciphertexts.
    pub fn to_bytes(&self, pk: &PublicKey) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.push(self.packed as u8);
        out.push(self.addends as u8);
        out.extend(pk.encode_ciphertexts(&self.cts)?);
        Ok(out)
    }

    pub fn from_bytes(pk: &PublicKey, bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| ProtocolError::Malformed("ciphertext", m);
        if bytes.len() < 10 {
            return Err(bad("truncated header".into()));
        }
        let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let packed = match bytes[8] {
            0 => false,
            1 => true,
            v => return Err(bad(format!("packing flag {v}"))),
        };
        let addends = bytes[9] as u32;
        if addends == 0 || addends > 2 {
            return Err(bad(format!("{addends} addends")));
        }
        let cts = pk.decode_ciphertexts(&bytes[10..])?;
        let want = Self::expected_len(pk, rows, cols, packed)?;
        if cts.len() != want {
            return Err(bad(format!("{} ciphertexts for {rows}x{cols}, expected {want}", cts.len())));
        }
        Ok(HeCiphertexts {
            rows,
            cols,
            packed,
            addends,
            cts,
        })
    }
}

/// Decrypts and decodes a summed ciphertext matrix into reals.
pub fn decrypt_hidden(sk: &SecretKey, hc: &HeCiphertexts, frac_bits: u32) -> Result<Tensor> {
    let pk = sk.public_key();
    let plain = hc
        .cts
        .iter()
        .map(|c| sk.decrypt(c))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let count = hc.rows * hc.cols;
    let ints: Vec<i64> = if hc.packed {
        PackedEncoder::new(pk, SLOT_BITS, 2)?.unpack(&plain, hc.addends, count)?
    } else {
        let enc = SignedEncoder::new(pk, frac_bits);
        plain
            .iter()
            .map(|m| {
                enc.decode_fixed(m)
                    .to_i64()
                    .ok_or(PaillierError::Range {
                        value: f64::INFINITY,
                        bound: i64::MAX as f64,
                    })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?
    };
    let scale = (frac_bits as f64).exp2();
    Ok(Tensor::from_vec(hc.rows, hc.cols, ints.into_iter().map(|v| v as f64 / scale).collect())?)
}

/// The first-layer pre-activation `[X_A | X_B] [theta_A; theta_B]` computed
/// on additive shares, as the server reconstructs it.
///
/// Triples come from `dealer`; the share exchange between the clients runs
/// over `ch`.
pub fn first_hidden_ss<R: Rng + ?Sized, D: Rng>(
    x_a: &Tensor,
    x_b: &Tensor,
    theta_a: &Tensor,
    theta_b: &Tensor,
    codec: &FixedPointCodec,
    dealer: &mut TrustedDealer<D>,
    ch: &mut PairwiseChannel,
    rng: &mut R,
) -> Result<Tensor> {
    check_rows(x_a, x_b)?;
    let (ta0, ta1) = SsFirstLayer::share_block(codec, theta_a, rng)?;
    let (tb0, tb1) = SsFirstLayer::share_block(codec, theta_b, rng)?;
    let (xa0, xa1) = SsFirstLayer::share_block(codec, x_a, rng)?;
    let (xb0, xb1) = SsFirstLayer::share_block(codec, x_b, rng)?;
    // A -> B: <theta_A>_1, <X_A>_1; B -> A: <theta_B>_0, <X_B>_0
    ch.send_matrices(Party::P0, &[&ta1, &xa1])?;
    ch.send_matrices(Party::P1, &[&tb0, &xb0])?;
    let at_b = ch.recv_matrices(Party::P1)?;
    let at_a = ch.recv_matrices(Party::P0)?;

    let a = SsFirstLayer::new(Party::P0, *codec, codec.frac_bits(), &ta0, &at_a[0])?;
    let b = SsFirstLayer::new(Party::P1, *codec, codec.frac_bits(), &at_b[0], &tb1)?;
    let x0 = SsFirstLayer::join(&xa0, &at_a[1])?;
    let x1 = SsFirstLayer::join(&at_b[1], &xb1)?;

    let shape = a.triple_shape(x_a.rows());
    let (mut u0, mut u1) = dealer.triple(shape);
    let (mut v0, mut v1) = dealer.triple(shape);
    let cross_a = a.start(&x0, [&mut u0, &mut v0])?;
    let cross_b = b.start(&x1, [&mut u1, &mut v1])?;
    let [oa0, oa1] = cross_a.openings();
    ch.send_matrices(Party::P0, &[&oa0.e, &oa0.f, &oa1.e, &oa1.f])?;
    let [ob0, ob1] = cross_b.openings();
    ch.send_matrices(Party::P1, &[&ob0.e, &ob0.f, &ob1.e, &ob1.f])?;
    let from_a = ch.recv_matrices(Party::P1)?;
    let from_b = ch.recv_matrices(Party::P0)?;
    let opening = |m: &[RingMatrix], i: usize| BeaverOpening {
        e: m[2 * i].clone(),
        f: m[2 * i + 1].clone(),
    };
    let (pa0, pa1) = (opening(&from_a, 0), opening(&from_a, 1));
    let (pb0, pb1) = (opening(&from_b, 0), opening(&from_b, 1));
    let h_a = a.finish(cross_a, [&pb0, &pb1])?;
    let h_b = b.finish(cross_b, [&pa0, &pa1])?;
    Ok(Tensor::from_vec(x_a.rows(), theta_a.cols(), h_a.add(&h_b)?.decode(codec))?)
}

/// The same pre-activation with the clients' partial products summed under
/// Paillier encryption and decrypted by the key owner.
pub fn first_hidden_he<R: Rng + ?Sized>(
    x_a: &Tensor,
    x_b: &Tensor,
    theta_a: &Tensor,
    theta_b: &Tensor,
    codec: &FixedPointCodec,
    keys: &PaillierKeypair,
    packed: bool,
    rng: &mut R,
) -> Result<Tensor> {
    check_rows(x_a, x_b)?;
    let (rows, cols) = (x_a.rows(), theta_a.cols());
    let pk = &keys.pk;
    let at_a = HeCiphertexts::encrypt(pk, &he_partial(codec, x_a, theta_a)?, rows, cols, packed, rng)?;
    let wire = at_a.to_bytes(pk)?;
    let from_a = HeCiphertexts::from_bytes(pk, &wire)?;
    let at_b = HeCiphertexts::encrypt(pk, &he_partial(codec, x_b, theta_b)?, rows, cols, packed, rng)?;
    let sum = from_a.add(pk, &at_b)?;
    let wire = sum.to_bytes(pk)?;
    decrypt_hidden(&keys.sk, &HeCiphertexts::from_bytes(pk, &wire)?, codec.frac_bits())
}

/// Plain floating-point first layer, accumulated in the same order as a
/// monolithic matrix product.
pub fn first_hidden_float(x_a: &Tensor, x_b: &Tensor, theta_a: &Tensor, theta_b: &Tensor) -> Result<Tensor> {
    check_rows(x_a, x_b)?;
    let mut acc = x_a.matmul(theta_a)?;
    acc.matmul_acc(x_b, theta_b)?;
    Ok(acc)
}
