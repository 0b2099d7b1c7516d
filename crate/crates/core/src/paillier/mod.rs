//! Paillier encryption with `g = n + 1` and a signed fixed-point plaintext
//! encoding.

mod primes;

use std::hash::{DefaultHasher, Hash, Hasher};

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use thiserror::Error;

pub const DEFAULT_KEY_BITS: u64 = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PaillierError {
    #[error("key size {bits} below the minimum of {min} bits")]
    KeyTooSmall { bits: u64, min: u64 },
    #[error("plaintext outside [0, n)")]
    PlaintextOutOfRange,
    #[error("ciphertexts or keys belong to different public keys")]
    KeyMismatch,
    #[error("malformed ciphertext")]
    MalformedCiphertext,
    #[error("value {value} outside encoder bound {bound}")]
    Range { value: f64, bound: f64 },
    #[error("wire decoding failed: {0}")]
    Wire(String),
}

/// Smallest modulus size `keygen` accepts. 512-bit keys are only available
/// in test builds or with the `test-keys` feature.
pub fn min_key_bits() -> u64 {
    if cfg!(any(test, feature = "test-keys")) {
        512
    } else {
        DEFAULT_KEY_BITS
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n2: BigUint,
    id: u64,
}

impl PublicKey {
    pub fn from_modulus(n: BigUint) -> Result<Self, PaillierError> {
        if n.bits() < 16 || n.is_even() {
            return Err(PaillierError::Wire("modulus must be odd and nontrivial".into()));
        }
        let mut h = DefaultHasher::new();
        n.hash(&mut h);
        Ok(PublicKey {
            n2: &n * &n,
            id: h.finish(),
            n,
        })
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n2
    }

    pub fn g(&self) -> BigUint {
        &self.n + 1u32
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    /// Fingerprint of `n`, carried by every ciphertext.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Bytes of one ciphertext on the wire, prefix included.
    pub fn ciphertext_wire_len(&self) -> usize {
        4 + self.n2_bytes()
    }

    fn n2_bytes(&self) -> usize {
        self.n2.bits().div_ceil(8) as usize
    }

    pub fn encrypt<R: Rng + ?Sized>(&self, m: &BigUint, rng: &mut R) -> Result<Ciphertext, PaillierError> {
        let r = loop {
            let r = primes::random_below(&self.n, rng);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                break r;
            }
        };
        self.encrypt_with(m, &r)
    }

    /// `c = (1 + m n) r^n mod n^2`.
    pub fn encrypt_with(&self, m: &BigUint, r: &BigUint) -> Result<Ciphertext, PaillierError> {
        if m >= &self.n {
            return Err(PaillierError::PlaintextOutOfRange);
        }
        if r.is_zero() || r >= &self.n || !r.gcd(&self.n).is_one() {
            return Err(PaillierError::MalformedCiphertext);
        }
        let gm = (BigUint::one() + m * &self.n) % &self.n2;
        let rn = r.modpow(&self.n, &self.n2);
        Ok(Ciphertext {
            value: gm * rn % &self.n2,
            key_id: self.id,
        })
    }

    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        if a.key_id != self.id || b.key_id != self.id {
            return Err(PaillierError::KeyMismatch);
        }
        Ok(Ciphertext {
            value: &a.value * &b.value % &self.n2,
            key_id: self.id,
        })
    }

    /// Public key wire encoding: `n` as a length-prefixed big-endian integer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_big(&mut out, &self.n, 0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PaillierError> {
        let (n, rest) = take_big(bytes)?;
        if !rest.is_empty() {
            return Err(PaillierError::Wire("trailing bytes after public key".into()));
        }
        PublicKey::from_modulus(n)
    }

    /// Concatenated ciphertexts, each zero-padded to the byte width of `n^2`.
    pub fn encode_ciphertexts(&self, cts: &[Ciphertext]) -> Result<Vec<u8>, PaillierError> {
        let width = self.n2_bytes();
        let mut out = Vec::with_capacity(cts.len() * (4 + width));
        for ct in cts {
            if ct.key_id != self.id {
                return Err(PaillierError::KeyMismatch);
            }
            put_big(&mut out, &ct.value, width);
        }
        Ok(out)
    }

    pub fn decode_ciphertexts(&self, mut bytes: &[u8]) -> Result<Vec<Ciphertext>, PaillierError> {
        let mut cts = Vec::new();
        while !bytes.is_empty() {
            let (value, rest) = take_big(bytes)?;
            bytes = rest;
            let ct = Ciphertext {
                value,
                key_id: self.id,
            };
            self.validate(&ct)?;
            cts.push(ct);
        }
        Ok(cts)
    }

    fn validate(&self, ct: &Ciphertext) -> Result<(), PaillierError> {
        if ct.key_id != self.id {
            return Err(PaillierError::KeyMismatch);
        }
        if ct.value.is_zero() || ct.value >= self.n2 || !ct.value.gcd(&self.n).is_one() {
            return Err(PaillierError::MalformedCiphertext);
        }
        Ok(())
    }
}

fn put_big(out: &mut Vec<u8>, x: &BigUint, width: usize) {
    let raw = if x.is_zero() { Vec::new() } else { x.to_bytes_be() };
    let len = raw.len().max(width);
    out.extend_from_slice(&(len as u32).to_le_bytes());
    out.resize(out.len() + len - raw.len(), 0);
    out.extend_from_slice(&raw);
}

fn take_big(bytes: &[u8]) -> Result<(BigUint, &[u8]), PaillierError> {
    if bytes.len() < 4 {
        return Err(PaillierError::Wire("truncated length prefix".into()));
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = &bytes[4..];
    if body.len() < len {
        return Err(PaillierError::Wire(format!("expected {len} bytes, found {}", body.len())));
    }
    Ok((BigUint::from_bytes_be(&body[..len]), &body[len..]))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    key_id: u64,
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }
}

/// `λ = lcm(p-1, q-1)`, `μ = L(g^λ mod n^2)^{-1} mod n`, plus CRT constants.
#[derive(Clone)]
pub struct SecretKey {
    pk: PublicKey,
    lambda: BigUint,
    mu: BigUint,
    p: BigUint,
    q: BigUint,
    p2: BigUint,
    q2: BigUint,
    hp: BigUint,
    hq: BigUint,
    q_inv_p: BigUint,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecretKey").field("bits", &self.pk.bits()).finish_non_exhaustive()
    }
}

fn l_fn(x: &BigUint, n: &BigUint) -> BigUint {
    (x - 1u32) / n
}

fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    let a = BigInt::from_biguint(Sign::Plus, a % m);
    let m = BigInt::from_biguint(Sign::Plus, m.clone());
    let e = a.extended_gcd(&m);
    if !e.gcd.is_one() {
        return None;
    }
    e.x.mod_floor(&m).to_biguint()
}

impl SecretKey {
    fn from_primes(p: BigUint, q: BigUint) -> Option<Self> {
        if p == q {
            return None;
        }
        let n = &p * &q;
        let one = BigUint::one();
        let (pm1, qm1) = (&p - &one, &q - &one);
        if !n.gcd(&(&pm1 * &qm1)).is_one() {
            return None;
        }
        let pk = PublicKey::from_modulus(n).ok()?;
        let lambda = pm1.lcm(&qm1);
        let mu = mod_inverse(&l_fn(&pk.g().modpow(&lambda, &pk.n2), &pk.n), &pk.n)?;
        let (p2, q2) = (&p * &p, &q * &q);
        let hp = mod_inverse(&l_fn(&pk.g().modpow(&pm1, &p2), &p), &p)?;
        let hq = mod_inverse(&l_fn(&pk.g().modpow(&qm1, &q2), &q), &q)?;
        let q_inv_p = mod_inverse(&q, &p)?;
        Some(SecretKey {
            pk,
            lambda,
            mu,
            p,
            q,
            p2,
            q2,
            hp,
            hq,
            q_inv_p,
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.pk
    }

    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }

    /// `μ · L(g^λ mod n^2) ≡ 1 (mod n)`.
    pub fn is_consistent(&self) -> bool {
        let l = l_fn(&self.pk.g().modpow(&self.lambda, &self.pk.n2), &self.pk.n);
        (l * &self.mu % &self.pk.n).is_one()
    }

    /// CRT decryption.
    pub fn decrypt(&self, ct: &Ciphertext) -> Result<BigUint, PaillierError> {
        self.pk.validate(ct)?;
        let one = BigUint::one();
        let mp = l_fn(&ct.value.modpow(&(&self.p - &one), &self.p2), &self.p) * &self.hp % &self.p;
        let mq = l_fn(&ct.value.modpow(&(&self.q - &one), &self.q2), &self.q) * &self.hq % &self.q;
        // m = mq + q * ((mp - mq) q^{-1} mod p)
        let diff = (&mp + &self.p - (&mq % &self.p)) % &self.p;
        Ok(&mq + &self.q * (diff * &self.q_inv_p % &self.p))
    }

    /// `m = L(c^λ mod n^2) μ mod n`.
    pub fn decrypt_plain(&self, ct: &Ciphertext) -> Result<BigUint, PaillierError> {
        self.pk.validate(ct)?;
        let l = l_fn(&ct.value.modpow(&self.lambda, &self.pk.n2), &self.pk.n);
        Ok(l * &self.mu % &self.pk.n)
    }
}

#[derive(Clone, Debug)]
pub struct PaillierKeypair {
    pub pk: PublicKey,
    pub sk: SecretKey,
}

/// Generates a keypair with an `bits`-bit modulus from two primes of equal
/// length.
pub fn keygen<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> Result<PaillierKeypair, PaillierError> {
    let min = min_key_bits();
    if bits < min || bits % 2 != 0 {
        return Err(PaillierError::KeyTooSmall { bits, min });
    }
    loop {
        let p = primes::random_prime(bits / 2, rng);
        let q = primes::random_prime(bits / 2, rng);
        if let Some(sk) = SecretKey::from_primes(p, q) {
            return Ok(PaillierKeypair {
                pk: sk.pk.clone(),
                sk,
            });
        }
    }
}

/// Maps signed fixed-point values onto `Z_n`: negatives live in the upper
/// half.
#[derive(Clone, Debug)]
pub struct SignedEncoder {
    n: BigUint,
    half: BigUint,
    frac_bits: u32,
    bound: f64,
}

impl SignedEncoder {
    pub fn new(pk: &PublicKey, frac_bits: u32) -> Self {
        let half = pk.n() >> 1u32;
        // 2 B 2^f < n
        let bound = 2f64.powi((pk.bits() as i32 - 3 - frac_bits as i32).min(1000));
        SignedEncoder {
            n: pk.n().clone(),
            half,
            frac_bits,
            bound,
        }
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn encode(&self, x: f64) -> Result<BigUint, PaillierError> {
        if !x.is_finite() || x.abs() > self.bound {
            return Err(PaillierError::Range {
                value: x,
                bound: self.bound,
            });
        }
        let scaled = (x * 2f64.powi(self.frac_bits as i32)).round();
        Ok(self.encode_fixed(&BigInt::from(scaled as i128)))
    }

    /// Encodes an integer already carrying `frac_bits` fractional bits.
    pub fn encode_fixed(&self, v: &BigInt) -> BigUint {
        let mag = v.magnitude() % &self.n;
        if v.is_negative() && !mag.is_zero() {
            &self.n - mag
        } else {
            mag
        }
    }

    pub fn decode_fixed(&self, m: &BigUint) -> BigInt {
        if m > &self.half {
            -BigInt::from_biguint(Sign::Plus, &self.n - m)
        } else {
            BigInt::from_biguint(Sign::Plus, m.clone())
        }
    }

    pub fn decode(&self, m: &BigUint) -> f64 {
        let v = self.decode_fixed(m);
        v.to_f64().unwrap_or(f64::NAN) / 2f64.powi(self.frac_bits as i32)
    }
}

/// Packs several signed fixed-point integers into one plaintext.
///
/// Slot `j` occupies bits `[j w, (j + 1) w)` and stores `v + offset`, so a
/// homomorphic sum of up to `max_addends` packed plaintexts stays within
/// each slot.
#[derive(Clone, Debug)]
pub struct PackedEncoder {
    slot_bits: u32,
    slots: usize,
    max_addends: u32,
    offset: i128,
}

impl PackedEncoder {
    pub fn new(pk: &PublicKey, slot_bits: u32, max_addends: u32) -> Result<Self, PaillierError> {
        let headroom = 32 - max_addends.max(1).saturating_sub(1).leading_zeros();
        if !(8..=120).contains(&slot_bits) || slot_bits <= headroom + 2 {
            return Err(PaillierError::Wire(format!("unusable slot width {slot_bits}")));
        }
        let slots = ((pk.bits() - 1) / slot_bits as u64) as usize;
        if slots == 0 {
            return Err(PaillierError::Wire("modulus smaller than one slot".into()));
        }
        Ok(PackedEncoder {
            slot_bits,
            slots,
            max_addends,
            offset: 1i128 << (slot_bits - 1 - headroom),
        })
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    /// Largest magnitude a packed value may have.
    pub fn value_bound(&self) -> i128 {
        self.offset - 1
    }

    /// Number of plaintexts needed for `count` values.
    pub fn plaintexts_for(&self, count: usize) -> usize {
        count.div_ceil(self.slots)
    }

    pub fn pack(&self, values: &[i64]) -> Result<Vec<BigUint>, PaillierError> {
        values.chunks(self.slots).map(|chunk| self.pack_one(chunk)).collect()
    }

    fn pack_one(&self, chunk: &[i64]) -> Result<BigUint, PaillierError> {
        let mut acc = BigUint::zero();
        for &v in chunk.iter().rev() {
            if (v as i128).abs() > self.value_bound() {
                return Err(PaillierError::Range {
                    value: v as f64,
                    bound: self.value_bound() as f64,
                });
            }
            acc <<= self.slot_bits;
            acc += BigUint::from((v as i128 + self.offset) as u128);
        }
        Ok(acc)
    }

    /// Recovers `count` slot sums from plaintexts that are the sum of
    /// `addends` packed vectors.
    pub fn unpack(&self, plaintexts: &[BigUint], addends: u32, count: usize) -> Result<Vec<i64>, PaillierError> {
        if addends == 0 || addends > self.max_addends {
            return Err(PaillierError::Wire(format!("{addends} addends, encoder allows {}", self.max_addends)));
        }
        let mask = (BigUint::one() << self.slot_bits) - 1u32;
        let bias = self.offset * addends as i128;
        let mut out = Vec::with_capacity(count);
        for m in plaintexts {
            let mut m = m.clone();
            for _ in 0..self.slots {
                if out.len() == count {
                    break;
                }
                let slot = (&m & &mask).to_u128().unwrap_or(0) as i128;
                m >>= self.slot_bits;
                out.push((slot - bias) as i64);
            }
        }
        if out.len() != count {
            return Err(PaillierError::Wire(format!("{} packed values, expected {count}", out.len())));
        }
        Ok(out)
    }
}
