use rand::Rng;

use super::{shr_matrix, PairwiseChannel, Party, Share, ShareError, ShareMatrix};
use crate::fixedpoint::{FixedPointCodec, Ring, RingMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripleShape {
    Scalar,
    /// `u: n x d`, `v: d x m`, `w: n x m`.
    Matrix { n: usize, d: usize, m: usize },
}

impl TripleShape {
    fn dims(self) -> (usize, usize, usize) {
        match self {
            TripleShape::Scalar => (1, 1, 1),
            TripleShape::Matrix { n, d, m } => (n, d, m),
        }
    }
}

/// One party's half of a multiplication triple `w = u * v`.
///
/// Scalar triples are stored as `1 x 1` matrices. A triple may be used for
/// exactly one multiplication.
#[derive(Clone, Debug)]
pub struct BeaverTriple {
    party: Party,
    u: RingMatrix,
    v: RingMatrix,
    w: RingMatrix,
    consumed: bool,
}

impl BeaverTriple {
    pub fn new(party: Party, u: RingMatrix, v: RingMatrix, w: RingMatrix) -> Result<Self, ShareError> {
        let (n, d) = u.shape();
        if v.rows() != d || w.shape() != (n, v.cols()) {
            return Err(ShareError::TripleShapeMismatch {
                expected: format!("({n}x{d}, {d}x_, {n}x_)"),
                found: format!("({:?}, {:?}, {:?})", u.shape(), v.shape(), w.shape()),
            });
        }
        Ok(BeaverTriple {
            party,
            u,
            v,
            w,
            consumed: false,
        })
    }

    pub fn party(&self) -> Party {
        self.party
    }

    /// `(n, d, m)` of the product this triple supports.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.u.rows(), self.u.cols(), self.v.cols())
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn u(&self) -> &RingMatrix {
        &self.u
    }

    pub fn v(&self) -> &RingMatrix {
        &self.v
    }

    pub fn w(&self) -> &RingMatrix {
        &self.w
    }

    fn consume(&mut self) -> Result<(), ShareError> {
        if self.consumed {
            return Err(ShareError::TripleReuse);
        }
        self.consumed = true;
        Ok(())
    }
}

/// Trusted dealer generating correlated randomness for both parties.
#[derive(Debug)]
pub struct TrustedDealer<R> {
    ring: Ring,
    rng: R,
    issued: u64,
}

impl<R: Rng> TrustedDealer<R> {
    pub fn new(ring: Ring, rng: R) -> Self {
        TrustedDealer { ring, rng, issued: 0 }
    }

    pub fn triple(&mut self, shape: TripleShape) -> (BeaverTriple, BeaverTriple) {
        let (n, d, m) = shape.dims();
        let u = RingMatrix::random(self.ring, n, d, &mut self.rng);
        let v = RingMatrix::random(self.ring, d, m, &mut self.rng);
        let w = u.matmul(&v).expect("dealer shapes agree");
        let (u0, u1) = shr_matrix(&u, &mut self.rng);
        let (v0, v1) = shr_matrix(&v, &mut self.rng);
        let (w0, w1) = shr_matrix(&w, &mut self.rng);
        self.issued += 1;
        (
            BeaverTriple::new(Party::P0, u0.into_matrix(), v0.into_matrix(), w0.into_matrix())
                .expect("dealer shapes agree"),
            BeaverTriple::new(Party::P1, u1.into_matrix(), v1.into_matrix(), w1.into_matrix())
                .expect("dealer shapes agree"),
        )
    }

    /// Number of triples handed out so far.
    pub fn issued(&self) -> u64 {
        self.issued
    }
}

pub fn dealer_gen_triples<R: Rng + ?Sized>(
    ring: Ring,
    count: usize,
    shape: TripleShape,
    rng: &mut R,
) -> (Vec<BeaverTriple>, Vec<BeaverTriple>) {
    let mut dealer = TrustedDealer::new(ring, rng);
    (0..count).map(|_| dealer.triple(shape)).unzip()
}

/// The masked values `e = x - u`, `f = y - v` one party publishes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeaverOpening {
    pub e: RingMatrix,
    pub f: RingMatrix,
}

/// One party's state between publishing its opening and receiving the peer's.
#[derive(Debug)]
pub struct PendingProduct {
    party: Party,
    x: RingMatrix,
    y: RingMatrix,
    w: RingMatrix,
    opening: BeaverOpening,
}

impl PendingProduct {
    /// Masks this party's shares of `x` (`n x d`) and `y` (`d x m`) with the
    /// triple, consuming it.
    pub fn open(
        party: Party,
        x: &RingMatrix,
        y: &RingMatrix,
        triple: &mut BeaverTriple,
    ) -> Result<Self, ShareError> {
        if triple.party != party {
            return Err(ShareError::PartyMismatch(party.index()));
        }
        if x.cols() != y.rows() {
            return Err(ShareError::DimensionMismatch(format!(
                "beaver product {:?} x {:?}",
                x.shape(),
                y.shape()
            )));
        }
        if x.shape() != triple.u.shape() || y.shape() != triple.v.shape() {
            return Err(ShareError::TripleShapeMismatch {
                expected: format!("{:?}", triple.dims()),
                found: format!("{:?} x {:?}", x.shape(), y.shape()),
            });
        }
        triple.consume()?;
        let opening = BeaverOpening {
            e: x.sub(&triple.u)?,
            f: y.sub(&triple.v)?,
        };
        Ok(PendingProduct {
            party,
            x: x.clone(),
            y: y.clone(),
            w: triple.w.clone(),
            opening,
        })
    }

    pub fn opening(&self) -> &BeaverOpening {
        &self.opening
    }

    /// Combines both openings into this party's share of `x * y`
    /// (untruncated).
    pub fn finish(self, peer: &BeaverOpening) -> Result<RingMatrix, ShareError> {
        let e = self.opening.e.add(&peer.e)?;
        let f = self.opening.f.add(&peer.f)?;
        let mut z = self.x.matmul(&f)?;
        z.add_assign(&e.matmul(&self.y)?)?;
        z.add_assign(&self.w)?;
        if self.party == Party::P1 {
            z.sub_assign(&e.matmul(&f)?)?;
        }
        Ok(z)
    }
}

/// Secure scalar product `a * b` of shared values.
pub fn beaver_mul(
    ring: Ring,
    a: (Share, Share),
    b: (Share, Share),
    triple: (&mut BeaverTriple, &mut BeaverTriple),
    ch: &mut PairwiseChannel,
) -> Result<(Share, Share), ShareError> {
    let one = |s: Share| RingMatrix::from_raw(ring, 1, 1, vec![s.value.value()]);
    if a.0.party == a.1.party {
        return Err(ShareError::PartyMismatch(a.0.party.index()));
    }
    let ((a0, a1), (b0, b1)) = ordered(a, b);
    let p0 = PendingProduct::open(Party::P0, &one(a0)?, &one(b0)?, triple.0)?;
    let p1 = PendingProduct::open(Party::P1, &one(a1)?, &one(b1)?, triple.1)?;
    ch.send_matrices(Party::P0, &[&p0.opening.e, &p0.opening.f])?;
    ch.send_matrices(Party::P1, &[&p1.opening.e, &p1.opening.f])?;
    let from1 = ch.recv_matrices(Party::P0)?;
    let from0 = ch.recv_matrices(Party::P1)?;
    let z0 = p0.finish(&as_opening(from1)?)?;
    let z1 = p1.finish(&as_opening(from0)?)?;
    Ok((
        Share {
            party: Party::P0,
            value: z0.get(0, 0),
        },
        Share {
            party: Party::P1,
            value: z1.get(0, 0),
        },
    ))
}

fn ordered(a: (Share, Share), b: (Share, Share)) -> ((Share, Share), (Share, Share)) {
    let sort = |p: (Share, Share)| if p.0.party == Party::P0 { p } else { (p.1, p.0) };
    (sort(a), sort(b))
}

fn as_opening(mut mats: Vec<RingMatrix>) -> Result<BeaverOpening, ShareError> {
    if mats.len() != 2 {
        return Err(ShareError::MalformedPayload(format!(
            "expected 2 matrices in an opening, got {}",
            mats.len()
        )));
    }
    let f = mats.pop().unwrap();
    let e = mats.pop().unwrap();
    Ok(BeaverOpening { e, f })
}

/// One party's side of the shared product `X * theta` computed as
/// `<X>_i <theta>_i` locally plus the two cross terms `<X>_0 <theta>_1` and
/// `<X>_1 <theta>_0`, each through a matrix Beaver triple.
///
/// In each cross term one factor is known to a single party, so it enters
/// the Beaver product as the trivial sharing `(value, 0)`.
#[derive(Debug)]
pub struct CrossTermParty {
    party: Party,
    local: RingMatrix,
    pending: [PendingProduct; 2],
}

impl CrossTermParty {
    /// `triples[0]` serves `<X>_0 <theta>_1`, `triples[1]` serves
    /// `<X>_1 <theta>_0`; both parties must pass them in the same order.
    pub fn start(
        party: Party,
        x_share: &RingMatrix,
        theta_share: &RingMatrix,
        triples: [&mut BeaverTriple; 2],
    ) -> Result<Self, ShareError> {
        let local = x_share.matmul(theta_share)?;
        let ring = x_share.ring();
        let zero_x = RingMatrix::zeros(ring, x_share.rows(), x_share.cols());
        let zero_t = RingMatrix::zeros(ring, theta_share.rows(), theta_share.cols());
        let [t0, t1] = triples;
        let pending = match party {
            Party::P0 => [
                PendingProduct::open(party, x_share, &zero_t, t0)?,
                PendingProduct::open(party, &zero_x, theta_share, t1)?,
            ],
            Party::P1 => [
                PendingProduct::open(party, &zero_x, theta_share, t0)?,
                PendingProduct::open(party, x_share, &zero_t, t1)?,
            ],
        };
        Ok(CrossTermParty {
            party,
            local,
            pending,
        })
    }

    pub fn party(&self) -> Party {
        self.party
    }

    pub fn openings(&self) -> [&BeaverOpening; 2] {
        [self.pending[0].opening(), self.pending[1].opening()]
    }

    /// This party's untruncated share of `X * theta`.
    pub fn finish(self, peer: [&BeaverOpening; 2]) -> Result<RingMatrix, ShareError> {
        let [p0, p1] = self.pending;
        let mut acc = self.local;
        acc.add_assign(&p0.finish(peer[0])?)?;
        acc.add_assign(&p1.finish(peer[1])?)?;
        Ok(acc)
    }
}

type TriplePair<'a> = (&'a mut BeaverTriple, &'a mut BeaverTriple);

/// Shared matrix product without the final truncation.
pub fn matmul_shared_untruncated(
    x: (&ShareMatrix, &ShareMatrix),
    theta: (&ShareMatrix, &ShareMatrix),
    triples: [TriplePair<'_>; 2],
    ch: &mut PairwiseChannel,
) -> Result<(ShareMatrix, ShareMatrix), ShareError> {
    let (x0, x1) = by_party(x)?;
    let (t0, t1) = by_party(theta)?;
    if x0.shape() != x1.shape() || t0.shape() != t1.shape() {
        return Err(ShareError::DimensionMismatch(
            "share pair halves differ in shape".into(),
        ));
    }
    if x0.shape().1 != t0.shape().0 {
        return Err(ShareError::DimensionMismatch(format!(
            "matmul_shared: {:?} x {:?}",
            x0.shape(),
            t0.shape()
        )));
    }
    let [(a0, a1), (b0, b1)] = triples;
    let (a0, a1) = sort_triples(a0, a1);
    let (b0, b1) = sort_triples(b0, b1);
    let s0 = CrossTermParty::start(Party::P0, x0.matrix(), t0.matrix(), [a0, b0])?;
    let s1 = CrossTermParty::start(Party::P1, x1.matrix(), t1.matrix(), [a1, b1])?;
    for (state, party) in [(&s0, Party::P0), (&s1, Party::P1)] {
        for op in state.openings() {
            ch.send_matrices(party, &[&op.e, &op.f])?;
        }
    }
    let from1 = [
        as_opening(ch.recv_matrices(Party::P0)?)?,
        as_opening(ch.recv_matrices(Party::P0)?)?,
    ];
    let from0 = [
        as_opening(ch.recv_matrices(Party::P1)?)?,
        as_opening(ch.recv_matrices(Party::P1)?)?,
    ];
    let z0 = s0.finish([&from1[0], &from1[1]])?;
    let z1 = s1.finish([&from0[0], &from0[1]])?;
    Ok((ShareMatrix::new(Party::P0, z0), ShareMatrix::new(Party::P1, z1)))
}

/// Shared fixed-point product: [`matmul_shared_untruncated`] followed by
/// share-local truncation by the codec's fractional bits.
pub fn matmul_shared(
    x: (&ShareMatrix, &ShareMatrix),
    theta: (&ShareMatrix, &ShareMatrix),
    triples: [TriplePair<'_>; 2],
    codec: &FixedPointCodec,
    ch: &mut PairwiseChannel,
) -> Result<(ShareMatrix, ShareMatrix), ShareError> {
    let (z0, z1) = matmul_shared_untruncated(x, theta, triples, ch)?;
    Ok((
        ShareMatrix::new(Party::P0, z0.matrix().truncate_share(codec, 0)),
        ShareMatrix::new(Party::P1, z1.matrix().truncate_share(codec, 1)),
    ))
}

fn by_party<'a>(
    pair: (&'a ShareMatrix, &'a ShareMatrix),
) -> Result<(&'a ShareMatrix, &'a ShareMatrix), ShareError> {
    match (pair.0.party(), pair.1.party()) {
        (Party::P0, Party::P1) => Ok(pair),
        (Party::P1, Party::P0) => Ok((pair.1, pair.0)),
        (p, _) => Err(ShareError::PartyMismatch(p.index())),
    }
}

fn sort_triples<'a>(
    a: &'a mut BeaverTriple,
    b: &'a mut BeaverTriple,
) -> (&'a mut BeaverTriple, &'a mut BeaverTriple) {
    if a.party == Party::P0 {
        (a, b)
    } else {
        (b, a)
    }
}
