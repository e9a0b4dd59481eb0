//! Additive secret sharing over Z_{2^l}.
//!
//! A secret tensor `a` is split into one [`ShareTensor`] per party so that the
//! elementwise sum of all shares mod `2^l` equals `a`. Addition is local.
//! Multiplication consumes a [`BeaverTriple`] and opens two masked values.
//!
//! For more than two parties the `-e*f` correction of a Beaver product is
//! charged to the lowest [`PartyId`] taking part.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::party::PartyId;
use crate::ring::{FixedPointCodec, Ring};
use crate::transcript::{Phase, ShareChannel};

/// One party's additive share of a tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareTensor {
    pub owner: PartyId,
    pub data: Array2<u64>,
    pub codec: FixedPointCodec,
}

impl ShareTensor {
    pub fn new(owner: PartyId, data: Array2<u64>, codec: FixedPointCodec) -> Self {
        ShareTensor { owner, data, codec }
    }

    pub fn zeros(owner: PartyId, shape: (usize, usize), codec: FixedPointCodec) -> Self {
        ShareTensor { owner, data: Array2::zeros(shape), codec }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn ring(&self) -> Ring {
        self.codec.ring()
    }
}

fn random_ring_matrix<R: Rng + ?Sized>(ring: Ring, shape: (usize, usize), rng: &mut R) -> Array2<u64> {
    Array2::from_shape_simple_fn(shape, || ring.reduce(rng.next_u64()))
}

fn check_distinct(parties: &[PartyId]) -> Result<()> {
    for (i, p) in parties.iter().enumerate() {
        if parties[..i].contains(p) {
            return Err(Error::Protocol(alloc::format!("party {p} listed twice")));
        }
    }
    Ok(())
}

/// Splits `secret` into shares for `parties`. Every share but the last is
/// uniform; the last party's share is `secret - sum(others)`.
pub fn shr<R: Rng + ?Sized>(
    secret: &Array2<u64>,
    parties: &[PartyId],
    codec: FixedPointCodec,
    rng: &mut R,
) -> Result<Vec<ShareTensor>> {
    if parties.len() < 2 {
        return Err(Error::TooFewParties(parties.len()));
    }
    check_distinct(parties)?;
    let ring = codec.ring();
    let mut rest = secret.mapv(|v| ring.reduce(v));
    let mut out = Vec::with_capacity(parties.len());
    for &p in &parties[..parties.len() - 1] {
        let s = random_ring_matrix(ring, secret.dim(), rng);
        rest = ring.sub_matrix(&rest, &s);
        out.push(ShareTensor::new(p, s, codec));
    }
    out.push(ShareTensor::new(parties[parties.len() - 1], rest, codec));
    Ok(out)
}

/// Encodes reals with `codec` and shares them.
pub fn shr_reals<R: Rng + ?Sized>(
    secret: &Array2<f64>,
    parties: &[PartyId],
    codec: FixedPointCodec,
    rng: &mut R,
) -> Result<Vec<ShareTensor>> {
    shr(&codec.encode_matrix(secret)?, parties, codec, rng)
}

/// Sums one share per party mod `2^l`.
pub fn rec(parties: &[PartyId], shares: &[ShareTensor]) -> Result<Array2<u64>> {
    check_distinct(parties)?;
    let first = parties
        .first()
        .and_then(|p| shares.iter().find(|s| s.owner == *p))
        .ok_or(Error::MissingShare(parties.first().copied().unwrap_or(PartyId(0))))?;
    let ring = first.ring();
    let mut acc = Array2::<u64>::zeros(first.shape());
    for &p in parties {
        let s = shares.iter().find(|s| s.owner == p).ok_or(Error::MissingShare(p))?;
        if s.shape() != acc.dim() {
            return Err(Error::shape("rec", acc.dim(), s.shape()));
        }
        ring.add_assign(&mut acc, &s.data);
    }
    for s in shares {
        if !parties.contains(&s.owner) {
            return Err(Error::Protocol(alloc::format!("unexpected share from {}", s.owner)));
        }
    }
    Ok(acc)
}

fn owners(shares: &[ShareTensor]) -> Vec<PartyId> {
    shares.iter().map(|s| s.owner).collect()
}

/// Local addition of two shares held by the same party.
pub fn add_local(a: &ShareTensor, b: &ShareTensor) -> Result<ShareTensor> {
    if a.owner != b.owner {
        return Err(Error::OwnerMismatch { expected: a.owner, found: b.owner });
    }
    if a.shape() != b.shape() {
        return Err(Error::shape("add_local", a.shape(), b.shape()));
    }
    let mut data = a.data.clone();
    a.ring().add_assign(&mut data, &b.data);
    Ok(ShareTensor::new(a.owner, data, a.codec))
}

/// Every party sends its share to every other party; all of them reconstruct.
pub fn reveal_all<C: ShareChannel + ?Sized>(shares: &[ShareTensor], phase: Phase, net: &mut C) -> Result<Array2<u64>> {
    let parties = owners(shares);
    let views = open_broadcast(shares, phase, net)?;
    let value = views.into_iter().next().ok_or(Error::TooFewParties(0))?;
    rec_shape_check(&parties, shares)?;
    Ok(value)
}

/// Every other party sends its share to `receiver`, who reconstructs alone.
pub fn reveal_to<C: ShareChannel + ?Sized>(
    shares: &[ShareTensor],
    receiver: PartyId,
    phase: Phase,
    net: &mut C,
) -> Result<Array2<u64>> {
    let own = shares.iter().find(|s| s.owner == receiver).ok_or(Error::MissingShare(receiver))?;
    let ring = own.ring();
    let bytes = ring.element_bytes();
    let mut acc = own.data.clone();
    for s in shares.iter().filter(|s| s.owner != receiver) {
        if s.shape() != acc.dim() {
            return Err(Error::shape("reveal_to", acc.dim(), s.shape()));
        }
        let got = net.transfer(phase, s.owner, receiver, &s.data, bytes);
        ring.add_assign(&mut acc, &got);
    }
    Ok(acc)
}

fn rec_shape_check(parties: &[PartyId], shares: &[ShareTensor]) -> Result<()> {
    rec(parties, shares).map(|_| ())
}

// Each party broadcasts its share and sums what it receives with its own.
// Returns the reconstructed value as seen by each party, in share order.
fn open_broadcast<C: ShareChannel + ?Sized>(
    shares: &[ShareTensor],
    phase: Phase,
    net: &mut C,
) -> Result<Vec<Array2<u64>>> {
    let first = shares.first().ok_or(Error::TooFewParties(0))?;
    let ring = first.ring();
    let bytes = ring.element_bytes();
    for s in shares {
        if s.shape() != first.shape() {
            return Err(Error::shape("open", first.shape(), s.shape()));
        }
    }
    let mut views: Vec<Array2<u64>> = shares.iter().map(|s| s.data.clone()).collect();
    for (i, sender) in shares.iter().enumerate() {
        for (j, receiver) in shares.iter().enumerate() {
            if i == j {
                continue;
            }
            let got = net.transfer(phase, sender.owner, receiver.owner, &sender.data, bytes);
            ring.add_assign(&mut views[j], &got);
        }
    }
    Ok(views)
}

/// How a triple is meant to be consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleShape {
    /// `z = u * w` elementwise, all of shape `(rows, cols)`.
    Elementwise(usize, usize),
    /// `z = u . w` with `u: n x k`, `w: k x m`.
    MatMul(usize, usize, usize),
}

impl TripleShape {
    fn operand_shapes(self) -> ((usize, usize), (usize, usize)) {
        match self {
            TripleShape::Elementwise(r, c) => ((r, c), (r, c)),
            TripleShape::MatMul(n, k, m) => ((n, k), (k, m)),
        }
    }
}

/// Shared multiplication triple `(u, w, z)` with `z = u * w` (or `u . w`).
#[derive(Debug, Clone)]
pub struct BeaverTriple {
    pub shape: TripleShape,
    pub u: Vec<ShareTensor>,
    pub w: Vec<ShareTensor>,
    pub z: Vec<ShareTensor>,
    consumed: bool,
}

impl BeaverTriple {
    /// Shares a triple built from the given plaintext `u` and `w`. Generation
    /// normally draws them uniformly; tests may force values.
    pub fn from_plain<R: Rng + ?Sized>(
        shape: TripleShape,
        u: Array2<u64>,
        w: Array2<u64>,
        parties: &[PartyId],
        codec: FixedPointCodec,
        rng: &mut R,
    ) -> Result<Self> {
        let (su, sw) = shape.operand_shapes();
        if u.dim() != su {
            return Err(Error::shape("triple u", su, u.dim()));
        }
        if w.dim() != sw {
            return Err(Error::shape("triple w", sw, w.dim()));
        }
        let ring = codec.ring();
        let z = match shape {
            TripleShape::Elementwise(..) => ring.hadamard(&u, &w),
            TripleShape::MatMul(..) => ring.matmul(&u, &w)?,
        };
        Ok(BeaverTriple {
            shape,
            u: shr(&u, parties, codec, rng)?,
            w: shr(&w, parties, codec, rng)?,
            z: shr(&z, parties, codec, rng)?,
            consumed: false,
        })
    }

    pub fn parties(&self) -> Vec<PartyId> {
        owners(&self.u)
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn share_of(list: &[ShareTensor], p: PartyId) -> Result<&ShareTensor> {
        list.iter().find(|s| s.owner == p).ok_or(Error::MissingShare(p))
    }
}

/// Trusted-dealer triple generation: `u`, `w` uniform, `z = u * w`.
pub fn triple_gen<R: Rng + ?Sized>(
    shape: TripleShape,
    parties: &[PartyId],
    codec: FixedPointCodec,
    rng: &mut R,
) -> Result<BeaverTriple> {
    let ring = codec.ring();
    let (su, sw) = shape.operand_shapes();
    let u = random_ring_matrix(ring, su, rng);
    let w = random_ring_matrix(ring, sw, rng);
    BeaverTriple::from_plain(shape, u, w, parties, codec, rng)
}

/// Supplies single-use triples on request.
pub trait TripleSource {
    fn triple(&mut self, shape: TripleShape, parties: &[PartyId]) -> Result<BeaverTriple>;
}

/// Unbounded seeded dealer.
#[derive(Debug, Clone)]
pub struct TrustedDealer {
    rng: ChaCha8Rng,
    codec: FixedPointCodec,
    issued: u64,
}

impl TrustedDealer {
    pub fn new(seed: u64, codec: FixedPointCodec) -> Self {
        TrustedDealer { rng: ChaCha8Rng::seed_from_u64(seed), codec, issued: 0 }
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }
}

impl TripleSource for TrustedDealer {
    fn triple(&mut self, shape: TripleShape, parties: &[PartyId]) -> Result<BeaverTriple> {
        self.issued += 1;
        triple_gen(shape, parties, self.codec, &mut self.rng)
    }
}

/// Finite set of pre-generated triples, handed out in order.
#[derive(Debug, Default)]
pub struct TriplePool {
    triples: VecDeque<BeaverTriple>,
}

impl TriplePool {
    pub fn new(triples: Vec<BeaverTriple>) -> Self {
        TriplePool { triples: triples.into() }
    }

    pub fn remaining(&self) -> usize {
        self.triples.len()
    }
}

impl TripleSource for TriplePool {
    fn triple(&mut self, shape: TripleShape, parties: &[PartyId]) -> Result<BeaverTriple> {
        let t = self.triples.pop_front().ok_or(Error::TripleExhausted)?;
        if t.shape != shape {
            let ((a, _), (_, b)) = shape.operand_shapes();
            let ((c, _), (_, d)) = t.shape.operand_shapes();
            return Err(Error::shape("pooled triple", (a, b), (c, d)));
        }
        if t.parties() != parties {
            return Err(Error::Protocol("pooled triple was dealt to other parties".into()));
        }
        Ok(t)
    }
}

fn lowest(parties: &[PartyId]) -> PartyId {
    parties.iter().copied().min().unwrap_or(PartyId(0))
}

fn beaver<C: ShareChannel + ?Sized>(
    a: &[ShareTensor],
    b: &[ShareTensor],
    triple: &mut BeaverTriple,
    net: &mut C,
) -> Result<Vec<ShareTensor>> {
    if triple.consumed {
        return Err(Error::TripleReused);
    }
    let parties = owners(a);
    if parties.len() < 2 {
        return Err(Error::TooFewParties(parties.len()));
    }
    if owners(b) != parties || triple.parties() != parties {
        return Err(Error::Protocol("operands and triple must be shared among the same parties".into()));
    }
    let (sa, sb) = triple.shape.operand_shapes();
    for s in a {
        if s.shape() != sa {
            return Err(Error::shape("beaver lhs", sa, s.shape()));
        }
    }
    for s in b {
        if s.shape() != sb {
            return Err(Error::shape("beaver rhs", sb, s.shape()));
        }
    }
    triple.consumed = true;

    let codec = a[0].codec;
    let ring = codec.ring();
    let mut e_shares = Vec::with_capacity(parties.len());
    let mut f_shares = Vec::with_capacity(parties.len());
    for (ai, bi) in a.iter().zip(b) {
        let u = BeaverTriple::share_of(&triple.u, ai.owner)?;
        let w = BeaverTriple::share_of(&triple.w, ai.owner)?;
        e_shares.push(ShareTensor::new(ai.owner, ring.sub_matrix(&ai.data, &u.data), codec));
        f_shares.push(ShareTensor::new(bi.owner, ring.sub_matrix(&bi.data, &w.data), codec));
    }
    // two openings; every party broadcasts its e and f shares
    let e_views = open_broadcast(&e_shares, Phase::BeaverReveal, net)?;
    let f_views = open_broadcast(&f_shares, Phase::BeaverReveal, net)?;

    let designated = lowest(&parties);
    let mut out = Vec::with_capacity(parties.len());
    for (idx, (ai, bi)) in a.iter().zip(b).enumerate() {
        let (e, f) = (&e_views[idx], &f_views[idx]);
        let z = BeaverTriple::share_of(&triple.z, ai.owner)?;
        let mut c = z.data.clone();
        match triple.shape {
            TripleShape::Elementwise(..) => {
                ring.add_assign(&mut c, &ring.hadamard(f, &ai.data));
                ring.add_assign(&mut c, &ring.hadamard(e, &bi.data));
                if ai.owner == designated {
                    c = ring.sub_matrix(&c, &ring.hadamard(e, f));
                }
            }
            TripleShape::MatMul(..) => {
                ring.add_assign(&mut c, &ring.matmul(&ai.data, f)?);
                ring.add_assign(&mut c, &ring.matmul(e, &bi.data)?);
                if ai.owner == designated {
                    c = ring.sub_matrix(&c, &ring.matmul(e, f)?);
                }
            }
        }
        out.push(ShareTensor::new(ai.owner, c, codec));
    }
    Ok(out)
}

/// Elementwise product of two shared tensors. The result is exact in the
/// ring; for fixed-point operands follow with [`truncate_shares`].
pub fn mul_beaver<C: ShareChannel + ?Sized>(
    a: &[ShareTensor],
    b: &[ShareTensor],
    triple: &mut BeaverTriple,
    net: &mut C,
) -> Result<Vec<ShareTensor>> {
    if !matches!(triple.shape, TripleShape::Elementwise(..)) {
        return Err(Error::Protocol("mul_beaver needs an elementwise triple".into()));
    }
    beaver(a, b, triple, net)
}

/// Matrix product of two shared matrices with a matrix triple.
pub fn matmul_beaver<C: ShareChannel + ?Sized>(
    a: &[ShareTensor],
    b: &[ShareTensor],
    triple: &mut BeaverTriple,
    net: &mut C,
) -> Result<Vec<ShareTensor>> {
    if !matches!(triple.shape, TripleShape::MatMul(..)) {
        return Err(Error::Protocol("matmul_beaver needs a matrix triple".into()));
    }
    beaver(a, b, triple, net)
}

/// Drops `f` fractional bits from shares carrying `2f`.
///
/// With two parties each share is shifted locally, which is off by at most one
/// unit in the last place except with probability about `|x| / 2^(l-1)`. With
/// more parties the shares of every party after the first two are first handed
/// to the second party, which keeps the sharing uniform for any single party,
/// and then the two remaining shares are shifted.
pub fn truncate_shares<C: ShareChannel + ?Sized>(shares: &[ShareTensor], net: &mut C) -> Result<Vec<ShareTensor>> {
    if shares.len() < 2 {
        return Err(Error::TooFewParties(shares.len()));
    }
    let mut sorted: Vec<ShareTensor> = shares.to_vec();
    sorted.sort_by_key(|s| s.owner);
    let ring = sorted[0].ring();
    let bytes = ring.element_bytes();
    if sorted.len() > 2 {
        let collector = sorted[1].owner;
        let mut acc = sorted[1].data.clone();
        for s in sorted.iter_mut().skip(2) {
            let got = net.transfer(Phase::Truncation, s.owner, collector, &s.data, bytes);
            ring.add_assign(&mut acc, &got);
            s.data.fill(0);
        }
        sorted[1].data = acc;
    }
    let out = sorted
        .into_iter()
        .map(|s| {
            let data = s.codec.truncate_matrix(&s.data);
            ShareTensor::new(s.owner, data, s.codec)
        })
        .collect::<Vec<_>>();
    // restore caller order
    Ok(shares
        .iter()
        .map(|orig| out.iter().find(|s| s.owner == orig.owner).cloned().expect("owner present"))
        .collect())
}

/// Fixed-point elementwise product: Beaver multiplication then truncation.
pub fn mul_fixed<C: ShareChannel + ?Sized>(
    a: &[ShareTensor],
    b: &[ShareTensor],
    triple: &mut BeaverTriple,
    net: &mut C,
) -> Result<Vec<ShareTensor>> {
    let raw = mul_beaver(a, b, triple, net)?;
    truncate_shares(&raw, net)
}

/// Shared product `X . W` where each party `i` holds `<X>_i` and `<W>_i`.
///
/// Diagonal terms `<X>_i . <W>_i` are computed locally. Every cross term
/// `<X>_i . <W>_j` (`i != j`) is a two-party Beaver product between `i` and
/// `j` in which `i` inputs its `X` share and `j` its `W` share. The output
/// carries `2f` fractional bits; see [`matmul_shared`] for the truncated form.
pub fn matmul_shared_raw<C: ShareChannel + ?Sized, T: TripleSource + ?Sized>(
    x: &[ShareTensor],
    w: &[ShareTensor],
    triples: &mut T,
    net: &mut C,
) -> Result<Vec<ShareTensor>> {
    let parties = owners(x);
    if parties.is_empty() {
        return Err(Error::TooFewParties(0));
    }
    check_distinct(&parties)?;
    let (n, k) = x[0].shape();
    let wk = w.first().map(|s| s.shape()).ok_or(Error::MissingShare(parties[0]))?;
    let (k2, m) = wk;
    if k != k2 {
        return Err(Error::shape("matmul_shared", (k, m), (k2, m)));
    }
    for s in x {
        if s.shape() != (n, k) {
            return Err(Error::shape("matmul_shared lhs", (n, k), s.shape()));
        }
    }
    for s in w {
        if s.shape() != (k, m) {
            return Err(Error::shape("matmul_shared rhs", (k, m), s.shape()));
        }
    }
    let codec = x[0].codec;
    let ring = codec.ring();
    let w_of = |p: PartyId| w.iter().find(|s| s.owner == p).ok_or(Error::MissingShare(p));

    let mut acc: Vec<ShareTensor> = Vec::with_capacity(parties.len());
    for xi in x {
        let wi = w_of(xi.owner)?;
        acc.push(ShareTensor::new(xi.owner, ring.matmul(&xi.data, &wi.data)?, codec));
    }
    for xi in x {
        for wj in w {
            if wj.owner == xi.owner {
                continue;
            }
            let (i, j) = (xi.owner, wj.owner);
            let pair = if i < j { vec![i, j] } else { vec![j, i] };
            let lhs: Vec<ShareTensor> = pair
                .iter()
                .map(|&p| if p == i { xi.clone() } else { ShareTensor::zeros(p, (n, k), codec) })
                .collect();
            let rhs: Vec<ShareTensor> = pair
                .iter()
                .map(|&p| if p == j { wj.clone() } else { ShareTensor::zeros(p, (k, m), codec) })
                .collect();
            let mut triple = triples.triple(TripleShape::MatMul(n, k, m), &pair)?;
            let cross = matmul_beaver(&lhs, &rhs, &mut triple, net)?;
            for c in cross {
                let slot = acc.iter_mut().find(|s| s.owner == c.owner).expect("pair member");
                ring.add_assign(&mut slot.data, &c.data);
            }
        }
    }
    Ok(acc)
}

/// [`matmul_shared_raw`] followed by [`truncate_shares`].
pub fn matmul_shared<C: ShareChannel + ?Sized, T: TripleSource + ?Sized>(
    x: &[ShareTensor],
    w: &[ShareTensor],
    triples: &mut T,
    net: &mut C,
) -> Result<Vec<ShareTensor>> {
    let raw = matmul_shared_raw(x, w, triples, net)?;
    if raw.len() < 2 {
        return Ok(raw
            .into_iter()
            .map(|s| {
                let data = s.codec.truncate_matrix(&s.data);
                ShareTensor::new(s.owner, data, s.codec)
            })
            .collect());
    }
    truncate_shares(&raw, net)
}

/// `<X>_i^T . P` for a public matrix `P`; local, no messages. Output carries `2f` bits.
pub fn transpose_matmul_public(x: &ShareTensor, public: &Array2<u64>) -> Result<ShareTensor> {
    let xt = x.data.t().to_owned();
    let out = x.ring().matmul(&xt, public)?;
    Ok(ShareTensor::new(x.owner, out, x.codec))
}
