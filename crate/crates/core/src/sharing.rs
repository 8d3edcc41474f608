//! Two-party additive secret sharing over `Z_q`.
//!
//! A secret `x` is held as `x_A + x_B = x (mod q)` by workers A and B.
//! Linear operations are local. Share-by-share products use dealer-issued
//! Beaver triples, fixed-point rescaling uses dealer-issued truncation pairs,
//! and ReLU obtains a blinded sign bit from the dealer.
//!
//! Interactive operations come in two flavours: split `*_open` / `*_finish`
//! halves that never touch a channel, and convenience wrappers that run the
//! exchange over a [`PeerLink`].

use std::collections::HashSet;
use std::fmt;
use std::sync::mpsc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ProtocolError, Result};
use crate::ring::{FixedPointCodec, RingElement, RingModulus, RingTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WorkerId {
    A,
    B,
}

impl WorkerId {
    pub fn peer(self) -> WorkerId {
        match self {
            WorkerId::A => WorkerId::B,
            WorkerId::B => WorkerId::A,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            WorkerId::A => 0,
            WorkerId::B => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<WorkerId> {
        match tag {
            0 => Some(WorkerId::A),
            1 => Some(WorkerId::B),
            _ => None,
        }
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkerId::A => f.write_str("A"),
            WorkerId::B => f.write_str("B"),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct SessionId(pub [u8; 16]);

impl SessionId {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut id = [0u8; 16];
        rng.fill(&mut id);
        SessionId(id)
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionId({self})")
    }
}

/// One worker's additive share of a ring tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdditiveShare {
    holder: WorkerId,
    session: SessionId,
    value: RingTensor,
}

impl AdditiveShare {
    pub fn new(holder: WorkerId, session: SessionId, value: RingTensor) -> Self {
        AdditiveShare {
            holder,
            session,
            value,
        }
    }

    pub fn holder(&self) -> WorkerId {
        self.holder
    }

    pub fn session(&self) -> SessionId {
        self.session
    }

    pub fn value(&self) -> &RingTensor {
        &self.value
    }

    pub fn into_value(self) -> RingTensor {
        self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    fn with_value(&self, value: RingTensor) -> AdditiveShare {
        AdditiveShare {
            holder: self.holder,
            session: self.session,
            value,
        }
    }

    fn check_local(&self, other: &AdditiveShare) -> Result<()> {
        if self.holder != other.holder {
            return Err(ProtocolError::HolderMismatch.into());
        }
        if self.session != other.session {
            return Err(ProtocolError::SessionMismatch.into());
        }
        Ok(())
    }
}

/// Splits `secret` into a uniformly random share for A and the
/// complementary share for B.
pub fn split_secret<R: Rng + ?Sized>(
    secret: &RingTensor,
    session: SessionId,
    rng: &mut R,
) -> (AdditiveShare, AdditiveShare) {
    let m = secret.modulus();
    let a = RingTensor::random(m, secret.shape().to_vec(), rng);
    let b = secret.sub(&a).expect("same shape and modulus");
    (
        AdditiveShare::new(WorkerId::A, session, a),
        AdditiveShare::new(WorkerId::B, session, b),
    )
}

pub fn reconstruct(a: &AdditiveShare, b: &AdditiveShare) -> Result<RingTensor> {
    if a.holder == b.holder {
        return Err(ProtocolError::Unpaired.into());
    }
    if a.session != b.session {
        return Err(ProtocolError::SessionMismatch.into());
    }
    Ok(a.value.add(&b.value)?)
}

pub fn add_shares(a: &AdditiveShare, b: &AdditiveShare) -> Result<AdditiveShare> {
    a.check_local(b)?;
    Ok(a.with_value(a.value.add(&b.value)?))
}

pub fn sub_shares(a: &AdditiveShare, b: &AdditiveShare) -> Result<AdditiveShare> {
    a.check_local(b)?;
    Ok(a.with_value(a.value.sub(&b.value)?))
}

pub fn mul_public(a: &AdditiveShare, c: RingElement) -> Result<AdditiveShare> {
    if c.modulus() != a.value.modulus() {
        return Err(crate::ring::RingError::ModulusMismatch {
            left: a.value.modulus().value(),
            right: c.modulus().value(),
        }
        .into());
    }
    Ok(a.with_value(a.value.scale(c.value())))
}

/// Adds a public tensor: worker A absorbs it, B's share is unchanged.
pub fn add_public(a: &AdditiveShare, c: &RingTensor) -> Result<AdditiveShare> {
    match a.holder {
        WorkerId::A => Ok(a.with_value(a.value.add(c)?)),
        WorkerId::B => {
            if a.value.shape() != c.shape() {
                return Err(ProtocolError::Shape {
                    left: a.shape().to_vec(),
                    right: c.shape().to_vec(),
                }
                .into());
            }
            Ok(a.clone())
        }
    }
}

/// Identity of one piece of dealer material; never consumed twice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MaterialId(pub u64);

impl fmt::Display for MaterialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TripleKind {
    /// `q3 = q1 ∘ q2` element-wise.
    Elementwise,
    /// `q3 = q1 · q2`, `q1` of shape `[p, r]`, `q2` of shape `[r, c]`.
    Matrix,
}

/// One worker's shares of a multiplication triple.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeaverTriple {
    pub id: MaterialId,
    pub holder: WorkerId,
    pub kind: TripleKind,
    pub q1: RingTensor,
    pub q2: RingTensor,
    pub q3: RingTensor,
}

/// Shares of the blinded differences `α = x - q1`, `β = y - q2`, or their
/// public reconstruction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpenedPair {
    pub alpha: RingTensor,
    pub beta: RingTensor,
}

/// One worker's shares of a batch of truncation masks.
///
/// Entry `i` holds shares of a uniform `r_i`, of `floor(lift(r_i) / f)`, and
/// of the one-hot encoding (length `f`) of `lift(r_i) mod f`. The one-hot
/// vector lets the workers compute the borrow out of the low digit without
/// opening anything, so the rescale is exact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncationPairs {
    pub id: MaterialId,
    pub holder: WorkerId,
    pub scale: u64,
    pub r: Vec<u64>,
    pub r_trunc: Vec<u64>,
    pub low_digit: Vec<u64>,
}

impl TruncationPairs {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// Material for one vector of ReLU evaluations: three element-wise triples
/// for the blinding product, the masked value, and the final selection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReluMask {
    pub blind: BeaverTriple,
    pub mask: BeaverTriple,
    pub select: BeaverTriple,
}

impl ReluMask {
    pub fn len(&self) -> usize {
        self.select.q1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bit width of each worker's private positive blinding factor in ReLU.
pub const BLIND_BITS: u32 = 16;

/// Exclusive bound on `|lift(x)|` for which ReLU is exact: the blinded
/// product `ρ_A ρ_B x` must stay inside the centered range.
pub fn relu_input_bound(m: RingModulus) -> u64 {
    m.half() >> (2 * BLIND_BITS)
}

/// Exclusive bound on `|lift(z)|` for exact truncation.
pub fn truncation_input_bound(m: RingModulus, scale: u64) -> u64 {
    m.value() / (4 * scale)
}

/// Exchange of opening shares with the other worker.
pub trait PeerLink {
    /// Sends this worker's shares and returns the peer's, in order.
    fn exchange(&mut self, mine: &[&RingTensor]) -> Result<Vec<RingTensor>>;
}

/// Sign retrieval through the dealer: submit a share of a blinded value,
/// receive a fresh share of the bit `[lift(m) >= 0]`.
pub trait SignOracle {
    fn sign_bits(&mut self, masked: &RingTensor) -> Result<RingTensor>;
}

impl<T: PeerLink + ?Sized> PeerLink for &mut T {
    fn exchange(&mut self, mine: &[&RingTensor]) -> Result<Vec<RingTensor>> {
        (**self).exchange(mine)
    }
}

impl<T: SignOracle + ?Sized> SignOracle for &mut T {
    fn sign_bits(&mut self, masked: &RingTensor) -> Result<RingTensor> {
        (**self).sign_bits(masked)
    }
}

/// Per-worker state for interactive share arithmetic within one session.
#[derive(Debug)]
pub struct WorkerContext {
    holder: WorkerId,
    session: SessionId,
    codec: FixedPointCodec,
    used: HashSet<MaterialId>,
}

impl WorkerContext {
    pub fn new(holder: WorkerId, session: SessionId, codec: FixedPointCodec) -> Self {
        WorkerContext {
            holder,
            session,
            codec,
            used: HashSet::new(),
        }
    }

    pub fn holder(&self) -> WorkerId {
        self.holder
    }

    pub fn session(&self) -> SessionId {
        self.session
    }

    pub fn codec(&self) -> FixedPointCodec {
        self.codec
    }

    pub fn modulus(&self) -> RingModulus {
        self.codec.modulus()
    }

    pub fn wrap(&self, value: RingTensor) -> AdditiveShare {
        AdditiveShare::new(self.holder, self.session, value)
    }

    fn claim(&mut self, id: MaterialId, holder: WorkerId) -> Result<()> {
        if holder != self.holder {
            return Err(ProtocolError::WrongHolder(id.0).into());
        }
        if !self.used.insert(id) {
            return Err(ProtocolError::MaterialReused(id.0).into());
        }
        Ok(())
    }

    fn check_own(&self, s: &AdditiveShare) -> Result<()> {
        if s.holder != self.holder {
            return Err(ProtocolError::HolderMismatch.into());
        }
        if s.session != self.session {
            return Err(ProtocolError::SessionMismatch.into());
        }
        Ok(())
    }

    /// First half of a Beaver product: consumes the triple and returns this
    /// worker's shares of `α = x - q1` and `β = y - q2`.
    pub fn beaver_open(
        &mut self,
        x: &AdditiveShare,
        y: &AdditiveShare,
        triple: &BeaverTriple,
    ) -> Result<OpenedPair> {
        self.check_own(x)?;
        self.check_own(y)?;
        if x.shape() != triple.q1.shape() || y.shape() != triple.q2.shape() {
            return Err(ProtocolError::Shape {
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            }
            .into());
        }
        self.claim(triple.id, triple.holder)?;
        Ok(OpenedPair {
            alpha: x.value.sub(&triple.q1)?,
            beta: y.value.sub(&triple.q2)?,
        })
    }

    /// Second half: given the public `α`, `β`, returns this worker's share
    /// of `q3 + α·q2 + q1·β + α·β` (the last term added by A only).
    pub fn beaver_finish(&self, triple: &BeaverTriple, opened: &OpenedPair) -> Result<AdditiveShare> {
        let OpenedPair { alpha, beta } = opened;
        let z = match triple.kind {
            TripleKind::Elementwise => {
                let mut z = triple.q3.add(&alpha.hadamard(&triple.q2)?)?;
                z = z.add(&beta.hadamard(&triple.q1)?)?;
                if self.holder == WorkerId::A {
                    z = z.add(&alpha.hadamard(beta)?)?;
                }
                z
            }
            TripleKind::Matrix => {
                // α·q2 + α·β = α·(q2 + β) on A's side.
                let right = match self.holder {
                    WorkerId::A => triple.q2.add(beta)?,
                    WorkerId::B => triple.q2.clone(),
                };
                triple
                    .q3
                    .add(&alpha.matmul(&right)?)?
                    .add(&triple.q1.matmul(beta)?)?
            }
        };
        Ok(self.wrap(z))
    }

    pub fn beaver_mul(
        &mut self,
        x: &AdditiveShare,
        y: &AdditiveShare,
        triple: &BeaverTriple,
        peer: &mut impl PeerLink,
    ) -> Result<AdditiveShare> {
        let mine = self.beaver_open(x, y, triple)?;
        let theirs = peer.exchange(&[&mine.alpha, &mine.beta])?;
        let [alpha_peer, beta_peer]: [RingTensor; 2] = theirs
            .try_into()
            .map_err(|_| ProtocolError::Other("malformed opening".into()))?;
        let opened = OpenedPair {
            alpha: mine.alpha.add(&alpha_peer)?,
            beta: mine.beta.add(&beta_peer)?,
        };
        self.beaver_finish(triple, &opened)
    }

    /// Exact fixed-point rescale: returns shares of `floor(lift(z) / f)`.
    ///
    /// Requires `|lift(z)| < q / 4f`. Each element is masked with the next
    /// unused pair and `c = z + r` is opened. If `lift(c)` lies within the
    /// bound of `±q/2` the mask may have wrapped, so that element is redone
    /// with a fresh pair. The decision depends only on `c`, which is uniform
    /// whatever `z` is.
    pub fn truncate(
        &mut self,
        z: &AdditiveShare,
        pairs: &TruncationPairs,
        peer: &mut impl PeerLink,
    ) -> Result<AdditiveShare> {
        self.check_own(z)?;
        let m = self.modulus();
        let f = self.codec.scale();
        if pairs.scale != f {
            return Err(ProtocolError::Other(format!(
                "truncation material for scale {} used at scale {f}",
                pairs.scale
            ))
            .into());
        }
        self.claim(pairs.id, pairs.holder)?;
        let safe = (m.half() - truncation_input_bound(m, f)) as i64;
        let n = z.value.len();
        let mut out = vec![0u64; n];
        let mut pending: Vec<usize> = (0..n).collect();
        let mut cursor = 0usize;
        while !pending.is_empty() {
            if cursor + pending.len() > pairs.len() {
                return Err(ProtocolError::MaterialExhausted(format!(
                    "truncation pairs {} ({} used of {})",
                    pairs.id,
                    cursor,
                    pairs.len()
                ))
                .into());
            }
            let assigned: Vec<usize> = (cursor..cursor + pending.len()).collect();
            cursor += pending.len();
            let masked: Vec<u64> = pending
                .iter()
                .zip(&assigned)
                .map(|(&i, &p)| m.add(z.value.data()[i], pairs.r[p]))
                .collect();
            let mine = RingTensor::new(m, vec![masked.len()], masked)?;
            let theirs = peer.exchange(&[&mine])?;
            let opened = mine.add(theirs.first().ok_or_else(|| {
                ProtocolError::Other("empty truncation opening".into())
            })?)?;
            let mut retry = Vec::new();
            for ((&i, &p), &c) in pending.iter().zip(&assigned).zip(opened.data()) {
                let lifted = m.lift(c);
                if lifted.abs() >= safe {
                    retry.push(i);
                    continue;
                }
                let high = lifted.div_euclid(f as i64);
                let low = lifted.rem_euclid(f as i64) as usize;
                let onehot = &pairs.low_digit[p * f as usize..(p + 1) * f as usize];
                let mut borrow = 0u128;
                for &bit in &onehot[low + 1..] {
                    borrow += bit as u128;
                }
                let mut share = m.neg(m.add(pairs.r_trunc[p], m.reduce_wide(borrow)));
                if self.holder == WorkerId::A {
                    share = m.add(share, m.from_signed(high));
                }
                out[i] = share;
            }
            pending = retry;
        }
        Ok(self.wrap(RingTensor::new(m, z.shape().to_vec(), out)?))
    }

    /// Shares of `max(lift(x), 0)`, element-wise.
    ///
    /// Each worker draws a private positive factor; their product `ρ` is
    /// formed under sharing, `ρ·x` is sent to the dealer, and the returned
    /// bit shares select `x` or zero. Requires `|lift(x)| < q / 2^33`.
    pub fn relu<R: Rng + ?Sized>(
        &mut self,
        x: &AdditiveShare,
        mask: &ReluMask,
        rng: &mut R,
        dealer: &mut impl SignOracle,
        peer: &mut impl PeerLink,
    ) -> Result<AdditiveShare> {
        self.check_own(x)?;
        let m = self.modulus();
        let shape = x.shape().to_vec();
        let n = x.value.len();
        let own: Vec<u64> = (0..n).map(|_| rng.gen_range(1..=1u64 << BLIND_BITS)).collect();
        let own = RingTensor::new(m, shape.clone(), own)?;
        let zero = RingTensor::zeros(m, shape.clone());
        let (a_part, b_part) = match self.holder {
            WorkerId::A => (own, zero),
            WorkerId::B => (zero, own),
        };
        let blind = self.beaver_mul(&self.wrap(a_part), &self.wrap(b_part), &mask.blind, peer)?;
        let masked = self.beaver_mul(&blind, x, &mask.mask, peer)?;
        let bits = dealer.sign_bits(&masked.value)?;
        if bits.shape() != shape.as_slice() {
            return Err(ProtocolError::Shape {
                left: shape,
                right: bits.shape().to_vec(),
            }
            .into());
        }
        self.beaver_mul(x, &self.wrap(bits), &mask.select, peer)
    }
}

/// Trusted source of correlated randomness. Learns no plaintext beyond the
/// sign bits of blinded ReLU inputs.
pub struct Dealer<R> {
    modulus: RingModulus,
    rng: R,
    next_id: u64,
}

impl<R: Rng> Dealer<R> {
    pub fn new(modulus: RingModulus, rng: R) -> Self {
        Dealer {
            modulus,
            rng,
            next_id: 0,
        }
    }

    /// Continues numbering from `first_id`; lets several dealers share one
    /// id space when material is generated in independent streams.
    pub fn with_first_id(modulus: RingModulus, rng: R, first_id: u64) -> Self {
        Dealer {
            modulus,
            rng,
            next_id: first_id,
        }
    }

    pub fn modulus(&self) -> RingModulus {
        self.modulus
    }

    fn fresh_id(&mut self) -> MaterialId {
        let id = MaterialId(self.next_id);
        self.next_id += 1;
        id
    }

    fn split(&mut self, t: RingTensor) -> (RingTensor, RingTensor) {
        let a = RingTensor::random(self.modulus, t.shape().to_vec(), &mut self.rng);
        let b = t.sub(&a).expect("same shape");
        (a, b)
    }

    fn split_raw(&mut self, values: Vec<u64>) -> (Vec<u64>, Vec<u64>) {
        let n = values.len();
        let t = RingTensor::new(self.modulus, vec![n], values).expect("reduced values");
        let (a, b) = self.split(t);
        (a.into_data(), b.into_data())
    }

    fn triple(&mut self, kind: TripleKind, q1: RingTensor, q2: RingTensor) -> (BeaverTriple, BeaverTriple) {
        let q3 = match kind {
            TripleKind::Elementwise => q1.hadamard(&q2),
            TripleKind::Matrix => q1.matmul(&q2),
        }
        .expect("compatible shapes");
        let id = self.fresh_id();
        let (q1a, q1b) = self.split(q1);
        let (q2a, q2b) = self.split(q2);
        let (q3a, q3b) = self.split(q3);
        (
            BeaverTriple {
                id,
                holder: WorkerId::A,
                kind,
                q1: q1a,
                q2: q2a,
                q3: q3a,
            },
            BeaverTriple {
                id,
                holder: WorkerId::B,
                kind,
                q1: q1b,
                q2: q2b,
                q3: q3b,
            },
        )
    }

    pub fn elementwise_triple(&mut self, shape: Vec<usize>) -> (BeaverTriple, BeaverTriple) {
        let q1 = RingTensor::random(self.modulus, shape.clone(), &mut self.rng);
        let q2 = RingTensor::random(self.modulus, shape, &mut self.rng);
        self.triple(TripleKind::Elementwise, q1, q2)
    }

    pub fn matrix_triple(&mut self, p: usize, r: usize, c: usize) -> (BeaverTriple, BeaverTriple) {
        let q1 = RingTensor::random(self.modulus, vec![p, r], &mut self.rng);
        let q2 = RingTensor::random(self.modulus, vec![r, c], &mut self.rng);
        self.triple(TripleKind::Matrix, q1, q2)
    }

    /// `count` truncation masks for scale `f`.
    pub fn truncation_pairs(&mut self, count: usize, scale: u64) -> (TruncationPairs, TruncationPairs) {
        let m = self.modulus;
        let f = scale as i64;
        let mut r = Vec::with_capacity(count);
        let mut r_trunc = Vec::with_capacity(count);
        let mut low_digit = vec![0u64; count * scale as usize];
        for i in 0..count {
            let v = m.sample(&mut self.rng);
            let lifted = m.lift(v);
            r.push(v);
            r_trunc.push(m.from_signed(lifted.div_euclid(f)));
            low_digit[i * scale as usize + lifted.rem_euclid(f) as usize] = 1;
        }
        let id = self.fresh_id();
        let (ra, rb) = self.split_raw(r);
        let (ta, tb) = self.split_raw(r_trunc);
        let (la, lb) = self.split_raw(low_digit);
        (
            TruncationPairs {
                id,
                holder: WorkerId::A,
                scale,
                r: ra,
                r_trunc: ta,
                low_digit: la,
            },
            TruncationPairs {
                id,
                holder: WorkerId::B,
                scale,
                r: rb,
                r_trunc: tb,
                low_digit: lb,
            },
        )
    }

    pub fn relu_mask(&mut self, shape: Vec<usize>) -> (ReluMask, ReluMask) {
        let (blind_a, blind_b) = self.elementwise_triple(shape.clone());
        let (mask_a, mask_b) = self.elementwise_triple(shape.clone());
        let (select_a, select_b) = self.elementwise_triple(shape);
        (
            ReluMask {
                blind: blind_a,
                mask: mask_a,
                select: select_a,
            },
            ReluMask {
                blind: blind_b,
                mask: mask_b,
                select: select_b,
            },
        )
    }

    /// Reconstructs the blinded values and returns fresh shares of their
    /// non-negativity bits.
    pub fn answer_signs(&mut self, from_a: &RingTensor, from_b: &RingTensor) -> Result<(RingTensor, RingTensor)> {
        let m = self.modulus;
        let masked = from_a.add(from_b)?;
        let bits = masked.map(|v| u64::from(m.lift(v) >= 0));
        Ok(self.split(bits))
    }
}

/// In-memory [`PeerLink`] over a channel pair, for running two workers on
/// separate threads without framing.
pub struct LocalPeer {
    holder: WorkerId,
    tx: mpsc::Sender<Vec<RingTensor>>,
    rx: mpsc::Receiver<Vec<RingTensor>>,
}

pub fn local_peers() -> (LocalPeer, LocalPeer) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    (
        LocalPeer {
            holder: WorkerId::A,
            tx: tx_a,
            rx: rx_a,
        },
        LocalPeer {
            holder: WorkerId::B,
            tx: tx_b,
            rx: rx_b,
        },
    )
}

impl PeerLink for LocalPeer {
    fn exchange(&mut self, mine: &[&RingTensor]) -> Result<Vec<RingTensor>> {
        let gone = || Error::Protocol(ProtocolError::Other(format!("peer of {} hung up", self.holder)));
        let payload: Vec<RingTensor> = mine.iter().map(|t| (*t).clone()).collect();
        self.tx.send(payload).map_err(|_| gone())?;
        self.rx.recv().map_err(|_| gone())
    }
}

/// In-memory [`SignOracle`] backed by a dealer thread.
pub struct LocalSignOracle {
    tx: mpsc::Sender<RingTensor>,
    rx: mpsc::Receiver<RingTensor>,
}

impl SignOracle for LocalSignOracle {
    fn sign_bits(&mut self, masked: &RingTensor) -> Result<RingTensor> {
        let gone = || Error::Protocol(ProtocolError::DealerUnavailable("sign service stopped".into()));
        self.tx.send(masked.clone()).map_err(|_| gone())?;
        self.rx.recv().map_err(|_| gone())
    }
}

/// Spawns a thread answering sign queries from both workers until either
/// side disconnects. Returns the oracles for A and B.
pub fn local_sign_service<R: Rng + Send + 'static>(
    modulus: RingModulus,
    rng: R,
) -> (LocalSignOracle, LocalSignOracle, std::thread::JoinHandle<Vec<RingTensor>>) {
    let (qa_tx, qa_rx) = mpsc::channel::<RingTensor>();
    let (qb_tx, qb_rx) = mpsc::channel::<RingTensor>();
    let (ra_tx, ra_rx) = mpsc::channel();
    let (rb_tx, rb_rx) = mpsc::channel();
    let handle = std::thread::spawn(move || {
        let mut dealer = Dealer::new(modulus, rng);
        let mut seen = Vec::new();
        while let (Ok(a), Ok(b)) = (qa_rx.recv(), qb_rx.recv()) {
            seen.push(a.add(&b).expect("matching queries"));
            let Ok((sa, sb)) = dealer.answer_signs(&a, &b) else { break };
            if ra_tx.send(sa).is_err() || rb_tx.send(sb).is_err() {
                break;
            }
        }
        seen
    });
    (
        LocalSignOracle { tx: qa_tx, rx: ra_rx },
        LocalSignOracle { tx: qb_tx, rx: rb_rx },
        handle,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn session() -> SessionId {
        SessionId([7; 16])
    }

    fn q251() -> RingModulus {
        RingModulus::new(251).unwrap()
    }

    fn scalar(m: RingModulus, v: u64) -> RingTensor {
        RingTensor::new(m, vec![1], vec![v]).unwrap()
    }

    /// Runs the same closure as worker A and worker B on two threads.
    fn run_pair<T: Send>(
        f: impl Fn(WorkerId, &mut LocalPeer) -> T + Sync,
    ) -> (T, T) {
        let (mut pa, mut pb) = local_peers();
        std::thread::scope(|s| {
            let fa = &f;
            let ha = s.spawn(move || fa(WorkerId::A, &mut pa));
            let fb = &f;
            let hb = s.spawn(move || fb(WorkerId::B, &mut pb));
            (ha.join().unwrap(), hb.join().unwrap())
        })
    }

    #[test]
    fn split_of_zero_sums_to_zero() {
        let m = RingModulus::mersenne61();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (a, b) = split_secret(&scalar(m, 0), session(), &mut rng);
        assert_eq!(m.add(a.value().data()[0], b.value().data()[0]), 0);
        assert_eq!(b.value().data()[0], m.neg(a.value().data()[0]));
    }

    #[test]
    fn reconstruct_examples() {
        let q = q251();
        let a = AdditiveShare::new(WorkerId::A, session(), scalar(q, 45));
        let b = AdditiveShare::new(WorkerId::B, session(), scalar(q, 0));
        assert_eq!(reconstruct(&a, &b).unwrap().data(), &[45]);
        let a = AdditiveShare::new(WorkerId::A, session(), scalar(q, 200));
        let b = AdditiveShare::new(WorkerId::B, session(), scalar(q, 100));
        assert_eq!(reconstruct(&a, &b).unwrap().data(), &[49]);
    }

    #[test]
    fn reconstruct_rejects_mismatches() {
        let q = q251();
        let a = AdditiveShare::new(WorkerId::A, session(), scalar(q, 1));
        let a2 = AdditiveShare::new(WorkerId::A, session(), scalar(q, 1));
        let b_other = AdditiveShare::new(WorkerId::B, SessionId([9; 16]), scalar(q, 1));
        let b_shape = AdditiveShare::new(WorkerId::B, session(), RingTensor::zeros(q, vec![2]));
        assert!(matches!(reconstruct(&a, &a2), Err(Error::Protocol(ProtocolError::Unpaired))));
        assert!(matches!(reconstruct(&a, &b_other), Err(Error::Protocol(ProtocolError::SessionMismatch))));
        assert!(reconstruct(&a, &b_shape).is_err());
    }

    #[test]
    fn add_shares_rejects_mixed_holders() {
        let q = q251();
        let a = AdditiveShare::new(WorkerId::A, session(), scalar(q, 1));
        let b = AdditiveShare::new(WorkerId::B, session(), scalar(q, 1));
        assert!(matches!(add_shares(&a, &b), Err(Error::Protocol(ProtocolError::HolderMismatch))));
    }

    #[test]
    fn add_shares_with_zero_and_worked_sum() {
        let q = q251();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (xa, xb) = split_secret(&scalar(q, 77), session(), &mut rng);
        let (za, zb) = split_secret(&scalar(q, 0), session(), &mut rng);
        let sa = add_shares(&xa, &za).unwrap();
        let sb = add_shares(&xb, &zb).unwrap();
        assert_eq!(reconstruct(&sa, &sb).unwrap().data(), &[77]);

        let (ya, yb) = split_secret(&scalar(q, 200), session(), &mut rng);
        let sa = add_shares(&xa, &ya).unwrap();
        let sb = add_shares(&xb, &yb).unwrap();
        let direct = (xa.value().data()[0] + ya.value().data()[0] + xb.value().data()[0] + yb.value().data()[0]) % 251;
        assert_eq!(reconstruct(&sa, &sb).unwrap().data(), &[direct]);
        assert_eq!(direct, (77 + 200) % 251);
    }

    #[test]
    fn mul_public_identity_and_zero() {
        let m = RingModulus::mersenne61();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (a, b) = split_secret(&scalar(m, 12345), session(), &mut rng);
        let one = RingElement::one(m);
        let zero = RingElement::zero(m);
        let r1 = reconstruct(&mul_public(&a, one).unwrap(), &mul_public(&b, one).unwrap()).unwrap();
        assert_eq!(r1.data(), &[12345]);
        let r0 = reconstruct(&mul_public(&a, zero).unwrap(), &mul_public(&b, zero).unwrap()).unwrap();
        assert_eq!(r0.data(), &[0]);
    }

    #[test]
    fn add_public_only_moves_one_share() {
        let q = q251();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (a, b) = split_secret(&scalar(q, 10), session(), &mut rng);
        let c = scalar(q, 5);
        let r = reconstruct(&add_public(&a, &c).unwrap(), &add_public(&b, &c).unwrap()).unwrap();
        assert_eq!(r.data(), &[15]);
    }

    #[test]
    fn beaver_split_halves_without_channel() {
        let m = RingModulus::mersenne61();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut dealer = Dealer::new(m, ChaCha20Rng::seed_from_u64(6));
        let (xa, xb) = split_secret(&scalar(m, 1 << 40), session(), &mut rng);
        let (ya, yb) = split_secret(&scalar(m, 3), session(), &mut rng);
        let (ta, tb) = dealer.elementwise_triple(vec![1]);
        let codec = FixedPointCodec::default();
        let mut ca = WorkerContext::new(WorkerId::A, session(), codec);
        let mut cb = WorkerContext::new(WorkerId::B, session(), codec);
        let oa = ca.beaver_open(&xa, &ya, &ta).unwrap();
        let ob = cb.beaver_open(&xb, &yb, &tb).unwrap();
        let public = OpenedPair {
            alpha: oa.alpha.add(&ob.alpha).unwrap(),
            beta: oa.beta.add(&ob.beta).unwrap(),
        };
        let za = ca.beaver_finish(&ta, &public).unwrap();
        let zb = cb.beaver_finish(&tb, &public).unwrap();
        assert_eq!(reconstruct(&za, &zb).unwrap().data(), &[3 << 40]);
    }

    #[test]
    fn beaver_with_zero_operand() {
        let m = RingModulus::mersenne61();
        let (ra, rb) = run_pair(|w, peer| {
            let mut rng = ChaCha20Rng::seed_from_u64(8);
            let mut dealer = Dealer::new(m, ChaCha20Rng::seed_from_u64(9));
            let (xa, xb) = split_secret(&scalar(m, 0), session(), &mut rng);
            let (ya, yb) = split_secret(&scalar(m, 999), session(), &mut rng);
            let (ta, tb) = dealer.elementwise_triple(vec![1]);
            let mut ctx = WorkerContext::new(w, session(), FixedPointCodec::default());
            match w {
                WorkerId::A => ctx.beaver_mul(&xa, &ya, &ta, peer).unwrap(),
                WorkerId::B => ctx.beaver_mul(&xb, &yb, &tb, peer).unwrap(),
            }
        });
        assert_eq!(reconstruct(&ra, &rb).unwrap().data(), &[0]);
    }

    #[test]
    fn triple_reuse_is_rejected() {
        let m = RingModulus::mersenne61();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let mut dealer = Dealer::new(m, ChaCha20Rng::seed_from_u64(11));
        let (xa, _) = split_secret(&scalar(m, 2), session(), &mut rng);
        let (ta, tb) = dealer.elementwise_triple(vec![1]);
        let mut ctx = WorkerContext::new(WorkerId::A, session(), FixedPointCodec::default());
        ctx.beaver_open(&xa, &xa, &ta).unwrap();
        let err = ctx.beaver_open(&xa, &xa, &ta).unwrap_err();
        assert!(matches!(err, Error::Protocol(ProtocolError::MaterialReused(0))));
        let err = ctx.beaver_open(&xa, &xa, &tb).unwrap_err();
        assert!(matches!(err, Error::Protocol(ProtocolError::WrongHolder(0))));
    }

    #[test]
    fn beaver_rejects_shape_mismatch() {
        let m = RingModulus::mersenne61();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let mut dealer = Dealer::new(m, ChaCha20Rng::seed_from_u64(13));
        let (xa, _) = split_secret(&RingTensor::zeros(m, vec![1, 3]), session(), &mut rng);
        let (ta, _) = dealer.matrix_triple(1, 4, 2);
        let mut ctx = WorkerContext::new(WorkerId::A, session(), FixedPointCodec::default());
        assert!(matches!(
            ctx.beaver_open(&xa, &xa, &ta),
            Err(Error::Protocol(ProtocolError::Shape { .. }))
        ));
    }

    #[test]
    fn truncation_of_fixed_point_product() {
        let codec = FixedPointCodec::default();
        let m = codec.modulus();
        let product = m.mul(codec.encode(0.45).unwrap().value(), codec.encode(2.0).unwrap().value());
        for (secret, expect) in [(product, codec.encode(0.90).unwrap().value()), (0, 0)] {
            let (ra, rb) = run_pair(|w, peer| {
                let mut rng = ChaCha20Rng::seed_from_u64(14);
                let mut dealer = Dealer::new(m, ChaCha20Rng::seed_from_u64(15));
                let (za, zb) = split_secret(&scalar(m, secret), session(), &mut rng);
                let (pa, pb) = dealer.truncation_pairs(4, codec.scale());
                let mut ctx = WorkerContext::new(w, session(), codec);
                match w {
                    WorkerId::A => ctx.truncate(&za, &pa, peer).unwrap(),
                    WorkerId::B => ctx.truncate(&zb, &pb, peer).unwrap(),
                }
            });
            assert_eq!(reconstruct(&ra, &rb).unwrap().data(), &[expect]);
        }
    }

    #[test]
    fn truncation_floors_negative_values() {
        let codec = FixedPointCodec::default();
        let m = codec.modulus();
        let values: Vec<i64> = vec![-1, -99, -100, -101, -12345, 99, 100, 101, 0];
        let secret = RingTensor::new(m, vec![values.len()], values.iter().map(|&v| m.from_signed(v)).collect()).unwrap();
        let (ra, rb) = run_pair(|w, peer| {
            let mut rng = ChaCha20Rng::seed_from_u64(16);
            let mut dealer = Dealer::new(m, ChaCha20Rng::seed_from_u64(17));
            let (za, zb) = split_secret(&secret, session(), &mut rng);
            let (pa, pb) = dealer.truncation_pairs(values.len() + 4, codec.scale());
            let mut ctx = WorkerContext::new(w, session(), codec);
            match w {
                WorkerId::A => ctx.truncate(&za, &pa, peer).unwrap(),
                WorkerId::B => ctx.truncate(&zb, &pb, peer).unwrap(),
            }
        });
        let out = reconstruct(&ra, &rb).unwrap();
        let got: Vec<i64> = out.data().iter().map(|&v| m.lift(v)).collect();
        let want: Vec<i64> = values.iter().map(|v| v.div_euclid(100)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn truncation_exhaustion_is_reported() {
        let codec = FixedPointCodec::default();
        let m = codec.modulus();
        let mut dealer = Dealer::new(m, ChaCha20Rng::seed_from_u64(18));
        let (pa, _) = dealer.truncation_pairs(1, codec.scale());
        let mut ctx = WorkerContext::new(WorkerId::A, session(), codec);
        let z = ctx.wrap(RingTensor::zeros(m, vec![3]));
        let (mut peer, _other) = local_peers();
        assert!(matches!(
            ctx.truncate(&z, &pa, &mut peer),
            Err(Error::Protocol(ProtocolError::MaterialExhausted(_)))
        ));
    }

    #[test]
    fn relu_examples() {
        let codec = FixedPointCodec::default();
        let m = codec.modulus();
        let inputs = [-1.0, 0.5, 0.0, -0.01, 123.45];
        let secret = codec.encode_tensor(vec![1, inputs.len()], &inputs).unwrap();
        let (oa, ob, dealer_thread) = local_sign_service(m, ChaCha20Rng::seed_from_u64(19));
        let oracles = std::sync::Mutex::new(vec![Some(oa), Some(ob)]);
        let (ra, rb) = run_pair(|w, peer| {
            let mut oracle = oracles.lock().unwrap()[w.tag() as usize].take().unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(20);
            let mut dealer = Dealer::new(m, ChaCha20Rng::seed_from_u64(21));
            let (xa, xb) = split_secret(&secret, session(), &mut rng);
            let (ma, mb) = dealer.relu_mask(vec![1, inputs.len()]);
            let mut blind_rng = ChaCha20Rng::seed_from_u64(22 + w.tag() as u64);
            let mut ctx = WorkerContext::new(w, session(), codec);
            match w {
                WorkerId::A => ctx.relu(&xa, &ma, &mut blind_rng, &mut oracle, peer).unwrap(),
                WorkerId::B => ctx.relu(&xb, &mb, &mut blind_rng, &mut oracle, peer).unwrap(),
            }
        });
        drop(oracles);
        let got = codec.decode_tensor(&reconstruct(&ra, &rb).unwrap());
        assert_eq!(got, vec![0.0, 0.5, 0.0, 0.0, 123.45]);
        let seen = dealer_thread.join().unwrap();
        assert_eq!(seen.len(), 1);
    }

    #[test]
    fn answer_signs_returns_fresh_bit_shares() {
        let q = q251();
        let mut dealer = Dealer::new(q, ChaCha20Rng::seed_from_u64(23));
        let a = RingTensor::new(q, vec![3], vec![10, 0, 200]).unwrap();
        let b = RingTensor::new(q, vec![3], vec![0, 250, 1]).unwrap();
        let (sa, sb) = dealer.answer_signs(&a, &b).unwrap();
        // 10 -> +, 250 -> -1, 201 -> -50
        assert_eq!(sa.add(&sb).unwrap().data(), &[1, 0, 0]);
    }
}
