//! Party roles, session configuration, and the per-round computations of
//! owners, client, dealer, workers, and aggregator.
//!
//! Everything here is transport-agnostic; [`crate::runtime`] wires these
//! steps to connections.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crypto_box::aead::generic_array::GenericArray;
use crypto_box::aead::Aead;
use crypto_box::{PublicKey, SalsaBox, SecretKey};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dp::{self, BudgetLedger, NoisyAggregate, PrivacyParams};
use crate::error::{Error, ProtocolError, Result};
use crate::model::{EncodedModel, ModelError, ModelParameters, NetworkSpec};
use crate::ring::{FixedPointCodec, RingElement, RingModulus, RingTensor};
use crate::sharing::{
    add_shares, mul_public, split_secret, AdditiveShare, BeaverTriple, Dealer, PeerLink, ReluMask, SessionId,
    SignOracle, TruncationPairs, WorkerContext, WorkerId,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    /// Model owner, indexed from 1.
    Owner(u32),
    WorkerA,
    WorkerB,
    Dealer,
    Aggregator,
    Client,
}

impl Role {
    pub fn worker(id: WorkerId) -> Role {
        match id {
            WorkerId::A => Role::WorkerA,
            WorkerId::B => Role::WorkerB,
        }
    }

    /// Wire tag and owner index.
    pub fn tag(self) -> (u8, u32) {
        match self {
            Role::Owner(i) => (0, i),
            Role::WorkerA => (1, 0),
            Role::WorkerB => (2, 0),
            Role::Dealer => (3, 0),
            Role::Aggregator => (4, 0),
            Role::Client => (5, 0),
        }
    }

    pub fn from_tag(tag: u8, index: u32) -> Option<Role> {
        match (tag, index) {
            (0, i) if i > 0 => Some(Role::Owner(i)),
            (1, 0) => Some(Role::WorkerA),
            (2, 0) => Some(Role::WorkerB),
            (3, 0) => Some(Role::Dealer),
            (4, 0) => Some(Role::Aggregator),
            (5, 0) => Some(Role::Client),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Owner(i) => write!(f, "owner-{i}"),
            Role::WorkerA => f.write_str("worker-a"),
            Role::WorkerB => f.write_str("worker-b"),
            Role::Dealer => f.write_str("dealer"),
            Role::Aggregator => f.write_str("aggregator"),
            Role::Client => f.write_str("client"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartyId {
    pub role: Role,
}

impl PartyId {
    pub fn new(role: Role) -> Self {
        PartyId { role }
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.role.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hello {
    pub party: PartyId,
    pub config_hash: [u8; 32],
}

/// Parameters every party must agree on; compared by hash at handshake.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub modulus: RingModulus,
    pub scale: u64,
    pub owners: u32,
    pub privacy: PrivacyParams,
    /// Per-client ε cap; absent means unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_cap: Option<f64>,
    /// Per-message receive deadline.
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    pub spec: NetworkSpec,
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl SessionConfig {
    pub fn new(spec: NetworkSpec, owners: u32, privacy: PrivacyParams) -> Self {
        SessionConfig {
            modulus: RingModulus::default(),
            scale: crate::ring::DEFAULT_SCALE,
            owners,
            privacy,
            budget_cap: None,
            timeout_ms: default_timeout_ms(),
            spec,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.owners == 0 {
            return Err(Error::Config("at least one model owner is required".into()));
        }
        self.spec.validate()?;
        self.privacy.validate()?;
        FixedPointCodec::new(self.scale, self.modulus)?;
        Ok(())
    }

    pub fn codec(&self) -> FixedPointCodec {
        FixedPointCodec::new(self.scale, self.modulus).expect("validated config")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SessionConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }
}

/// Independent deterministic random stream derived from a master seed.
pub fn substream(master: u64, name: &str) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

pub fn session_id(master: u64) -> SessionId {
    SessionId::random(&mut substream(master, "session"))
}

/// One worker's shares of every layer of one owner's model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelShareBundle {
    pub owner: u32,
    pub holder: WorkerId,
    pub weights: Vec<RingTensor>,
    pub biases: Vec<RingTensor>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputShare {
    pub round: u64,
    pub holder: WorkerId,
    pub share: RingTensor,
}

/// Single-use material for one layer of one owner's model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMaterial {
    pub matmul: BeaverTriple,
    pub trunc: TruncationPairs,
    pub relu: Option<ReluMask>,
}

/// Everything one worker needs for one inference round, per owner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundMaterial {
    pub round: u64,
    pub holder: WorkerId,
    pub owners: Vec<Vec<LayerMaterial>>,
}

impl RoundMaterial {
    pub fn triples(&self) -> impl Iterator<Item = &BeaverTriple> {
        self.owners.iter().flatten().flat_map(|l| {
            std::iter::once(&l.matmul).chain(l.relu.iter().flat_map(|r| [&r.blind, &r.mask, &r.select]))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialResult {
    pub round: u64,
    pub owner: u32,
    pub holder: WorkerId,
    pub scores: RingTensor,
}

/// A label encrypted for the client, authenticated by the aggregator key
/// given in `sender`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedResult {
    pub round: u64,
    pub nonce: [u8; 24],
    pub sender: [u8; 32],
    pub ciphertext: Vec<u8>,
}

/// Splits every encoded tensor of an owner's model between the workers.
pub fn owner_share_model<R: Rng + ?Sized>(
    owner: u32,
    params: &ModelParameters,
    codec: FixedPointCodec,
    rng: &mut R,
) -> Result<(ModelShareBundle, ModelShareBundle)> {
    let encoded = EncodedModel::encode(params, codec)?;
    let mut a = ModelShareBundle {
        owner,
        holder: WorkerId::A,
        weights: Vec::new(),
        biases: Vec::new(),
    };
    let mut b = ModelShareBundle {
        holder: WorkerId::B,
        ..a.clone()
    };
    let session = SessionId::default();
    for (w, bias) in encoded.weights.iter().zip(&encoded.biases) {
        let (wa, wb) = split_secret(w, session, rng);
        let (ba, bb) = split_secret(bias, session, rng);
        a.weights.push(wa.into_value());
        b.weights.push(wb.into_value());
        a.biases.push(ba.into_value());
        b.biases.push(bb.into_value());
    }
    Ok((a, b))
}

/// Encodes `x` and splits it into `[1, d]` shares.
pub fn client_share_input<R: Rng + ?Sized>(
    round: u64,
    x: &[f64],
    spec: &NetworkSpec,
    codec: FixedPointCodec,
    rng: &mut R,
) -> Result<(InputShare, InputShare)> {
    if x.len() != spec.input_dim {
        return Err(ModelError::Dimension {
            expected: spec.input_dim,
            got: x.len(),
        }
        .into());
    }
    let encoded = codec.encode_tensor(vec![1, x.len()], x)?;
    let (a, b) = split_secret(&encoded, SessionId::default(), rng);
    Ok((
        InputShare {
            round,
            holder: WorkerId::A,
            share: a.into_value(),
        },
        InputShare {
            round,
            holder: WorkerId::B,
            share: b.into_value(),
        },
    ))
}

/// Spare truncation masks per layer of width `k`, covering re-masking of
/// elements whose opening fell near the wrap-around boundary.
pub fn truncation_spares(k: usize) -> usize {
    8 + k / 16
}

/// Produces per-round material for both workers from one seeded stream.
pub struct MaterialFactory {
    spec: NetworkSpec,
    owners: u32,
    scale: u64,
    dealer: Dealer<ChaCha20Rng>,
    next_round: u64,
}

impl MaterialFactory {
    pub fn new(cfg: &SessionConfig, rng: ChaCha20Rng) -> Self {
        MaterialFactory {
            spec: cfg.spec.clone(),
            owners: cfg.owners,
            scale: cfg.scale,
            dealer: Dealer::new(cfg.modulus, rng),
            next_round: 0,
        }
    }

    pub fn next_round(&mut self) -> (RoundMaterial, RoundMaterial) {
        let round = self.next_round;
        self.next_round += 1;
        let dims = self.spec.dims();
        let mut a = RoundMaterial {
            round,
            holder: WorkerId::A,
            owners: Vec::with_capacity(self.owners as usize),
        };
        let mut b = RoundMaterial {
            round,
            holder: WorkerId::B,
            owners: Vec::with_capacity(self.owners as usize),
        };
        for _ in 0..self.owners {
            let (mut la, mut lb) = (Vec::new(), Vec::new());
            for j in 0..self.spec.num_layers() {
                let (rows, cols) = (dims[j], dims[j + 1]);
                let (ma, mb) = self.dealer.matrix_triple(1, rows, cols);
                let (ta, tb) = self.dealer.truncation_pairs(cols + truncation_spares(cols), self.scale);
                let (ra, rb) = if self.spec.activation(j) == crate::model::Activation::Relu {
                    let (ra, rb) = self.dealer.relu_mask(vec![1, cols]);
                    (Some(ra), Some(rb))
                } else {
                    (None, None)
                };
                la.push(LayerMaterial {
                    matmul: ma,
                    trunc: ta,
                    relu: ra,
                });
                lb.push(LayerMaterial {
                    matmul: mb,
                    trunc: tb,
                    relu: rb,
                });
            }
            a.owners.push(la);
            b.owners.push(lb);
        }
        (a, b)
    }
}

/// Material for `count` rounds, deterministic under `seed`.
pub fn dealer_provision(cfg: &SessionConfig, count: usize, seed: u64) -> Vec<(RoundMaterial, RoundMaterial)> {
    let mut factory = MaterialFactory::new(cfg, ChaCha20Rng::seed_from_u64(seed));
    (0..count).map(|_| factory.next_round()).collect()
}

/// Runs one owner's model over the shared input, layer by layer:
/// shared matmul, bias, exact rescale, and ReLU on hidden layers. No
/// intermediate is ever reconstructed.
#[allow(clippy::too_many_arguments)]
pub fn worker_infer<R: Rng + ?Sized>(
    ctx: &mut WorkerContext,
    round: u64,
    bundle: &ModelShareBundle,
    input: &RingTensor,
    material: &[LayerMaterial],
    blind_rng: &mut R,
    dealer: &mut impl SignOracle,
    peer: &mut impl PeerLink,
) -> Result<PartialResult> {
    if bundle.holder != ctx.holder() {
        return Err(ProtocolError::HolderMismatch.into());
    }
    if material.len() != bundle.weights.len() {
        return Err(ProtocolError::MaterialExhausted(format!(
            "{} layers of material for a {}-layer model",
            material.len(),
            bundle.weights.len()
        ))
        .into());
    }
    let f = RingElement::from_u64(ctx.modulus(), ctx.codec().scale());
    let mut h = ctx.wrap(input.clone());
    for ((w, b), mat) in bundle.weights.iter().zip(&bundle.biases).zip(material) {
        let z = ctx.beaver_mul(&h, &ctx.wrap(w.clone()), &mat.matmul, peer)?;
        let z = add_shares(&z, &mul_public(&ctx.wrap(b.clone()), f)?)?;
        let t = ctx.truncate(&z, &mat.trunc, peer)?;
        h = match &mat.relu {
            Some(mask) => ctx.relu(&t, mask, blind_rng, dealer, peer)?,
            None => t,
        };
    }
    Ok(PartialResult {
        round,
        owner: bundle.owner,
        holder: ctx.holder(),
        scores: h.into_value(),
    })
}

/// Pairs A and B partials per owner and decodes `y_A + y_B`.
pub fn reconstruct_partials(partials: &[PartialResult], owners: u32, codec: FixedPointCodec) -> Result<Vec<Vec<f64>>> {
    let mut seen: HashMap<(u32, WorkerId), &PartialResult> = HashMap::new();
    for p in partials {
        if p.owner == 0 || p.owner > owners {
            return Err(ProtocolError::Other(format!("partial for unknown owner {}", p.owner)).into());
        }
        if seen.insert((p.owner, p.holder), p).is_some() {
            return Err(ProtocolError::DuplicatePartial {
                owner: p.owner,
                worker: p.holder.to_string(),
            }
            .into());
        }
    }
    let mut out = Vec::with_capacity(owners as usize);
    for owner in 1..=owners {
        let get = |w: WorkerId| {
            seen.get(&(owner, w)).copied().ok_or_else(|| {
                Error::from(ProtocolError::Other(format!("missing partial for owner {owner} from worker {w}")))
            })
        };
        let (a, b) = (get(WorkerId::A)?, get(WorkerId::B)?);
        let y = AdditiveShare::new(WorkerId::A, SessionId::default(), a.scores.clone());
        let yb = AdditiveShare::new(WorkerId::B, SessionId::default(), b.scores.clone());
        out.push(codec.decode_tensor(&crate::sharing::reconstruct(&y, &yb)?));
    }
    Ok(out)
}

/// Deterministic X25519 secret key from a random stream.
pub fn secret_key_from<R: RngCore + ?Sized>(rng: &mut R) -> SecretKey {
    let mut bytes = [0u8; 32];
    rng.fill_bytes(&mut bytes);
    SecretKey::from_bytes(bytes)
}

/// Encrypts `label` for the client under a fresh nonce.
pub fn seal_label<R: RngCore + ?Sized>(
    round: u64,
    label: usize,
    client_pk: &[u8; 32],
    sender: &SecretKey,
    rng: &mut R,
) -> Result<SealedResult> {
    let mut nonce = [0u8; 24];
    rng.fill_bytes(&mut nonce);
    let mut plaintext = round.to_le_bytes().to_vec();
    plaintext.extend_from_slice(&(label as u32).to_le_bytes());
    let ciphertext = SalsaBox::new(&PublicKey::from_bytes(*client_pk), sender)
        .encrypt(GenericArray::from_slice(&nonce), plaintext.as_slice())
        .map_err(|_| ProtocolError::Other("sealing failed".into()))?;
    Ok(SealedResult {
        round,
        nonce,
        sender: sender.public_key().to_bytes(),
        ciphertext,
    })
}

/// Decrypts a sealed label; any modification, wrong key, or round
/// mismatch is reported as tampering.
pub fn open_sealed(sealed: &SealedResult, client: &SecretKey, classes: usize) -> Result<usize> {
    let plaintext = SalsaBox::new(&PublicKey::from_bytes(sealed.sender), client)
        .decrypt(GenericArray::from_slice(&sealed.nonce), sealed.ciphertext.as_slice())
        .map_err(|_| ProtocolError::Tamper)?;
    if plaintext.len() != 12 || plaintext[..8] != sealed.round.to_le_bytes() {
        return Err(ProtocolError::Tamper.into());
    }
    let label = u32::from_le_bytes(plaintext[8..].try_into().expect("4 bytes")) as usize;
    if label >= classes {
        return Err(ProtocolError::Tamper.into());
    }
    Ok(label)
}

/// Result of one aggregation round.
#[derive(Clone, Debug, PartialEq)]
pub enum AggregateOutcome {
    Released {
        aggregate: NoisyAggregate,
        sealed: SealedResult,
    },
    Refused(dp::DpError),
}

/// Trusted aggregator state across rounds.
pub struct Aggregator {
    cfg: SessionConfig,
    ledger: BudgetLedger,
    noise: ChaCha20Rng,
    nonces: ChaCha20Rng,
    key: SecretKey,
}

impl Aggregator {
    pub fn new(cfg: SessionConfig, master_seed: u64) -> Self {
        let ledger = match cfg.budget_cap {
            Some(cap) => BudgetLedger::new(cap),
            None => BudgetLedger::unlimited(),
        };
        Aggregator {
            key: secret_key_from(&mut substream(master_seed, "aggregator/keys")),
            noise: substream(master_seed, "aggregator/noise"),
            nonces: substream(master_seed, "aggregator/nonce"),
            ledger,
            cfg,
        }
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.key.public_key().to_bytes()
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    /// Reconstructs, aggregates, noises, and seals; refuses when the
    /// client's budget cannot cover the query.
    pub fn round(
        &mut self,
        round: u64,
        partials: &[PartialResult],
        client: &str,
        client_pk: &[u8; 32],
    ) -> Result<AggregateOutcome> {
        if let Some(p) = partials.iter().find(|p| p.round != round) {
            return Err(ProtocolError::Other(format!("partial for round {} during round {round}", p.round)).into());
        }
        let outputs = reconstruct_partials(partials, self.cfg.owners, self.cfg.codec())?;
        if let Err(e) = self.ledger.charge(client, &self.cfg.privacy) {
            return Ok(AggregateOutcome::Refused(e));
        }
        let aggregate = dp::aggregate(&outputs, &self.cfg.privacy, &mut self.noise)?;
        let sealed = seal_label(round, aggregate.label, client_pk, &self.key, &mut self.nonces)?;
        Ok(AggregateOutcome::Released { aggregate, sealed })
    }
}
