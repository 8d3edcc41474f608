//! Framing, message codec, and point-to-point connections over an
//! in-process loopback or TCP.
//!
//! Every message travels in one frame:
//!
//! ```text
//! magic "PRCR" | version u8 | type u8 | session [u8; 16] | seq u64 LE | len u64 LE | payload
//! ```
//!
//! Payload layouts are listed per tag in `protocol.md`.

use std::fmt;
use std::io::{self, ErrorKind as IoKind, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::error::{Error, ProtocolError, Result};
use crate::protocol::{
    Hello, InputShare, LayerMaterial, ModelShareBundle, PartialResult, PartyId, Role, RoundMaterial,
    SealedResult,
};
use crate::ring::{RingModulus, RingTensor};
use crate::sharing::{
    BeaverTriple, MaterialId, PeerLink, ReluMask, SessionId, SignOracle, TripleKind, TruncationPairs, WorkerId,
};

pub const MAGIC: [u8; 4] = *b"PRCR";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 16 + 8 + 8;

/// Largest accepted payload; larger length fields are treated as corrupt.
pub const MAX_PAYLOAD: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("short read: need {needed} bytes, have {got}")]
    Short { needed: usize, got: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("payload length {0} exceeds limit")]
    LengthOverflow(u64),
    #[error("malformed {kind} payload: {reason}")]
    Payload { kind: MessageType, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Heartbeat = 0x00,
    Hello = 0x01,
    ModelShare = 0x02,
    InputShare = 0x03,
    TripleInventory = 0x04,
    Open = 0x05,
    SignQuery = 0x06,
    SignReply = 0x07,
    PartialResult = 0x08,
    ClientKey = 0x09,
    SealedResult = 0x0a,
    Abort = 0x0b,
}

impl MessageType {
    pub const ALL: [MessageType; 12] = [
        MessageType::Heartbeat,
        MessageType::Hello,
        MessageType::ModelShare,
        MessageType::InputShare,
        MessageType::TripleInventory,
        MessageType::Open,
        MessageType::SignQuery,
        MessageType::SignReply,
        MessageType::PartialResult,
        MessageType::ClientKey,
        MessageType::SealedResult,
        MessageType::Abort,
    ];

    pub fn from_tag(tag: u8) -> Option<MessageType> {
        MessageType::ALL.get(tag as usize).copied()
    }

    pub fn tag(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Message types each role accepts. Shares of models and inputs reach
/// workers only; the aggregator sees nothing but partial results and keys.
pub fn accepts(role: Role, kind: MessageType) -> bool {
    use MessageType as T;
    if matches!(kind, T::Heartbeat | T::Hello | T::Abort) {
        return true;
    }
    match role {
        Role::WorkerA | Role::WorkerB => matches!(
            kind,
            T::ModelShare | T::InputShare | T::TripleInventory | T::Open | T::SignReply
        ),
        Role::Dealer => kind == T::SignQuery,
        Role::Aggregator => matches!(kind, T::PartialResult | T::ClientKey),
        Role::Client => kind == T::SealedResult,
        Role::Owner(_) => false,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: MessageType,
    pub session: SessionId,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.kind.tag());
        out.extend_from_slice(&self.session.0);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses one frame from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> std::result::Result<(Frame, usize), FrameError> {
        if bytes.len() < HEADER_LEN {
            // Reject garbage as early as the bytes allow.
            check_prefix(bytes)?;
            return Err(FrameError::Short {
                needed: HEADER_LEN,
                got: bytes.len(),
            });
        }
        check_prefix(bytes)?;
        let kind = MessageType::from_tag(bytes[5]).ok_or(FrameError::UnknownType(bytes[5]))?;
        let session = SessionId(bytes[6..22].try_into().expect("16 bytes"));
        let seq = u64::from_le_bytes(bytes[22..30].try_into().expect("8 bytes"));
        let len = u64::from_le_bytes(bytes[30..38].try_into().expect("8 bytes"));
        if len > MAX_PAYLOAD {
            return Err(FrameError::LengthOverflow(len));
        }
        let total = HEADER_LEN + len as usize;
        if bytes.len() < total {
            return Err(FrameError::Short {
                needed: total,
                got: bytes.len(),
            });
        }
        Ok((
            Frame {
                kind,
                session,
                seq,
                payload: bytes[HEADER_LEN..total].to_vec(),
            },
            total,
        ))
    }
}

fn check_prefix(bytes: &[u8]) -> std::result::Result<(), FrameError> {
    let n = bytes.len().min(4);
    if bytes[..n] != MAGIC[..n] {
        let mut magic = [0u8; 4];
        magic[..n].copy_from_slice(&bytes[..n]);
        return Err(FrameError::BadMagic(magic));
    }
    if bytes.len() > 4 && bytes[4] != VERSION {
        return Err(FrameError::BadVersion(bytes[4]));
    }
    if bytes.len() > 5 && MessageType::from_tag(bytes[5]).is_none() {
        return Err(FrameError::UnknownType(bytes[5]));
    }
    Ok(())
}

/// Incremental frame parser for byte streams read in arbitrary chunks.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete frame, `None` if more bytes are needed.
    pub fn next_frame(&mut self) -> std::result::Result<Option<Frame>, FrameError> {
        match Frame::decode(&self.buf) {
            Ok((frame, used)) => {
                self.buf.drain(..used);
                Ok(Some(frame))
            }
            Err(FrameError::Short { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Heartbeat,
    Hello(Hello),
    ModelShare(ModelShareBundle),
    InputShare(InputShare),
    TripleInventory(RoundMaterial),
    Open(Vec<RingTensor>),
    SignQuery(RingTensor),
    SignReply(RingTensor),
    PartialResult(PartialResult),
    ClientKey([u8; 32]),
    SealedResult(SealedResult),
    Abort { code: u8, reason: String },
}

impl Message {
    pub fn kind(&self) -> MessageType {
        match self {
            Message::Heartbeat => MessageType::Heartbeat,
            Message::Hello(_) => MessageType::Hello,
            Message::ModelShare(_) => MessageType::ModelShare,
            Message::InputShare(_) => MessageType::InputShare,
            Message::TripleInventory(_) => MessageType::TripleInventory,
            Message::Open(_) => MessageType::Open,
            Message::SignQuery(_) => MessageType::SignQuery,
            Message::SignReply(_) => MessageType::SignReply,
            Message::PartialResult(_) => MessageType::PartialResult,
            Message::ClientKey(_) => MessageType::ClientKey,
            Message::SealedResult(_) => MessageType::SealedResult,
            Message::Abort { .. } => MessageType::Abort,
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match self {
            Message::Heartbeat => {}
            Message::Hello(h) => {
                let (tag, index) = h.party.role.tag();
                w.u8(tag);
                w.u32(index);
                w.bytes(&h.config_hash);
            }
            Message::ModelShare(b) => {
                w.u32(b.owner);
                w.u8(b.holder.tag());
                w.u32(b.weights.len() as u32);
                for (wt, bias) in b.weights.iter().zip(&b.biases) {
                    w.tensor(wt);
                    w.tensor(bias);
                }
            }
            Message::InputShare(s) => {
                w.u64(s.round);
                w.u8(s.holder.tag());
                w.tensor(&s.share);
            }
            Message::TripleInventory(m) => {
                w.u64(m.round);
                w.u8(m.holder.tag());
                w.u32(m.owners.len() as u32);
                for layers in &m.owners {
                    w.u32(layers.len() as u32);
                    for l in layers {
                        w.triple(&l.matmul);
                        w.trunc(&l.trunc);
                        match &l.relu {
                            None => w.u8(0),
                            Some(r) => {
                                w.u8(1);
                                w.triple(&r.blind);
                                w.triple(&r.mask);
                                w.triple(&r.select);
                            }
                        }
                    }
                }
            }
            Message::Open(ts) => {
                w.u32(ts.len() as u32);
                for t in ts {
                    w.tensor(t);
                }
            }
            Message::SignQuery(t) | Message::SignReply(t) => w.tensor(t),
            Message::PartialResult(p) => {
                w.u64(p.round);
                w.u32(p.owner);
                w.u8(p.holder.tag());
                w.tensor(&p.scores);
            }
            Message::ClientKey(pk) => w.bytes(pk),
            Message::SealedResult(s) => {
                w.u64(s.round);
                w.bytes(&s.nonce);
                w.bytes(&s.sender);
                w.u32(s.ciphertext.len() as u32);
                w.bytes(&s.ciphertext);
            }
            Message::Abort { code, reason } => {
                w.u8(*code);
                w.u32(reason.len() as u32);
                w.bytes(reason.as_bytes());
            }
        }
        w.0
    }

    /// Decodes a payload; ring tensors are validated against `modulus`.
    pub fn decode_payload(
        kind: MessageType,
        payload: &[u8],
        modulus: RingModulus,
    ) -> std::result::Result<Message, FrameError> {
        let mut r = Reader {
            kind,
            buf: payload,
            pos: 0,
            modulus,
        };
        let msg = match kind {
            MessageType::Heartbeat => Message::Heartbeat,
            MessageType::Hello => {
                let tag = r.u8()?;
                let index = r.u32()?;
                let role = Role::from_tag(tag, index).ok_or_else(|| r.bad(format!("role tag {tag}")))?;
                Message::Hello(Hello {
                    party: PartyId { role },
                    config_hash: r.array()?,
                })
            }
            MessageType::ModelShare => {
                let owner = r.u32()?;
                let holder = r.holder()?;
                let n = r.count(2 * 8)?;
                let mut weights = Vec::with_capacity(n);
                let mut biases = Vec::with_capacity(n);
                for _ in 0..n {
                    weights.push(r.tensor()?);
                    biases.push(r.tensor()?);
                }
                Message::ModelShare(ModelShareBundle {
                    owner,
                    holder,
                    weights,
                    biases,
                })
            }
            MessageType::InputShare => Message::InputShare(InputShare {
                round: r.u64()?,
                holder: r.holder()?,
                share: r.tensor()?,
            }),
            MessageType::TripleInventory => {
                let round = r.u64()?;
                let holder = r.holder()?;
                let owners = r.count(4)?;
                let mut all = Vec::with_capacity(owners);
                for _ in 0..owners {
                    let layers = r.count(8)?;
                    let mut ls = Vec::with_capacity(layers);
                    for _ in 0..layers {
                        let matmul = r.triple()?;
                        let trunc = r.trunc()?;
                        let relu = match r.u8()? {
                            0 => None,
                            1 => Some(ReluMask {
                                blind: r.triple()?,
                                mask: r.triple()?,
                                select: r.triple()?,
                            }),
                            t => return Err(r.bad(format!("relu flag {t}"))),
                        };
                        ls.push(LayerMaterial { matmul, trunc, relu });
                    }
                    all.push(ls);
                }
                Message::TripleInventory(RoundMaterial {
                    round,
                    holder,
                    owners: all,
                })
            }
            MessageType::Open => {
                let n = r.count(4)?;
                let mut ts = Vec::with_capacity(n);
                for _ in 0..n {
                    ts.push(r.tensor()?);
                }
                Message::Open(ts)
            }
            MessageType::SignQuery => Message::SignQuery(r.tensor()?),
            MessageType::SignReply => Message::SignReply(r.tensor()?),
            MessageType::PartialResult => Message::PartialResult(PartialResult {
                round: r.u64()?,
                owner: r.u32()?,
                holder: r.holder()?,
                scores: r.tensor()?,
            }),
            MessageType::ClientKey => Message::ClientKey(r.array()?),
            MessageType::SealedResult => {
                let round = r.u64()?;
                let nonce = r.array()?;
                let sender = r.array()?;
                let n = r.count(1)?;
                Message::SealedResult(SealedResult {
                    round,
                    nonce,
                    sender,
                    ciphertext: r.take(n)?.to_vec(),
                })
            }
            MessageType::Abort => {
                let code = r.u8()?;
                let n = r.count(1)?;
                let reason = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| r.bad("reason is not UTF-8".into()))?;
                Message::Abort { code, reason }
            }
        };
        if r.pos != payload.len() {
            return Err(r.bad(format!("{} trailing bytes", payload.len() - r.pos)));
        }
        Ok(msg)
    }

    pub fn to_frame(&self, session: SessionId, seq: u64) -> Frame {
        Frame {
            kind: self.kind(),
            session,
            seq,
            payload: self.encode_payload(),
        }
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    fn words(&mut self, vs: &[u64]) {
        self.0.reserve(vs.len() * 8);
        for &v in vs {
            self.u64(v);
        }
    }

    fn tensor(&mut self, t: &RingTensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        self.words(t.data());
    }

    fn triple(&mut self, t: &BeaverTriple) {
        self.u64(t.id.0);
        self.u8(t.holder.tag());
        self.u8(match t.kind {
            TripleKind::Elementwise => 0,
            TripleKind::Matrix => 1,
        });
        self.tensor(&t.q1);
        self.tensor(&t.q2);
        self.tensor(&t.q3);
    }

    fn trunc(&mut self, p: &TruncationPairs) {
        self.u64(p.id.0);
        self.u8(p.holder.tag());
        self.u64(p.scale);
        self.u64(p.r.len() as u64);
        self.words(&p.r);
        self.words(&p.r_trunc);
        self.words(&p.low_digit);
    }
}

struct Reader<'a> {
    kind: MessageType,
    buf: &'a [u8],
    pos: usize,
    modulus: RingModulus,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: String) -> FrameError {
        FrameError::Payload {
            kind: self.kind,
            reason,
        }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FrameError> {
        if n > self.remaining() {
            return Err(self.bad(format!("needs {n} more bytes at offset {}, {} left", self.pos, self.remaining())));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], FrameError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> std::result::Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, FrameError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> std::result::Result<u64, FrameError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    /// Reads a u32 count of items each at least `min_size` bytes long,
    /// rejecting counts the remaining payload cannot hold.
    fn count(&mut self, min_size: usize) -> std::result::Result<usize, FrameError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_size) > self.remaining() {
            return Err(self.bad(format!("count {n} exceeds payload")));
        }
        Ok(n)
    }

    fn holder(&mut self) -> std::result::Result<WorkerId, FrameError> {
        let t = self.u8()?;
        WorkerId::from_tag(t).ok_or_else(|| self.bad(format!("worker tag {t}")))
    }

    fn words(&mut self, n: usize, bound: Option<u64>) -> std::result::Result<Vec<u64>, FrameError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.bad("length overflow".into()))?)?;
        let out: Vec<u64> = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(q) = bound {
            if let Some(v) = out.iter().find(|&&v| v >= q) {
                return Err(self.bad(format!("element {v} not reduced modulo {q}")));
            }
        }
        Ok(out)
    }

    fn tensor(&mut self) -> std::result::Result<RingTensor, FrameError> {
        let rank = self.count(4)?;
        let mut shape = Vec::with_capacity(rank);
        let mut len = 1usize;
        for _ in 0..rank {
            let d = self.u32()? as usize;
            len = len.checked_mul(d).ok_or_else(|| self.bad("tensor size overflow".into()))?;
            shape.push(d);
        }
        let data = self.words(len, Some(self.modulus.value()))?;
        RingTensor::new(self.modulus, shape, data).map_err(|e| self.bad(e.to_string()))
    }

    fn triple(&mut self) -> std::result::Result<BeaverTriple, FrameError> {
        let id = MaterialId(self.u64()?);
        let holder = self.holder()?;
        let kind = match self.u8()? {
            0 => TripleKind::Elementwise,
            1 => TripleKind::Matrix,
            t => return Err(self.bad(format!("triple kind {t}"))),
        };
        Ok(BeaverTriple {
            id,
            holder,
            kind,
            q1: self.tensor()?,
            q2: self.tensor()?,
            q3: self.tensor()?,
        })
    }

    fn trunc(&mut self) -> std::result::Result<TruncationPairs, FrameError> {
        let id = MaterialId(self.u64()?);
        let holder = self.holder()?;
        let scale = self.u64()?;
        let n = self.u64()?;
        let q = Some(self.modulus.value());
        let too_big = |r: &Self| r.bad(format!("{n} truncation pairs at scale {scale} exceed payload"));
        let n = usize::try_from(n).map_err(|_| too_big(self))?;
        let needed = n
            .checked_mul(scale as usize)
            .and_then(|v| v.checked_add(2 * n))
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| too_big(self))?;
        if needed > self.remaining() {
            return Err(too_big(self));
        }
        Ok(TruncationPairs {
            id,
            holder,
            scale,
            r: self.words(n, q)?,
            r_trunc: self.words(n, q)?,
            low_digit: self.words(n * scale as usize, q)?,
        })
    }
}

pub fn encode_message(msg: &Message, session: SessionId, seq: u64) -> Vec<u8> {
    msg.to_frame(session, seq).encode()
}

/// Record of one sent message, for auditing who talked to whom.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub from: PartyId,
    pub to: PartyId,
    pub kind: MessageType,
    pub bytes: usize,
}

pub type Transcript = Arc<Mutex<Vec<TranscriptEntry>>>;

enum Inner {
    Loopback {
        tx: mpsc::Sender<Vec<u8>>,
        rx: mpsc::Receiver<Vec<u8>>,
    },
    Tcp(TcpStream),
}

/// One end of an ordered, reliable, framed connection between two parties.
///
/// Frames carry a per-direction sequence number starting at zero; any gap,
/// repeat, or foreign session id is a protocol error. Incoming message types
/// are checked against [`accepts`] for the local role.
pub struct Connection {
    local: PartyId,
    remote: Option<PartyId>,
    session: SessionId,
    modulus: RingModulus,
    timeout: Duration,
    send_seq: u64,
    recv_seq: u64,
    decoder: FrameDecoder,
    inner: Inner,
    endpoint: String,
    transcript: Option<Transcript>,
}

impl fmt::Debug for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Connection")
            .field("local", &self.local)
            .field("remote", &self.remote)
            .field("endpoint", &self.endpoint)
            .finish()
    }
}

/// Settings shared by every connection in a session.
#[derive(Clone, Debug)]
pub struct LinkSettings {
    pub session: SessionId,
    pub modulus: RingModulus,
    pub timeout: Duration,
    pub transcript: Option<Transcript>,
}

/// Two connected in-memory endpoints.
pub fn loopback_pair(a: PartyId, b: PartyId, settings: &LinkSettings) -> (Connection, Connection) {
    let (tx_ab, rx_ab) = mpsc::channel();
    let (tx_ba, rx_ba) = mpsc::channel();
    let make = |local: PartyId, remote: PartyId, tx, rx| Connection {
        local,
        remote: Some(remote),
        session: settings.session,
        modulus: settings.modulus,
        timeout: settings.timeout,
        send_seq: 0,
        recv_seq: 0,
        decoder: FrameDecoder::new(),
        inner: Inner::Loopback { tx, rx },
        endpoint: format!("loopback:{remote}"),
        transcript: settings.transcript.clone(),
    };
    (make(a, b, tx_ab, rx_ba), make(b, a, tx_ba, rx_ab))
}

impl Connection {
    pub fn tcp(local: PartyId, stream: TcpStream, settings: &LinkSettings) -> Result<Connection> {
        let endpoint = stream
            .peer_addr()
            .map(|a| a.to_string())
            .unwrap_or_else(|_| "tcp:?".to_string());
        stream.set_nodelay(true).map_err(|e| Error::transport(&endpoint, e))?;
        Ok(Connection {
            local,
            remote: None,
            session: settings.session,
            modulus: settings.modulus,
            timeout: settings.timeout,
            send_seq: 0,
            recv_seq: 0,
            decoder: FrameDecoder::new(),
            inner: Inner::Tcp(stream),
            endpoint,
            transcript: settings.transcript.clone(),
        })
    }

    /// Connects to `addr`, retrying refused attempts until `deadline`.
    pub fn connect(local: PartyId, addr: &str, deadline: Instant, settings: &LinkSettings) -> Result<Connection> {
        loop {
            let attempt = addr
                .to_socket_addrs()
                .and_then(|mut it| it.next().ok_or_else(|| io::Error::new(IoKind::NotFound, "no address")))
                .and_then(|sa| TcpStream::connect_timeout(&sa, settings.timeout.min(Duration::from_secs(5))));
            match attempt {
                Ok(stream) => {
                    let mut conn = Connection::tcp(local, stream, settings)?;
                    conn.endpoint = addr.to_string();
                    return Ok(conn);
                }
                Err(e) if Instant::now() < deadline && retryable_connect(&e) => {
                    std::thread::sleep(Duration::from_millis(50));
                }
                Err(e) => return Err(Error::transport(addr, e)),
            }
        }
    }

    pub fn local(&self) -> PartyId {
        self.local
    }

    pub fn remote(&self) -> Option<PartyId> {
        self.remote
    }

    pub fn set_remote(&mut self, remote: PartyId) {
        self.remote = Some(remote);
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    fn peer_name(&self) -> String {
        match self.remote {
            Some(p) => format!("{p} at {}", self.endpoint),
            None => self.endpoint.clone(),
        }
    }

    pub fn send(&mut self, msg: &Message) -> Result<()> {
        let bytes = encode_message(msg, self.session, self.send_seq);
        self.send_seq += 1;
        if let (Some(t), Some(remote)) = (&self.transcript, self.remote) {
            t.lock().expect("transcript lock").push(TranscriptEntry {
                from: self.local,
                to: remote,
                kind: msg.kind(),
                bytes: bytes.len(),
            });
        }
        let name = self.peer_name();
        match &mut self.inner {
            Inner::Loopback { tx, .. } => tx
                .send(bytes)
                .map_err(|_| Error::transport(name, io::Error::new(IoKind::BrokenPipe, "loopback peer dropped"))),
            Inner::Tcp(s) => s.write_all(&bytes).map_err(|e| Error::transport(name, e)),
        }
    }

    fn recv_frame(&mut self) -> Result<Frame> {
        let deadline = Instant::now() + self.timeout;
        loop {
            if let Some(frame) = self.decoder.next_frame()? {
                return Ok(frame);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::Timeout(self.peer_name()));
            }
            let wait = deadline - now;
            let name = self.peer_name();
            match &mut self.inner {
                Inner::Loopback { rx, .. } => match rx.recv_timeout(wait) {
                    Ok(bytes) => self.decoder.push(&bytes),
                    Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(name)),
                    Err(RecvTimeoutError::Disconnected) => {
                        return Err(Error::transport(
                            name,
                            io::Error::new(IoKind::ConnectionReset, "loopback peer dropped"),
                        ))
                    }
                },
                Inner::Tcp(s) => {
                    s.set_read_timeout(Some(wait)).map_err(|e| Error::transport(&name, e))?;
                    let mut chunk = [0u8; 64 * 1024];
                    match s.read(&mut chunk) {
                        Ok(0) => {
                            return Err(Error::transport(
                                name,
                                io::Error::new(IoKind::UnexpectedEof, "connection closed"),
                            ))
                        }
                        Ok(n) => self.decoder.push(&chunk[..n]),
                        Err(e) if matches!(e.kind(), IoKind::WouldBlock | IoKind::TimedOut) => {
                            return Err(Error::Timeout(name))
                        }
                        Err(e) if e.kind() == IoKind::Interrupted => {}
                        Err(e) => return Err(Error::transport(name, e)),
                    }
                }
            }
        }
    }

    /// Receives the next message, enforcing session, ordering, and the
    /// role's whitelist. Heartbeats are skipped.
    pub fn recv(&mut self) -> Result<Message> {
        loop {
            let frame = self.recv_frame()?;
            if frame.session != self.session {
                return Err(ProtocolError::ForeignSession {
                    expected: self.session.to_string(),
                    got: frame.session.to_string(),
                }
                .into());
            }
            if frame.seq != self.recv_seq {
                return Err(ProtocolError::Desync {
                    expected: self.recv_seq,
                    got: frame.seq,
                }
                .into());
            }
            self.recv_seq += 1;
            if !accepts(self.local.role, frame.kind) {
                return Err(ProtocolError::Forbidden {
                    role: self.local.to_string(),
                    tag: frame.kind.to_string(),
                }
                .into());
            }
            let msg = Message::decode_payload(frame.kind, &frame.payload, self.modulus)?;
            if msg != Message::Heartbeat {
                return Ok(msg);
            }
        }
    }

    fn unexpected(&self, expected: MessageType, got: Message) -> Error {
        match got {
            Message::Abort { reason, .. } => ProtocolError::Aborted(format!("{}: {reason}", self.peer_name())).into(),
            other => ProtocolError::Unexpected {
                expected: expected.to_string(),
                got: other.kind().to_string(),
            }
            .into(),
        }
    }

    pub fn recv_hello(&mut self) -> Result<Hello> {
        match self.recv()? {
            Message::Hello(h) => Ok(h),
            other => Err(self.unexpected(MessageType::Hello, other)),
        }
    }

    pub fn recv_model_share(&mut self) -> Result<ModelShareBundle> {
        match self.recv()? {
            Message::ModelShare(b) => Ok(b),
            other => Err(self.unexpected(MessageType::ModelShare, other)),
        }
    }

    pub fn recv_input_share(&mut self) -> Result<InputShare> {
        match self.recv()? {
            Message::InputShare(s) => Ok(s),
            other => Err(self.unexpected(MessageType::InputShare, other)),
        }
    }

    pub fn recv_inventory(&mut self) -> Result<RoundMaterial> {
        match self.recv()? {
            Message::TripleInventory(m) => Ok(m),
            other => Err(self.unexpected(MessageType::TripleInventory, other)),
        }
    }

    pub fn recv_open(&mut self) -> Result<Vec<RingTensor>> {
        match self.recv()? {
            Message::Open(ts) => Ok(ts),
            other => Err(self.unexpected(MessageType::Open, other)),
        }
    }

    pub fn recv_sign_query(&mut self) -> Result<RingTensor> {
        match self.recv()? {
            Message::SignQuery(t) => Ok(t),
            other => Err(self.unexpected(MessageType::SignQuery, other)),
        }
    }

    pub fn recv_partial(&mut self) -> Result<PartialResult> {
        match self.recv()? {
            Message::PartialResult(p) => Ok(p),
            other => Err(self.unexpected(MessageType::PartialResult, other)),
        }
    }

    pub fn recv_client_key(&mut self) -> Result<[u8; 32]> {
        match self.recv()? {
            Message::ClientKey(k) => Ok(k),
            other => Err(self.unexpected(MessageType::ClientKey, other)),
        }
    }

    /// Initiator side of the handshake: announce, then check the reply.
    pub fn hello_initiate(&mut self, config_hash: [u8; 32]) -> Result<PartyId> {
        self.send(&Message::Hello(Hello {
            party: self.local,
            config_hash,
        }))?;
        let reply = self.recv_hello()?;
        self.finish_hello(reply, config_hash)
    }

    /// Acceptor side: read the announcement, answer, then check it.
    pub fn hello_accept(&mut self, config_hash: [u8; 32]) -> Result<PartyId> {
        let hello = self.recv_hello()?;
        self.remote.get_or_insert(hello.party);
        self.send(&Message::Hello(Hello {
            party: self.local,
            config_hash,
        }))?;
        self.finish_hello(hello, config_hash)
    }

    fn finish_hello(&mut self, hello: Hello, config_hash: [u8; 32]) -> Result<PartyId> {
        if let Some(expected) = self.remote {
            if expected != hello.party {
                return Err(ProtocolError::Unexpected {
                    expected: expected.to_string(),
                    got: hello.party.to_string(),
                }
                .into());
            }
        }
        self.remote = Some(hello.party);
        if hello.config_hash != config_hash {
            return Err(ProtocolError::ConfigMismatch {
                peer: hello.party.to_string(),
            }
            .into());
        }
        Ok(hello.party)
    }
}

fn retryable_connect(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        IoKind::ConnectionRefused | IoKind::ConnectionReset | IoKind::TimedOut | IoKind::NotFound | IoKind::AddrNotAvailable
    )
}

/// Opening exchange with the other worker. A sends first and B answers,
/// so large openings cannot deadlock on full socket buffers.
impl PeerLink for Connection {
    fn exchange(&mut self, mine: &[&RingTensor]) -> Result<Vec<RingTensor>> {
        let msg = Message::Open(mine.iter().map(|t| (*t).clone()).collect());
        let theirs = match self.local.role {
            Role::WorkerA => {
                self.send(&msg)?;
                self.recv_open()?
            }
            _ => {
                let theirs = self.recv_open()?;
                self.send(&msg)?;
                theirs
            }
        };
        if theirs.len() != mine.len() {
            return Err(ProtocolError::Other(format!(
                "peer opened {} tensors, expected {}",
                theirs.len(),
                mine.len()
            ))
            .into());
        }
        Ok(theirs)
    }
}

impl SignOracle for Connection {
    fn sign_bits(&mut self, masked: &RingTensor) -> Result<RingTensor> {
        self.send(&Message::SignQuery(masked.clone()))
            .map_err(|e| ProtocolError::DealerUnavailable(e.to_string()))?;
        match self.recv() {
            Ok(Message::SignReply(t)) => Ok(t),
            Ok(other) => Err(self.unexpected(MessageType::SignReply, other)),
            Err(e @ Error::Protocol(_)) => Err(e),
            Err(e) => Err(ProtocolError::DealerUnavailable(e.to_string()).into()),
        }
    }
}
