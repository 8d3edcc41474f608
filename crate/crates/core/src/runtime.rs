//! Party event loops over [`Connection`]s, the in-process simulation that
//! runs all of them over loopback links, and TCP session setup.

use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorKind, ProtocolError, Result};
use crate::model::ModelParameters;
use crate::protocol::{
    client_share_input, open_sealed, owner_share_model, secret_key_from, session_id, substream, worker_infer,
    AggregateOutcome, Aggregator, MaterialFactory, PartyId, Role, SessionConfig,
};
use crate::sharing::{Dealer, WorkerContext, WorkerId};
use crate::transport::{loopback_pair, Connection, LinkSettings, Message, TranscriptEntry};

/// Answer to one client query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundOutcome {
    Label(usize),
    /// The aggregator declined to answer, e.g. budget exhausted.
    Refused(String),
}

impl RoundOutcome {
    pub fn label(&self) -> Option<usize> {
        match self {
            RoundOutcome::Label(l) => Some(*l),
            RoundOutcome::Refused(_) => None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct OwnerReport {
    pub owner: u32,
    pub share_time: Duration,
}

#[derive(Clone, Debug, Default)]
pub struct WorkerReport {
    pub rounds: Vec<Duration>,
}

#[derive(Clone, Debug, Default)]
pub struct DealerReport {
    pub sign_queries: usize,
}

#[derive(Clone, Debug, Default)]
pub struct AggregatorReport {
    /// Decoded per-owner scores per round.
    pub outputs: Vec<Vec<Vec<f64>>>,
    pub aggregate_time: Vec<Duration>,
}

#[derive(Clone, Debug, Default)]
pub struct ClientReport {
    pub outcomes: Vec<RoundOutcome>,
}

/// Settings for every link of a session run from `seed`.
pub fn link_settings(cfg: &SessionConfig, seed: u64, transcript: Option<Arc<Mutex<Vec<TranscriptEntry>>>>) -> LinkSettings {
    LinkSettings {
        session: session_id(seed),
        modulus: cfg.modulus,
        timeout: Duration::from_millis(cfg.timeout_ms),
        transcript,
    }
}

/// Shares one owner's model with both workers, then goes offline.
pub fn run_owner(
    cfg: &SessionConfig,
    owner: u32,
    params: &ModelParameters,
    seed: u64,
    to_a: &mut Connection,
    to_b: &mut Connection,
) -> Result<OwnerReport> {
    if params.spec != cfg.spec {
        return Err(Error::Config(format!(
            "owner {owner} model is {}, session expects {}",
            params.spec, cfg.spec
        )));
    }
    let start = Instant::now();
    let mut rng = substream(seed, &format!("owner/{owner}/sharing"));
    let (a, b) = owner_share_model(owner, params, cfg.codec(), &mut rng)?;
    let share_time = start.elapsed();
    to_a.send(&Message::ModelShare(a))?;
    to_b.send(&Message::ModelShare(b))?;
    Ok(OwnerReport { owner, share_time })
}

/// Established connections of one worker; `owners[i]` talks to owner `i+1`.
pub struct WorkerLinks {
    pub owners: Vec<Connection>,
    pub dealer: Connection,
    pub client: Connection,
    pub peer: Connection,
    pub aggregator: Connection,
}

pub fn run_worker(cfg: &SessionConfig, id: WorkerId, seed: u64, rounds: u64, links: &mut WorkerLinks) -> Result<WorkerReport> {
    let mut bundles = Vec::with_capacity(links.owners.len());
    for (i, conn) in links.owners.iter_mut().enumerate() {
        let owner = i as u32 + 1;
        let b = conn.recv_model_share()?;
        let dims = cfg.spec.dims();
        let shapes_ok = b.weights.len() == cfg.spec.num_layers()
            && b.weights.iter().zip(&b.biases).enumerate().all(|(j, (w, bias))| {
                w.shape() == [dims[j], dims[j + 1]] && bias.shape() == [1, dims[j + 1]]
            });
        if b.owner != owner || b.holder != id || !shapes_ok {
            return Err(ProtocolError::Other(format!(
                "model share from owner {owner} does not match the session (owner {}, holder {})",
                b.owner, b.holder
            ))
            .into());
        }
        bundles.push(b);
    }
    let session = session_id(seed);
    let mut ctx = WorkerContext::new(id, session, cfg.codec());
    let mut blind_rng = substream(seed, &format!("worker/{id}/blind"));
    let mut report = WorkerReport::default();
    for round in 0..rounds {
        let input = links.client.recv_input_share()?;
        let material = links.dealer.recv_inventory()?;
        if input.round != round || material.round != round || input.holder != id || material.holder != id {
            return Err(ProtocolError::Other(format!(
                "round {round}: got input for round {} and material for round {}",
                input.round, material.round
            ))
            .into());
        }
        if input.share.shape() != [1, cfg.spec.input_dim] {
            return Err(ProtocolError::Shape {
                left: vec![1, cfg.spec.input_dim],
                right: input.share.shape().to_vec(),
            }
            .into());
        }
        if material.owners.len() != bundles.len() {
            return Err(ProtocolError::MaterialExhausted(format!(
                "material for {} owners, session has {}",
                material.owners.len(),
                bundles.len()
            ))
            .into());
        }
        let start = Instant::now();
        for (bundle, layers) in bundles.iter().zip(&material.owners) {
            let partial = worker_infer(
                &mut ctx,
                round,
                bundle,
                &input.share,
                layers,
                &mut blind_rng,
                &mut links.dealer,
                &mut links.peer,
            )?;
            links.aggregator.send(&Message::PartialResult(partial))?;
        }
        report.rounds.push(start.elapsed());
    }
    Ok(report)
}

pub fn run_dealer(cfg: &SessionConfig, seed: u64, rounds: u64, to_a: &mut Connection, to_b: &mut Connection) -> Result<DealerReport> {
    let mut factory = MaterialFactory::new(cfg, substream(seed, "dealer/triples"));
    let mut signer = Dealer::new(cfg.modulus, substream(seed, "dealer/signs"));
    let relu_layers = cfg.spec.hidden_dims.len() * cfg.owners as usize;
    let mut report = DealerReport::default();
    for _ in 0..rounds {
        let (a, b) = factory.next_round();
        to_a.send(&Message::TripleInventory(a))?;
        to_b.send(&Message::TripleInventory(b))?;
        for _ in 0..relu_layers {
            let qa = to_a.recv_sign_query()?;
            let qb = to_b.recv_sign_query()?;
            let (ra, rb) = signer.answer_signs(&qa, &qb)?;
            to_a.send(&Message::SignReply(ra))?;
            to_b.send(&Message::SignReply(rb))?;
            report.sign_queries += 1;
        }
    }
    Ok(report)
}

/// Collects `m` partials from each worker per round, then releases or
/// refuses. A worker silent past the deadline fails the round naming the
/// owners still missing.
pub fn run_aggregator(
    cfg: &SessionConfig,
    seed: u64,
    rounds: u64,
    client: &mut Connection,
    from_a: &mut Connection,
    from_b: &mut Connection,
) -> Result<AggregatorReport> {
    let mut agg = Aggregator::new(cfg.clone(), seed);
    let client_pk = client.recv_client_key()?;
    let mut report = AggregatorReport::default();
    for round in 0..rounds {
        let mut partials = Vec::with_capacity(2 * cfg.owners as usize);
        for (conn, w) in [(&mut *from_a, WorkerId::A), (&mut *from_b, WorkerId::B)] {
            for k in 0..cfg.owners {
                match conn.recv_partial() {
                    Ok(p) => partials.push(p),
                    Err(Error::Timeout(_)) => {
                        let have: Vec<u32> = partials.iter().filter(|p| p.holder == w).map(|p| p.owner).collect();
                        let missing: Vec<String> = (1..=cfg.owners)
                            .filter(|o| !have.contains(o))
                            .map(|o| format!("owner {o}"))
                            .collect();
                        return Err(Error::Timeout(format!(
                            "round {round}: {} of {} partials from worker {w}, missing {}",
                            k,
                            cfg.owners,
                            missing.join(", ")
                        )));
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        let start = Instant::now();
        let outcome = agg.round(round, &partials, "client", &client_pk)?;
        report.outputs.push(crate::protocol::reconstruct_partials(&partials, cfg.owners, cfg.codec())?);
        report.aggregate_time.push(start.elapsed());
        match outcome {
            AggregateOutcome::Released { sealed, .. } => client.send(&Message::SealedResult(sealed))?,
            AggregateOutcome::Refused(e) => client.send(&Message::Abort {
                code: ErrorKind::Budget.exit_code() as u8,
                reason: e.to_string(),
            })?,
        }
    }
    Ok(report)
}

pub fn run_client(
    cfg: &SessionConfig,
    seed: u64,
    inputs: &[Vec<f64>],
    to_a: &mut Connection,
    to_b: &mut Connection,
    to_agg: &mut Connection,
) -> Result<ClientReport> {
    let key = secret_key_from(&mut substream(seed, "client/keys"));
    to_agg.send(&Message::ClientKey(key.public_key().to_bytes()))?;
    let mut rng = substream(seed, "client/sharing");
    let mut report = ClientReport::default();
    for (round, x) in inputs.iter().enumerate() {
        let round = round as u64;
        let (a, b) = client_share_input(round, x, &cfg.spec, cfg.codec(), &mut rng)?;
        to_a.send(&Message::InputShare(a))?;
        to_b.send(&Message::InputShare(b))?;
        let outcome = match to_agg.recv()? {
            Message::SealedResult(s) if s.round == round => {
                RoundOutcome::Label(open_sealed(&s, &key, cfg.spec.output_dim)?)
            }
            Message::SealedResult(s) => {
                return Err(ProtocolError::Other(format!("sealed result for round {} during round {round}", s.round)).into())
            }
            Message::Abort { code, reason } if code as i32 == ErrorKind::Budget.exit_code() => RoundOutcome::Refused(reason),
            Message::Abort { reason, .. } => return Err(ProtocolError::Aborted(reason).into()),
            other => {
                return Err(ProtocolError::Unexpected {
                    expected: "SealedResult".into(),
                    got: other.kind().to_string(),
                }
                .into())
            }
        };
        report.outcomes.push(outcome);
    }
    Ok(report)
}

/// Everything observed by an in-process run.
#[derive(Clone, Debug, Default)]
pub struct SessionReport {
    pub outcomes: Vec<RoundOutcome>,
    pub owners: Vec<OwnerReport>,
    pub worker_a: WorkerReport,
    pub worker_b: WorkerReport,
    pub dealer: DealerReport,
    pub aggregator: AggregatorReport,
    pub transcript: Vec<TranscriptEntry>,
}

fn owner_party(i: u32) -> PartyId {
    PartyId::new(Role::Owner(i))
}

fn party(role: Role) -> PartyId {
    PartyId::new(role)
}

/// Picks the most informative failure: errors that are only echoes of a
/// peer disappearing rank below protocol and configuration errors.
fn root_cause(errors: Vec<Error>) -> Error {
    let mut errors = errors;
    let pos = errors
        .iter()
        .position(|e| !matches!(e, Error::Party { source, .. } if source.is_retryable()))
        .unwrap_or(0);
    errors.swap_remove(pos)
}

/// Runs every party on its own thread over loopback links and answers one
/// query per input.
pub fn simulate(cfg: &SessionConfig, models: &[ModelParameters], inputs: &[Vec<f64>], seed: u64) -> Result<SessionReport> {
    cfg.validate()?;
    if models.len() != cfg.owners as usize {
        return Err(Error::Config(format!(
            "{} models for a session of {} owners",
            models.len(),
            cfg.owners
        )));
    }
    let transcript = Arc::new(Mutex::new(Vec::new()));
    let settings = link_settings(cfg, seed, Some(transcript.clone()));
    let hash = cfg.hash();
    let rounds = inputs.len() as u64;
    let m = cfg.owners;

    let (mut owner_a, mut a_owner): (Vec<_>, Vec<_>) =
        (1..=m).map(|i| loopback_pair(owner_party(i), party(Role::WorkerA), &settings)).unzip();
    let (mut owner_b, mut b_owner): (Vec<_>, Vec<_>) =
        (1..=m).map(|i| loopback_pair(owner_party(i), party(Role::WorkerB), &settings)).unzip();
    let (mut d_a, a_d) = loopback_pair(party(Role::Dealer), party(Role::WorkerA), &settings);
    let (mut d_b, b_d) = loopback_pair(party(Role::Dealer), party(Role::WorkerB), &settings);
    let (mut c_a, a_c) = loopback_pair(party(Role::Client), party(Role::WorkerA), &settings);
    let (mut c_b, b_c) = loopback_pair(party(Role::Client), party(Role::WorkerB), &settings);
    let (mut c_g, mut g_c) = loopback_pair(party(Role::Client), party(Role::Aggregator), &settings);
    let (a_b, b_a) = loopback_pair(party(Role::WorkerA), party(Role::WorkerB), &settings);
    let (a_g, mut g_a) = loopback_pair(party(Role::WorkerA), party(Role::Aggregator), &settings);
    let (b_g, mut g_b) = loopback_pair(party(Role::WorkerB), party(Role::Aggregator), &settings);

    let mut links_a = WorkerLinks {
        owners: a_owner.drain(..).collect(),
        dealer: a_d,
        client: a_c,
        peer: a_b,
        aggregator: a_g,
    };
    let mut links_b = WorkerLinks {
        owners: b_owner.drain(..).collect(),
        dealer: b_d,
        client: b_c,
        peer: b_a,
        aggregator: b_g,
    };

    let results = thread::scope(|s| {
        let mut owner_handles = Vec::new();
        for (i, ((ca, cb), params)) in owner_a.iter_mut().zip(owner_b.iter_mut()).zip(models).enumerate() {
            let owner = i as u32 + 1;
            owner_handles.push(s.spawn(move || {
                ca.hello_initiate(hash)?;
                cb.hello_initiate(hash)?;
                run_owner(cfg, owner, params, seed, ca, cb)
            }));
        }
        let worker_a = s.spawn(|| {
            accept_worker(&mut links_a, hash)?;
            links_a.peer.hello_initiate(hash)?;
            links_a.aggregator.hello_initiate(hash)?;
            run_worker(cfg, WorkerId::A, seed, rounds, &mut links_a)
        });
        let worker_b = s.spawn(|| {
            accept_worker(&mut links_b, hash)?;
            links_b.peer.hello_accept(hash)?;
            links_b.aggregator.hello_initiate(hash)?;
            run_worker(cfg, WorkerId::B, seed, rounds, &mut links_b)
        });
        let dealer = s.spawn(|| {
            d_a.hello_initiate(hash)?;
            d_b.hello_initiate(hash)?;
            run_dealer(cfg, seed, rounds, &mut d_a, &mut d_b)
        });
        let aggregator = s.spawn(|| {
            g_c.hello_accept(hash)?;
            g_a.hello_accept(hash)?;
            g_b.hello_accept(hash)?;
            run_aggregator(cfg, seed, rounds, &mut g_c, &mut g_a, &mut g_b)
        });
        let client = s.spawn(|| {
            c_a.hello_initiate(hash)?;
            c_b.hello_initiate(hash)?;
            c_g.hello_initiate(hash)?;
            run_client(cfg, seed, inputs, &mut c_a, &mut c_b, &mut c_g)
        });
        let owners: Vec<Result<OwnerReport>> = owner_handles.into_iter().map(|h| h.join().expect("owner thread")).collect();
        (
            owners,
            worker_a.join().expect("worker thread"),
            worker_b.join().expect("worker thread"),
            dealer.join().expect("dealer thread"),
            aggregator.join().expect("aggregator thread"),
            client.join().expect("client thread"),
        )
    });
    let (owners, wa, wb, dealer, aggregator, client) = results;

    let mut errors = Vec::new();
    let mut report = SessionReport::default();
    for (i, r) in owners.into_iter().enumerate() {
        match r {
            Ok(o) => report.owners.push(o),
            Err(e) => errors.push(e.at(owner_party(i as u32 + 1))),
        }
    }
    match wa {
        Ok(r) => report.worker_a = r,
        Err(e) => errors.push(e.at(Role::WorkerA)),
    }
    match wb {
        Ok(r) => report.worker_b = r,
        Err(e) => errors.push(e.at(Role::WorkerB)),
    }
    match dealer {
        Ok(r) => report.dealer = r,
        Err(e) => errors.push(e.at(Role::Dealer)),
    }
    match aggregator {
        Ok(r) => report.aggregator = r,
        Err(e) => errors.push(e.at(Role::Aggregator)),
    }
    match client {
        Ok(r) => report.outcomes = r.outcomes,
        Err(e) => errors.push(e.at(Role::Client)),
    }
    if !errors.is_empty() {
        return Err(root_cause(errors));
    }
    report.transcript = transcript.lock().expect("transcript lock").clone();
    Ok(report)
}

fn accept_worker(links: &mut WorkerLinks, hash: [u8; 32]) -> Result<()> {
    for conn in links.owners.iter_mut() {
        conn.hello_accept(hash)?;
    }
    links.dealer.hello_accept(hash)?;
    links.client.hello_accept(hash)?;
    Ok(())
}

/// Listen addresses of the parties that accept connections.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoints {
    pub worker_a: String,
    pub worker_b: String,
    pub aggregator: String,
}

/// Accepts connections until every party in `expected` has said hello.
fn accept_all(
    listener: &TcpListener,
    local: PartyId,
    expected: &[PartyId],
    hash: [u8; 32],
    settings: &LinkSettings,
    deadline: Instant,
) -> Result<Vec<Connection>> {
    listener.set_nonblocking(true)?;
    let mut slots: Vec<Option<Connection>> = expected.iter().map(|_| None).collect();
    while slots.iter().any(Option::is_none) {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                let mut conn = Connection::tcp(local, stream, settings)?;
                let who = conn.hello_accept(hash)?;
                let Some(i) = expected.iter().position(|p| *p == who) else {
                    return Err(ProtocolError::Unexpected {
                        expected: "a session party".into(),
                        got: who.to_string(),
                    }
                    .into());
                };
                if slots[i].is_some() {
                    return Err(ProtocolError::Other(format!("{who} connected twice")).into());
                }
                slots[i] = Some(conn);
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    let missing: Vec<String> = expected
                        .iter()
                        .zip(&slots)
                        .filter(|(_, s)| s.is_none())
                        .map(|(p, _)| p.to_string())
                        .collect();
                    return Err(Error::Timeout(format!("{local} waiting for {}", missing.join(", "))));
                }
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(Error::transport(local.to_string(), e)),
        }
    }
    Ok(slots.into_iter().map(|s| s.expect("filled")).collect())
}

fn bind(addr: &str) -> Result<TcpListener> {
    TcpListener::bind(addr).map_err(|e| Error::transport(addr, e))
}

fn connect(local: PartyId, addr: &str, hash: [u8; 32], settings: &LinkSettings, deadline: Instant) -> Result<Connection> {
    let mut conn = Connection::connect(local, addr, deadline, settings)?;
    conn.hello_initiate(hash)?;
    Ok(conn)
}

/// What one TCP party process produced.
#[derive(Clone, Debug)]
pub enum PartyReport {
    Owners(Vec<OwnerReport>),
    Worker(WorkerReport),
    Dealer(DealerReport),
    Aggregator(AggregatorReport),
    Client(ClientReport),
}

/// Which role a TCP process plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartyRole {
    /// One owner, or every owner of the session in parallel.
    Owners(Option<u32>),
    Worker(WorkerId),
    Dealer,
    Aggregator,
    Client,
}

/// Inputs a TCP party may need; unused fields are ignored by its role.
pub struct PartyInputs<'a> {
    pub models: &'a [ModelParameters],
    pub inputs: &'a [Vec<f64>],
    pub rounds: u64,
}

/// Runs one role over TCP. Workers and the aggregator listen; everyone
/// else connects, retrying until the session deadline.
pub fn run_tcp_party(
    role: PartyRole,
    cfg: &SessionConfig,
    endpoints: &Endpoints,
    seed: u64,
    data: PartyInputs<'_>,
    listener: Option<TcpListener>,
) -> Result<PartyReport> {
    cfg.validate()?;
    let settings = link_settings(cfg, seed, None);
    let hash = cfg.hash();
    let deadline = Instant::now() + settings.timeout;
    let m = cfg.owners;
    match role {
        PartyRole::Owners(which) => {
            let owners: Vec<u32> = match which {
                Some(i) if i >= 1 && i <= m => vec![i],
                Some(i) => return Err(Error::Config(format!("owner index {i} outside 1..={m}"))),
                None => (1..=m).collect(),
            };
            if data.models.len() != owners.len() {
                return Err(Error::Config(format!(
                    "{} model files for {} owners",
                    data.models.len(),
                    owners.len()
                )));
            }
            let reports: Vec<Result<OwnerReport>> = thread::scope(|s| {
                let handles: Vec<_> = owners
                    .iter()
                    .zip(data.models)
                    .map(|(&i, params)| {
                        let settings = &settings;
                        s.spawn(move || {
                            let me = owner_party(i);
                            let mut a = connect(me, &endpoints.worker_a, hash, settings, deadline)?;
                            let mut b = connect(me, &endpoints.worker_b, hash, settings, deadline)?;
                            run_owner(cfg, i, params, seed, &mut a, &mut b).map_err(|e| e.at(me))
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("owner thread")).collect()
            });
            Ok(PartyReport::Owners(reports.into_iter().collect::<Result<_>>()?))
        }
        PartyRole::Worker(id) => {
            let me = party(Role::worker(id));
            let addr = match id {
                WorkerId::A => &endpoints.worker_a,
                WorkerId::B => &endpoints.worker_b,
            };
            let listener = listener.map_or_else(|| bind(addr), Ok)?;
            let mut expected: Vec<PartyId> = (1..=m).map(owner_party).collect();
            expected.push(party(Role::Dealer));
            expected.push(party(Role::Client));
            if id == WorkerId::B {
                expected.push(party(Role::WorkerA));
            }
            let mut conns = accept_all(&listener, me, &expected, hash, &settings, deadline)?;
            let peer = match id {
                WorkerId::A => connect(me, &endpoints.worker_b, hash, &settings, deadline)?,
                WorkerId::B => conns.pop().expect("worker a"),
            };
            let client = conns.pop().expect("client");
            let dealer = conns.pop().expect("dealer");
            let aggregator = connect(me, &endpoints.aggregator, hash, &settings, deadline)?;
            let mut links = WorkerLinks {
                owners: conns,
                dealer,
                client,
                peer,
                aggregator,
            };
            Ok(PartyReport::Worker(run_worker(cfg, id, seed, data.rounds, &mut links)?))
        }
        PartyRole::Dealer => {
            let me = party(Role::Dealer);
            let mut a = connect(me, &endpoints.worker_a, hash, &settings, deadline)?;
            let mut b = connect(me, &endpoints.worker_b, hash, &settings, deadline)?;
            Ok(PartyReport::Dealer(run_dealer(cfg, seed, data.rounds, &mut a, &mut b)?))
        }
        PartyRole::Aggregator => {
            let me = party(Role::Aggregator);
            let listener = listener.map_or_else(|| bind(&endpoints.aggregator), Ok)?;
            let expected = [party(Role::Client), party(Role::WorkerA), party(Role::WorkerB)];
            let mut conns = accept_all(&listener, me, &expected, hash, &settings, deadline)?;
            let mut b = conns.pop().expect("worker b");
            let mut a = conns.pop().expect("worker a");
            let mut c = conns.pop().expect("client");
            Ok(PartyReport::Aggregator(run_aggregator(cfg, seed, data.rounds, &mut c, &mut a, &mut b)?))
        }
        PartyRole::Client => {
            let me = party(Role::Client);
            let mut a = connect(me, &endpoints.worker_a, hash, &settings, deadline)?;
            let mut b = connect(me, &endpoints.worker_b, hash, &settings, deadline)?;
            let mut g = connect(me, &endpoints.aggregator, hash, &settings, deadline)?;
            Ok(PartyReport::Client(run_client(cfg, seed, data.inputs, &mut a, &mut b, &mut g)?))
        }
    }
}
