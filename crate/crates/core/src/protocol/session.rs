//! Role state machines for a joint-inference session.
//!
//! Three roles. Input parties hold disjoint column ranges of the feature
//! matrix and a share of the collective key; the server holds the model and
//! evaluates; the coordinator issues queries and is the only party that can
//! read results (under its own target key). One session = one key ceremony
//! followed by any number of queries.
//!
//! Phase order, fixed: hello, tpk broadcast, cpk aggregation, one rotation
//! key per manifest offset, relinearization rounds 1 and 2, setup-done; then
//! per query: relay, input ciphertexts (summed — slot supports are disjoint,
//! so the sum is concatenation), evaluation, switch shares, result. Within a
//! phase the server drains parties in id order, so a run is deterministic
//! given per-party RNG seeds — that is what makes the transcript test
//! meaningful across transports.
//!
//! Failure: a party that cannot proceed sends Abort and the server relays it
//! to everyone else; silence beyond the timeout is attributed to the party
//! the server was waiting on.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::{
    decode_frame, encode_frame, inproc_pair, Message, TcpTransport, Transcript, Transport,
    COORDINATOR_ID, SERVER_ID,
};
use crate::ckks::{self, Ciphertext, RotKeys};
use crate::einfer::compile::{compile, encrypt_model, rotation_manifest, WeightForm};
use crate::einfer::exec::{infer, InferKeys};
use crate::einfer::{ModelSpec, ModelStructure};
use crate::error::{Error, Result};
use crate::mphe::{self, Share};
use crate::ring::{Context, CryptoParams};
use crate::vpack::{layout_for_model, vpack, ColumnPartition, PackLayout};
use std::time::Duration;

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub params: CryptoParams,
    pub n_parties: usize,
    pub session_id: [u8; 16],
    pub timeout: Duration,
}

impl SessionConfig {
    pub fn new(params: CryptoParams, n_parties: usize, session_id: [u8; 16]) -> Self {
        SessionConfig {
            params,
            n_parties,
            session_id,
            timeout: Duration::from_secs(30),
        }
    }
}

/// Server's side of the star: one link per input party plus the coordinator.
/// `clients[i]` talks to party id `i`.
pub struct Hub<T: Transport> {
    pub clients: Vec<T>,
    pub coordinator: T,
}

/// Deterministic, decorrelated per-party RNG stream for one session seed.
pub fn party_rng(seed: u64, party: u16) -> StdRng {
    StdRng::seed_from_u64(seed ^ (party as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn unexpected(phase: &'static str, got: &Message) -> Error {
    Error::Protocol(format!(
        "unexpected {} during {phase}",
        got.msg_type().name()
    ))
}

// ---- client ---------------------------------------------------------------

/// What an input party brings to a session: the public (weight-free) model
/// structure, the agreed column partition, and its own column slice of the
/// record table — `table[r]` holds rows x own-width values, row-major.
pub struct ClientInput<'a> {
    pub structure: &'a ModelStructure,
    pub partition: &'a ColumnPartition,
    pub table: &'a [Vec<f64>],
}

struct Endpoint<'a, T: Transport> {
    ctx: &'a Context,
    cfg: &'a SessionConfig,
    me: u16,
    transport: T,
}

impl<'a, T: Transport> Endpoint<'a, T> {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let frame = encode_frame(&self.cfg.session_id, self.me, &self.ctx.params_hash(), msg);
        self.transport.send(&frame)
    }

    /// Receives the next frame from the server; aborts and silence become
    /// errors attributed to the right place.
    fn recv(&mut self, phase: &'static str) -> Result<Message> {
        let bytes = self
            .transport
            .recv(self.cfg.timeout)?
            .ok_or(Error::Timeout { phase, party: SERVER_ID })?;
        let frame = decode_frame(self.ctx, &bytes)?;
        if frame.session != self.cfg.session_id {
            return Err(Error::Protocol("frame belongs to another session".into()));
        }
        if frame.sender != SERVER_ID {
            return Err(Error::Protocol(format!(
                "frame claims sender {:#06x}, only the server talks to us",
                frame.sender
            )));
        }
        if let Message::Abort { reason } = frame.msg {
            return Err(Error::RemoteAbort { sender: frame.sender, reason });
        }
        Ok(frame.msg)
    }
}

/// Normalizes one record's own-column slice and scatters it into this
/// party's slots. Padding and foreign slots stay zero.
fn pack_record(
    structure: &ModelStructure,
    partition: &ColumnPartition,
    party: usize,
    layout: &PackLayout,
    row: &[f64],
) -> Result<Vec<f64>> {
    let range = partition.range(party)?;
    let own = range.len();
    let (rows, cols) = (structure.input_shape.rows, structure.input_shape.cols);
    if row.len() != rows * own {
        return Err(Error::InvalidParams(format!(
            "record slice has {} values, party {party} owns {} ({rows} rows x {own} cols)",
            row.len(),
            rows * own
        )));
    }
    let mut vals = row.to_vec();
    if let Some(norm) = &structure.normalization {
        for r in 0..rows {
            for (j, c) in range.clone().enumerate() {
                let flat = r * cols + c;
                vals[r * own + j] = (vals[r * own + j] + norm.shift[flat]) * norm.scale[flat];
            }
        }
    }
    Ok(vpack(layout, partition, party, &vals)?.values)
}

pub fn run_client<T: Transport>(
    cfg: &SessionConfig,
    party_id: u16,
    input: ClientInput,
    transport: T,
    rng: &mut StdRng,
) -> Result<()> {
    let ctx = Context::new(cfg.params.clone())?;
    let mut ep = Endpoint { ctx: &ctx, cfg, me: party_id, transport };
    let res = client_main(&mut ep, party_id, &input, rng);
    if let Err(e) = &res {
        if !matches!(e, Error::RemoteAbort { .. }) {
            let _ = ep.send(&Message::Abort { reason: e.to_string() });
        }
    }
    res
}

fn client_main<T: Transport>(
    ep: &mut Endpoint<T>,
    party_id: u16,
    input: &ClientInput,
    rng: &mut StdRng,
) -> Result<()> {
    let ctx = ep.ctx;
    // Everything key-related is derived from the public structure, never
    // from weights: the manifest tells us which rotation keys to share in.
    let manifest = rotation_manifest(input.structure, ctx.slots())?;
    let shape = input.structure.input_shape;
    let layout = layout_for_model(ctx.slots(), shape.rows, shape.cols)?;

    ep.send(&Message::Hello)?;
    let tpk = match ep.recv("tpk")? {
        Message::TpkBcast(pk) => pk,
        other => return Err(unexpected("tpk", &other)),
    };

    let keys = mphe::keygen(ctx, party_id, rng);
    ep.send(&Message::PkShare(keys.pk_share.clone()))?;
    let cpk = match ep.recv("cpk")? {
        Message::CpkBcast(pk) => pk,
        other => return Err(unexpected("cpk", &other)),
    };

    for &offset in &manifest {
        let digits = mphe::rot_share(ctx, &keys.sk, offset, rng)?;
        ep.send(&Message::RotShare { offset: offset as u64, digits })?;
    }

    let (eph, r1) = mphe::relin_share_round1(ctx, &keys.sk, rng)?;
    ep.send(&Message::RelinShareR1(r1))?;
    let agg_r1 = match ep.recv("relinR1")? {
        Message::RelinR1Agg(agg) => agg,
        other => return Err(unexpected("relinR1", &other)),
    };
    let r2 = mphe::relin_share_round2(ctx, &keys.sk, &eph, &agg_r1, rng)?;
    ep.send(&Message::RelinShareR2(r2))?;

    match ep.recv("setupDone")? {
        Message::SetupDone => {}
        other => return Err(unexpected("setupDone", &other)),
    }

    loop {
        match ep.recv("query")? {
            Message::Query { record } => {
                let row = input.table.get(record as usize).ok_or_else(|| {
                    Error::UnknownRecord(format!(
                        "record {record} not present at party {party_id} (table has {} records)",
                        input.table.len()
                    ))
                })?;
                let slots =
                    pack_record(input.structure, input.partition, party_id as usize, &layout, row)?;
                let pt = ckks::encode(ctx, &slots, ctx.max_level(), ctx.scale())?;
                let ct = ckks::encrypt(ctx, &cpk, &pt, rng)?;
                ep.send(&Message::InputCt(ct))?;
            }
            Message::ResultCt(ct) => {
                let share = mphe::pcks_share(ctx, &keys.sk, &tpk, &ct, rng)?;
                ep.send(&Message::KsShare(share))?;
            }
            Message::Finish => return Ok(()),
            other => return Err(unexpected("query", &other)),
        }
    }
}

// ---- coordinator ------------------------------------------------------------

/// Runs the querying side: generates the target key pair, issues one query
/// per record id, decrypts each switched result. Returns one score vector
/// per record.
pub fn run_coordinator<T: Transport>(
    cfg: &SessionConfig,
    output_len: usize,
    records: &[u64],
    transport: T,
    rng: &mut StdRng,
) -> Result<Vec<Vec<f64>>> {
    let ctx = Context::new(cfg.params.clone())?;
    let mut ep = Endpoint { ctx: &ctx, cfg, me: COORDINATOR_ID, transport };
    let res = coordinator_main(&mut ep, output_len, records, rng);
    if let Err(e) = &res {
        if !matches!(e, Error::RemoteAbort { .. }) {
            let _ = ep.send(&Message::Abort { reason: e.to_string() });
        }
    }
    res
}

fn coordinator_main<T: Transport>(
    ep: &mut Endpoint<T>,
    output_len: usize,
    records: &[u64],
    rng: &mut StdRng,
) -> Result<Vec<Vec<f64>>> {
    let ctx = ep.ctx;
    let (tsk, tpk) = ckks::keygen(ctx, rng);
    ep.send(&Message::Hello)?;
    ep.send(&Message::TpkBcast(tpk))?;
    match ep.recv("setupDone")? {
        Message::Ack => {}
        other => return Err(unexpected("setupDone", &other)),
    }
    let mut scores = Vec::with_capacity(records.len());
    for &record in records {
        ep.send(&Message::Query { record })?;
        let ct = match ep.recv("result")? {
            Message::ResultCt(ct) => ct,
            other => return Err(unexpected("result", &other)),
        };
        let values = ckks::decrypt_decode(ctx, &tsk, &ct)?;
        scores.push(values[..output_len].to_vec());
    }
    ep.send(&Message::Finish)?;
    Ok(scores)
}

// ---- server -----------------------------------------------------------------

/// What the server hands back: the canonical transcript plus wall time spent
/// in each phase (receive waits included — it is the hub's view of the
/// session). Byte counts live in the transcript; times are advisory.
#[derive(Debug)]
pub struct ServerReport {
    pub transcript: Transcript,
    pub phase_seconds: BTreeMap<String, f64>,
}

struct ServerState<'a, T: Transport> {
    ctx: &'a Context,
    cfg: &'a SessionConfig,
    hub: Hub<T>,
    transcript: Transcript,
    clock: Instant,
    phase_seconds: BTreeMap<String, f64>,
}

impl<'a, T: Transport> ServerState<'a, T> {
    /// Charges the time since the last mark to `phase`.
    fn mark(&mut self, phase: &str) {
        let now = Instant::now();
        *self.phase_seconds.entry(phase.into()).or_insert(0.0) +=
            (now - self.clock).as_secs_f64();
        self.clock = now;
    }

    fn link(&mut self, peer: u16) -> &mut T {
        if peer == COORDINATOR_ID {
            &mut self.hub.coordinator
        } else {
            &mut self.hub.clients[peer as usize]
        }
    }

    fn send(&mut self, phase: &'static str, peer: u16, msg: &Message) -> Result<()> {
        let frame = encode_frame(&self.cfg.session_id, SERVER_ID, &self.ctx.params_hash(), msg);
        self.transcript.record(phase, msg.msg_type(), SERVER_ID, peer, &frame);
        self.link(peer).send(&frame)
    }

    fn broadcast(&mut self, phase: &'static str, msg: &Message) -> Result<()> {
        for i in 0..self.cfg.n_parties {
            self.send(phase, i as u16, msg)?;
        }
        Ok(())
    }

    /// Tells everyone except `except` that the session is dead. Best effort.
    fn relay_abort(&mut self, except: u16, reason: &str) {
        let msg = Message::Abort { reason: reason.into() };
        let frame = encode_frame(&self.cfg.session_id, SERVER_ID, &self.ctx.params_hash(), &msg);
        for i in 0..self.cfg.n_parties {
            if i as u16 != except {
                self.transcript.record("abort", msg.msg_type(), SERVER_ID, i as u16, &frame);
                let _ = self.hub.clients[i].send(&frame);
            }
        }
        if except != COORDINATOR_ID {
            self.transcript
                .record("abort", msg.msg_type(), SERVER_ID, COORDINATOR_ID, &frame);
            let _ = self.hub.coordinator.send(&frame);
        }
    }

    fn recv(&mut self, phase: &'static str, peer: u16) -> Result<Message> {
        let timeout = self.cfg.timeout;
        let bytes = self
            .link(peer)
            .recv(timeout)?
            .ok_or(Error::Timeout { phase, party: peer })?;
        let frame = decode_frame(self.ctx, &bytes)?;
        if frame.session != self.cfg.session_id {
            return Err(Error::Protocol("frame belongs to another session".into()));
        }
        if frame.sender != peer {
            return Err(Error::Protocol(format!(
                "link for party {peer} carried a frame claiming sender {}",
                frame.sender
            )));
        }
        self.transcript.record(phase, frame.msg.msg_type(), peer, SERVER_ID, &bytes);
        if let Message::Abort { reason } = frame.msg {
            self.relay_abort(peer, &reason);
            return Err(Error::RemoteAbort { sender: peer, reason });
        }
        Ok(frame.msg)
    }
}

/// Runs the evaluating server for one session over an already-connected hub.
/// Returns the canonical transcript of every frame that crossed it.
pub fn run_server<T: Transport, R: Rng + ?Sized>(
    cfg: &SessionConfig,
    spec: &ModelSpec,
    weight_form: WeightForm,
    hub: Hub<T>,
    rng: &mut R,
) -> Result<ServerReport> {
    if hub.clients.len() != cfg.n_parties || cfg.n_parties == 0 {
        return Err(Error::InvalidParams(format!(
            "hub has {} client links for {} parties",
            hub.clients.len(),
            cfg.n_parties
        )));
    }
    let ctx = Context::new(cfg.params.clone())?;
    let mut st = ServerState {
        ctx: &ctx,
        cfg,
        hub,
        transcript: Transcript::default(),
        clock: Instant::now(),
        phase_seconds: BTreeMap::new(),
    };
    let res = server_main(&mut st, spec, weight_form, rng);
    match res {
        Ok(()) => Ok(ServerReport {
            transcript: st.transcript,
            phase_seconds: st.phase_seconds,
        }),
        Err(e) => {
            if !matches!(e, Error::RemoteAbort { .. }) {
                st.relay_abort(SERVER_ID, &e.to_string());
            }
            Err(e)
        }
    }
}

fn server_main<T: Transport, R: Rng + ?Sized>(
    st: &mut ServerState<T>,
    spec: &ModelSpec,
    weight_form: WeightForm,
    rng: &mut R,
) -> Result<()> {
    let ctx = st.ctx;
    let n = st.cfg.n_parties;

    for i in 0..n {
        match st.recv("hello", i as u16)? {
            Message::Hello => {}
            other => return Err(unexpected("hello", &other)),
        }
    }
    match st.recv("hello", COORDINATOR_ID)? {
        Message::Hello => {}
        other => return Err(unexpected("hello", &other)),
    }

    let tpk = match st.recv("tpk", COORDINATOR_ID)? {
        Message::TpkBcast(pk) => pk,
        other => return Err(unexpected("tpk", &other)),
    };
    st.broadcast("tpk", &Message::TpkBcast(tpk))?;

    let mut pk_shares = Vec::with_capacity(n);
    for i in 0..n {
        match st.recv("cpk", i as u16)? {
            Message::PkShare(p) => pk_shares.push(Share::new(ctx, i as u16, p)),
            other => return Err(unexpected("cpk", &other)),
        }
    }
    let cpk = mphe::aggregate_cpk(ctx, &pk_shares, n)?;
    st.broadcast("cpk", &Message::CpkBcast(cpk.clone()))?;

    // The model compiles against fresh-ciphertext level; its manifest drives
    // the key ceremony and must match what clients derive from the structure.
    let mut model = compile(ctx, spec, ctx.max_level())?;

    let mut rot_keys = RotKeys::new();
    for &offset in &model.manifest.clone() {
        let mut shares = Vec::with_capacity(n);
        for i in 0..n {
            match st.recv("rotKeys", i as u16)? {
                Message::RotShare { offset: got, digits } if got == offset as u64 => {
                    shares.push(Share::new(ctx, i as u16, digits));
                }
                Message::RotShare { offset: got, .. } => {
                    return Err(Error::Protocol(format!(
                        "party {i} sent rotation share for offset {got}, expected {offset}"
                    )));
                }
                other => return Err(unexpected("rotKeys", &other)),
            }
        }
        rot_keys.insert(offset, mphe::aggregate_rot(ctx, offset, &shares, n)?);
    }

    let mut r1_shares = Vec::with_capacity(n);
    for i in 0..n {
        match st.recv("relinR1", i as u16)? {
            Message::RelinShareR1(s) => r1_shares.push(Share::new(ctx, i as u16, s)),
            other => return Err(unexpected("relinR1", &other)),
        }
    }
    let agg_r1 = mphe::relin_aggregate_r1(ctx, &r1_shares, n)?;
    st.broadcast("relinR1", &Message::RelinR1Agg(agg_r1.clone()))?;
    let mut r2_shares = Vec::with_capacity(n);
    for i in 0..n {
        match st.recv("relinR2", i as u16)? {
            Message::RelinShareR2(s) => r2_shares.push(Share::new(ctx, i as u16, s)),
            other => return Err(unexpected("relinR2", &other)),
        }
    }
    let rlk = mphe::relin_aggregate_r2(ctx, &agg_r1, &r2_shares, n)?;

    if weight_form == WeightForm::Encrypted {
        model = encrypt_model(ctx, &model, &cpk, rng)?;
    }

    st.broadcast("setupDone", &Message::SetupDone)?;
    st.send("setupDone", COORDINATOR_ID, &Message::Ack)?;
    st.mark("keygen");

    let keys = InferKeys { rot: &rot_keys, relin: Some(&rlk) };
    loop {
        match st.recv("query", COORDINATOR_ID)? {
            Message::Query { record } => {
                st.mark("idle");
                st.broadcast("query", &Message::Query { record })?;
                let mut packed: Option<Ciphertext> = None;
                for i in 0..n {
                    match st.recv("input", i as u16)? {
                        Message::InputCt(ct) => {
                            packed = Some(match packed {
                                // Disjoint slot supports: the sum IS the
                                // concatenated feature vector.
                                Some(acc) => ckks::hadd(ctx, &acc, &ct)?,
                                None => ct,
                            });
                        }
                        other => return Err(unexpected("input", &other)),
                    }
                }
                st.mark("concat");
                let result = infer(ctx, &model, &packed.expect("n >= 1"), &keys)?;
                st.broadcast("evaluate", &Message::ResultCt(result.clone()))?;
                st.mark("evaluate");
                let mut ks_shares = Vec::with_capacity(n);
                for i in 0..n {
                    match st.recv("ksShare", i as u16)? {
                        Message::KsShare(s) => ks_shares.push(Share::new(ctx, i as u16, s)),
                        other => return Err(unexpected("ksShare", &other)),
                    }
                }
                let switched = mphe::pcks_aggregate(ctx, &result, &ks_shares, n)?;
                st.send("result", COORDINATOR_ID, &Message::ResultCt(switched))?;
                st.mark("distDecrypt");
            }
            Message::Finish => {
                st.broadcast("finish", &Message::Finish)?;
                return Ok(());
            }
            other => return Err(unexpected("query", &other)),
        }
    }
}

// ---- single-process simulation ------------------------------------------------

#[derive(Debug)]
pub struct SessionOutcome {
    pub scores: Vec<Vec<f64>>,
    pub transcript: Transcript,
    pub phase_seconds: BTreeMap<String, f64>,
}

/// Runs a whole session in one process: N input parties, the server, and the
/// coordinator on threads over in-process links. `table[r]` holds one full
/// record (rows x cols, row-major); column slices are dealt to parties here,
/// mimicking data that never left its owner.
pub fn run_simulated_session(
    cfg: &SessionConfig,
    spec: &ModelSpec,
    partition: &ColumnPartition,
    table: &[Vec<f64>],
    records: &[u64],
    weight_form: WeightForm,
    seed: u64,
) -> Result<SessionOutcome> {
    let n = cfg.n_parties;
    if partition.n_parties() != n {
        return Err(Error::InvalidParams(format!(
            "partition has {} parties, session expects {n}",
            partition.n_parties()
        )));
    }
    let structure = spec.structure();
    let (rows, cols) = (structure.input_shape.rows, structure.input_shape.cols);
    let output_len = structure.output_len()?;

    let mut party_tables: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(table.len()); n];
    for (r, record) in table.iter().enumerate() {
        if record.len() != rows * cols {
            return Err(Error::InvalidParams(format!(
                "record {r} has {} values, expected {}",
                record.len(),
                rows * cols
            )));
        }
        for (p, t) in party_tables.iter_mut().enumerate() {
            let range = partition.range(p)?;
            let mut slice = Vec::with_capacity(rows * range.len());
            for row in 0..rows {
                slice.extend_from_slice(&record[row * cols + range.start..row * cols + range.end]);
            }
            t.push(slice);
        }
    }

    let mut client_sides = Vec::with_capacity(n);
    let mut server_sides = Vec::with_capacity(n);
    for _ in 0..n {
        let (c, s) = inproc_pair();
        client_sides.push(c);
        server_sides.push(s);
    }
    let (coord_side, server_coord) = inproc_pair();
    let hub = Hub { clients: server_sides, coordinator: server_coord };

    let (server_res, client_res, coord_res) = std::thread::scope(|scope| {
        let server = scope.spawn(|| {
            run_server(cfg, spec, weight_form, hub, &mut party_rng(seed, SERVER_ID))
        });
        let structure_ref = &structure;
        let tables_ref = &party_tables;
        let clients: Vec<_> = client_sides
            .into_iter()
            .enumerate()
            .map(|(i, transport)| {
                scope.spawn(move || {
                    let input = ClientInput {
                        structure: structure_ref,
                        partition,
                        table: &tables_ref[i],
                    };
                    run_client(cfg, i as u16, input, transport, &mut party_rng(seed, i as u16))
                })
            })
            .collect();
        let coordinator = scope.spawn(move || {
            run_coordinator(
                cfg,
                output_len,
                records,
                coord_side,
                &mut party_rng(seed, COORDINATOR_ID),
            )
        });
        (
            server.join().expect("server thread"),
            clients.into_iter().map(|c| c.join().expect("client thread")).collect::<Vec<_>>(),
            coordinator.join().expect("coordinator thread"),
        )
    });

    // Server errors carry the most context (they name the misbehaving party).
    let report = server_res?;
    for res in client_res {
        res?;
    }
    let scores = coord_res?;
    Ok(SessionOutcome {
        scores,
        transcript: report.transcript,
        phase_seconds: report.phase_seconds,
    })
}

// ---- TCP entry point -----------------------------------------------------------

/// Replays one already-consumed frame before reading from the wire again;
/// lets the accept loop identify connections by their hello without robbing
/// the state machine of it.
struct Replay<T: Transport> {
    first: Option<Vec<u8>>,
    inner: T,
}

impl<T: Transport> Transport for Replay<T> {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        self.inner.send(frame)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>> {
        match self.first.take() {
            Some(f) => Ok(Some(f)),
            None => self.inner.recv(timeout),
        }
    }
}

/// Accepts one connection per party (each must open with its hello frame),
/// then runs the server over them. The listener should already be bound.
pub fn serve_tcp<R: Rng + ?Sized>(
    listener: &TcpListener,
    cfg: &SessionConfig,
    spec: &ModelSpec,
    weight_form: WeightForm,
    rng: &mut R,
) -> Result<ServerReport> {
    let ctx = Context::new(cfg.params.clone())?;
    let n = cfg.n_parties;
    let mut clients: BTreeMap<u16, Replay<TcpTransport>> = BTreeMap::new();
    let mut coordinator = None;
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + cfg.timeout;
    while clients.len() < n || coordinator.is_none() {
        let stream = match listener.accept() {
            Ok((stream, _)) => stream,
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() > deadline {
                    let party = (0..n as u16)
                        .find(|i| !clients.contains_key(i))
                        .unwrap_or(COORDINATOR_ID);
                    return Err(Error::Timeout { phase: "hello", party });
                }
                std::thread::sleep(Duration::from_millis(2));
                continue;
            }
            Err(e) => return Err(Error::Io(e)),
        };
        stream.set_nonblocking(false)?;
        let mut transport = TcpTransport::new(stream)?;
        // A connection that dies or stays silent before its hello is not a
        // party (port probe, readiness check): drop it and keep accepting.
        let bytes = match transport.recv(cfg.timeout) {
            Ok(Some(bytes)) => bytes,
            Ok(None) | Err(_) => continue,
        };
        let frame = decode_frame(&ctx, &bytes)?;
        if frame.session != cfg.session_id {
            return Err(Error::Protocol("frame belongs to another session".into()));
        }
        if !matches!(frame.msg, Message::Hello) {
            return Err(Error::Protocol(format!(
                "connection must open with hello, got {}",
                frame.msg.msg_type().name()
            )));
        }
        let replay = Replay { first: Some(bytes), inner: transport };
        match frame.sender {
            COORDINATOR_ID => {
                if coordinator.replace(replay).is_some() {
                    return Err(Error::Protocol("two coordinators connected".into()));
                }
            }
            id if (id as usize) < n => {
                if clients.insert(id, replay).is_some() {
                    return Err(Error::Protocol(format!("party {id} connected twice")));
                }
            }
            id => {
                return Err(Error::Protocol(format!(
                    "hello from unknown party id {id} (session has {n} parties)"
                )));
            }
        }
    }
    let hub = Hub {
        clients: clients.into_values().collect(),
        coordinator: coordinator.expect("loop exits only when present"),
    };
    run_server(cfg, spec, weight_form, hub, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::einfer::fixtures;
    use crate::einfer::{infer_clear, InputShape, LayerSpec};

    fn tiny_cfg(n: usize) -> SessionConfig {
        let mut cfg = SessionConfig::new(CryptoParams::tiny256(), n, [3u8; 16]);
        cfg.timeout = Duration::from_secs(20);
        cfg
    }

    /// dense 6->3, square, dense 3->2 on a 2x3 feature matrix: one feature
    /// column per party in the 3-party tests.
    fn three_column_spec() -> ModelSpec {
        ModelSpec {
            input_shape: InputShape { rows: 2, cols: 3 },
            normalization: Some(crate::einfer::Normalization {
                scale: vec![0.5; 6],
                shift: vec![0.25, -0.5, 0.0, 0.125, 1.0, -0.25],
            }),
            layers: vec![
                LayerSpec::Dense {
                    rows: 3,
                    cols: 6,
                    weights: vec![
                        0.4, -0.2, 0.3, 0.1, -0.5, 0.25, //
                        -0.3, 0.6, -0.1, 0.2, 0.15, -0.4, //
                        0.2, 0.1, -0.25, 0.5, -0.3, 0.35,
                    ],
                    bias: vec![0.2, -0.1, 0.3],
                },
                LayerSpec::Activation { coeffs: vec![0.0, 0.0, 1.0] },
                LayerSpec::Dense {
                    rows: 2,
                    cols: 3,
                    weights: vec![0.7, -0.4, 0.2, -0.6, 0.5, 0.3],
                    bias: vec![-0.15, 0.45],
                },
            ],
        }
    }

    fn sample_table(spec: &ModelSpec, count: usize) -> Vec<Vec<f64>> {
        let len = spec.input_shape.rows * spec.input_shape.cols;
        (0..count)
            .map(|r| (0..len).map(|i| ((r * 7 + i * 3) % 11) as f64 / 5.5 - 1.0).collect())
            .collect()
    }

    fn clear_scores(spec: &ModelSpec, table: &[Vec<f64>], records: &[u64]) -> Vec<Vec<f64>> {
        records
            .iter()
            .map(|&r| {
                let normalized = spec.normalize(&table[r as usize]).unwrap();
                infer_clear(spec, &normalized).unwrap()
            })
            .collect()
    }

    #[test]
    fn simulated_session_matches_clear_inference() {
        let spec = three_column_spec();
        let cfg = tiny_cfg(3);
        let partition = ColumnPartition::new(3, vec![0, 1, 2]).unwrap();
        let table = sample_table(&spec, 4);
        let records = [0u64, 2, 3];
        let out = run_simulated_session(
            &cfg,
            &spec,
            &partition,
            &table,
            &records,
            WeightForm::Plain,
            77,
        )
        .unwrap();
        let expected = clear_scores(&spec, &table, &records);
        assert_eq!(out.scores.len(), 3);
        for (got, want) in out.scores.iter().zip(&expected) {
            assert_eq!(got.len(), 2);
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 5e-2, "got {g}, want {w}");
            }
        }
        // Setup + 3 queries crossed the hub; every phase is present.
        assert!(out.transcript.len() > 40);
    }

    #[test]
    fn encrypted_weight_session_matches_clear_inference() {
        let spec = three_column_spec();
        let cfg = tiny_cfg(2);
        let partition = ColumnPartition::new(3, vec![0, 2]).unwrap();
        let table = sample_table(&spec, 2);
        let records = [1u64];
        let out = run_simulated_session(
            &cfg,
            &spec,
            &partition,
            &table,
            &records,
            WeightForm::Encrypted,
            13,
        )
        .unwrap();
        let expected = clear_scores(&spec, &table, &records);
        for (g, w) in out.scores[0].iter().zip(&expected[0]) {
            assert!((g - w).abs() < 5e-2, "got {g}, want {w}");
        }
    }

    #[test]
    fn toy_model_session_runs_two_parties() {
        let spec = fixtures::toy_mlp();
        let cfg = tiny_cfg(2);
        let partition = ColumnPartition::new(2, vec![0, 1]).unwrap();
        let table = sample_table(&spec, 2);
        let records = [0u64, 1];
        let out = run_simulated_session(
            &cfg,
            &spec,
            &partition,
            &table,
            &records,
            WeightForm::Plain,
            5,
        )
        .unwrap();
        let expected = clear_scores(&spec, &table, &records);
        for (got, want) in out.scores.iter().zip(&expected) {
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 5e-2, "got {g}, want {w}");
            }
        }
    }

    #[test]
    fn tcp_session_reproduces_the_simulated_transcript() {
        let spec = three_column_spec();
        let cfg = tiny_cfg(3);
        let partition = ColumnPartition::new(3, vec![0, 1, 2]).unwrap();
        let table = sample_table(&spec, 2);
        let records = [1u64];
        let seed = 99;

        let sim = run_simulated_session(
            &cfg,
            &spec,
            &partition,
            &table,
            &records,
            WeightForm::Plain,
            seed,
        )
        .unwrap();

        // Same parties, same seeds, real sockets.
        let structure = spec.structure();
        let output_len = structure.output_len().unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let mut party_tables: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 3];
        for record in &table {
            for (p, t) in party_tables.iter_mut().enumerate() {
                let range = partition.range(p).unwrap();
                let mut slice = Vec::new();
                for row in 0..2 {
                    slice.extend_from_slice(&record[row * 3 + range.start..row * 3 + range.end]);
                }
                t.push(slice);
            }
        }
        let (scores, transcript) = std::thread::scope(|scope| {
            let server = scope.spawn(|| {
                serve_tcp(
                    &listener,
                    &cfg,
                    &spec,
                    WeightForm::Plain,
                    &mut party_rng(seed, SERVER_ID),
                )
            });
            let structure_ref = &structure;
            let tables_ref = &party_tables;
            let cfg_ref = &cfg;
            let partition_ref = &partition;
            let addr_ref = &addr;
            let clients: Vec<_> = (0..3)
                .map(|i| {
                    scope.spawn(move || {
                        let transport = TcpTransport::connect(addr_ref).unwrap();
                        let input = ClientInput {
                            structure: structure_ref,
                            partition: partition_ref,
                            table: &tables_ref[i],
                        };
                        run_client(
                            cfg_ref,
                            i as u16,
                            input,
                            transport,
                            &mut party_rng(seed, i as u16),
                        )
                    })
                })
                .collect();
            let coordinator = scope.spawn(|| {
                let transport = TcpTransport::connect(&addr).unwrap();
                run_coordinator(
                    &cfg,
                    output_len,
                    &records,
                    transport,
                    &mut party_rng(seed, COORDINATOR_ID),
                )
            });
            for c in clients {
                c.join().unwrap().unwrap();
            }
            (
                coordinator.join().unwrap().unwrap(),
                server.join().unwrap().unwrap().transcript,
            )
        });

        // Same seeds, same frames: transcripts agree digest for digest, and
        // the decrypted scores are bit-identical.
        assert_eq!(transcript.canonical(), sim.transcript.canonical());
        assert_eq!(scores, sim.scores);
    }

    #[test]
    fn unknown_record_aborts_the_session_naming_the_party() {
        let spec = fixtures::toy_mlp();
        let cfg = tiny_cfg(2);
        let partition = ColumnPartition::new(2, vec![0, 1]).unwrap();
        let table = sample_table(&spec, 2);
        let err = run_simulated_session(
            &cfg,
            &spec,
            &partition,
            &table,
            &[7u64],
            WeightForm::Plain,
            5,
        )
        .unwrap_err();
        match err {
            Error::RemoteAbort { sender, reason } => {
                assert_eq!(sender, 0);
                assert!(reason.contains("record 7"), "reason: {reason}");
            }
            other => panic!("expected a relayed abort, got {other:?}"),
        }
    }

    #[test]
    fn silent_party_is_named_in_the_timeout() {
        let mut cfg = tiny_cfg(2);
        cfg.timeout = Duration::from_millis(50);
        let spec = fixtures::toy_mlp();
        // Links exist but nobody ever writes: the server should blame the
        // first party it was waiting on.
        let (_c0, s0) = inproc_pair();
        let (_c1, s1) = inproc_pair();
        let (_cc, sc) = inproc_pair();
        let hub = Hub { clients: vec![s0, s1], coordinator: sc };
        let err = run_server(
            &cfg,
            &spec,
            WeightForm::Plain,
            hub,
            &mut party_rng(1, SERVER_ID),
        )
        .unwrap_err();
        match err {
            Error::Timeout { phase, party } => {
                assert_eq!(phase, "hello");
                assert_eq!(party, 0);
            }
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_parameters_are_rejected_at_the_server() {
        let mut cfg = tiny_cfg(1);
        cfg.timeout = Duration::from_millis(500);
        let spec = fixtures::toy_mlp();
        let (mut c0, s0) = inproc_pair();
        let (_cc, sc) = inproc_pair();
        // A party running different parameters computes a different hash.
        let other_ctx = Context::new(CryptoParams::tiny()).unwrap();
        let frame = encode_frame(&cfg.session_id, 0, &other_ctx.params_hash(), &Message::Hello);
        c0.send(&frame).unwrap();
        let hub = Hub { clients: vec![s0], coordinator: sc };
        let err = run_server(
            &cfg,
            &spec,
            WeightForm::Plain,
            hub,
            &mut party_rng(1, SERVER_ID),
        )
        .unwrap_err();
        match err {
            Error::ParamsHashMismatch { sender } => assert_eq!(sender, 0),
            other => panic!("expected params hash mismatch, got {other:?}"),
        }
    }

    #[test]
    fn pack_record_normalizes_only_owned_columns() {
        let ctx = Context::new(CryptoParams::tiny256()).unwrap();
        let spec = three_column_spec();
        let structure = spec.structure();
        let partition = ColumnPartition::new(3, vec![0, 1, 2]).unwrap();
        let layout = layout_for_model(ctx.slots(), 2, 3).unwrap();
        let full = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        // Party 1 owns column 1: values 2.0 and 5.0.
        let slots = pack_record(&structure, &partition, 1, &layout, &[2.0, 5.0]).unwrap();
        let expected = spec.normalize(&full).unwrap();
        assert!((slots[layout.slot_index(0, 0, 1)] - expected[1]).abs() < 1e-12);
        assert!((slots[layout.slot_index(0, 1, 1)] - expected[4]).abs() < 1e-12);
        // Everything outside party 1's two slots is zero.
        let owned: Vec<usize> = vec![layout.slot_index(0, 0, 1), layout.slot_index(0, 1, 1)];
        for (i, v) in slots.iter().enumerate() {
            if !owned.contains(&i) {
                assert_eq!(*v, 0.0, "slot {i} should be empty");
            }
        }
    }

    #[test]
    fn party_rng_streams_differ() {
        use rand::RngCore;
        let a = party_rng(42, 0).next_u64();
        let b = party_rng(42, 1).next_u64();
        let s = party_rng(42, SERVER_ID).next_u64();
        assert_ne!(a, b);
        assert_ne!(a, s);
        // Same seed, same party: same stream.
        assert_eq!(party_rng(42, 0).next_u64(), a);
    }
}
