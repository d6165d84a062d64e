//! Multi-party inference protocol: wire format, transports, and transcripts.
//!
//! Star topology. Input parties (ids 0..N-1) and the result coordinator
//! (0xFFFF) each hold one link to the evaluating server (0xFFFE); nobody else
//! talks to anybody. Every frame is:
//!
//!   [len u32 LE] [type u8] [session 16B] [sender u16 LE] [paramsHash 32B] [payload]
//!
//! where `len` counts everything after itself. Readers validate the length,
//! the type byte, and the parameter hash before touching the payload, and
//! payload decoding validates every residue against the receiver's own
//! modulus chain — a disagreeing or corrupted peer produces an error, never
//! a panic and never a silently wrong ciphertext.

pub mod session;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ckks::serial::{
    ct_from_bytes, ct_to_bytes, pubkey_from_bytes, pubkey_to_bytes, Reader,
};
use crate::ckks::{Ciphertext, PublicKey};
use crate::error::{Error, Result};
use crate::ring::{Context, RnsPoly};

/// Hard cap on one frame; a production-size evaluation-key share is ~4 MiB.
pub const MAX_FRAME: usize = 1 << 26;

pub const SERVER_ID: u16 = 0xFFFE;
pub const COORDINATOR_ID: u16 = 0xFFFF;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    TpkBcast = 2,
    PkShare = 3,
    CpkBcast = 4,
    RotShare = 5,
    RelinShareR1 = 6,
    RelinR1Agg = 7,
    RelinShareR2 = 8,
    SetupDone = 9,
    Ack = 10,
    Query = 11,
    InputCt = 12,
    ResultCt = 13,
    KsShare = 14,
    Finish = 15,
    Abort = 16,
}

impl MsgType {
    fn from_byte(b: u8) -> Result<Self> {
        use MsgType::*;
        Ok(match b {
            1 => Hello,
            2 => TpkBcast,
            3 => PkShare,
            4 => CpkBcast,
            5 => RotShare,
            6 => RelinShareR1,
            7 => RelinR1Agg,
            8 => RelinShareR2,
            9 => SetupDone,
            10 => Ack,
            11 => Query,
            12 => InputCt,
            13 => ResultCt,
            14 => KsShare,
            15 => Finish,
            16 => Abort,
            other => return Err(Error::Framing(format!("unknown message type {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        use MsgType::*;
        match self {
            Hello => "hello",
            TpkBcast => "tpkBcast",
            PkShare => "pkShare",
            CpkBcast => "cpkBcast",
            RotShare => "rotShare",
            RelinShareR1 => "relinShareR1",
            RelinR1Agg => "relinR1Agg",
            RelinShareR2 => "relinShareR2",
            SetupDone => "setupDone",
            Ack => "ack",
            Query => "query",
            InputCt => "inputCt",
            ResultCt => "resultCt",
            KsShare => "ksShare",
            Finish => "finish",
            Abort => "abort",
        }
    }
}

pub type PolyPair = (RnsPoly, RnsPoly);

#[derive(Clone, Debug)]
pub enum Message {
    Hello,
    TpkBcast(PublicKey),
    PkShare(RnsPoly),
    CpkBcast(PublicKey),
    RotShare { offset: u64, digits: Vec<RnsPoly> },
    RelinShareR1(Vec<PolyPair>),
    RelinR1Agg(Vec<PolyPair>),
    RelinShareR2(Vec<PolyPair>),
    SetupDone,
    Ack,
    Query { record: u64 },
    InputCt(Ciphertext),
    ResultCt(Ciphertext),
    KsShare(PolyPair),
    Finish,
    Abort { reason: String },
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello => MsgType::Hello,
            Message::TpkBcast(_) => MsgType::TpkBcast,
            Message::PkShare(_) => MsgType::PkShare,
            Message::CpkBcast(_) => MsgType::CpkBcast,
            Message::RotShare { .. } => MsgType::RotShare,
            Message::RelinShareR1(_) => MsgType::RelinShareR1,
            Message::RelinR1Agg(_) => MsgType::RelinR1Agg,
            Message::RelinShareR2(_) => MsgType::RelinShareR2,
            Message::SetupDone => MsgType::SetupDone,
            Message::Ack => MsgType::Ack,
            Message::Query { .. } => MsgType::Query,
            Message::InputCt(_) => MsgType::InputCt,
            Message::ResultCt(_) => MsgType::ResultCt,
            Message::KsShare(_) => MsgType::KsShare,
            Message::Finish => MsgType::Finish,
            Message::Abort { .. } => MsgType::Abort,
        }
    }
}

fn put_poly_vec(out: &mut Vec<u8>, polys: &[RnsPoly]) {
    out.extend_from_slice(&(polys.len() as u32).to_le_bytes());
    for p in polys {
        crate::ckks::serial::put_poly(out, p);
    }
}

fn get_poly_vec(ctx: &Context, r: &mut Reader) -> Result<Vec<RnsPoly>> {
    let count = r.u32()? as usize;
    let cap = 4 * (ctx.max_level() + 2);
    if count > cap {
        return Err(Error::Serialization(format!(
            "poly vector length {count} exceeds cap {cap}"
        )));
    }
    (0..count)
        .map(|_| crate::ckks::serial::get_poly(ctx, r))
        .collect()
}

fn put_pair_vec(out: &mut Vec<u8>, pairs: &[PolyPair]) {
    out.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
    for (a, b) in pairs {
        crate::ckks::serial::put_poly(out, a);
        crate::ckks::serial::put_poly(out, b);
    }
}

fn get_pair_vec(ctx: &Context, r: &mut Reader) -> Result<Vec<PolyPair>> {
    let count = r.u32()? as usize;
    let cap = 4 * (ctx.max_level() + 2);
    if count > cap {
        return Err(Error::Serialization(format!(
            "pair vector length {count} exceeds cap {cap}"
        )));
    }
    (0..count)
        .map(|_| {
            let a = crate::ckks::serial::get_poly(ctx, r)?;
            let b = crate::ckks::serial::get_poly(ctx, r)?;
            Ok((a, b))
        })
        .collect()
}

fn payload_bytes(msg: &Message) -> Vec<u8> {
    let mut out = Vec::new();
    match msg {
        Message::Hello | Message::SetupDone | Message::Ack | Message::Finish => {}
        Message::TpkBcast(pk) | Message::CpkBcast(pk) => {
            out = pubkey_to_bytes(pk);
        }
        Message::PkShare(p) => crate::ckks::serial::put_poly(&mut out, p),
        Message::RotShare { offset, digits } => {
            out.extend_from_slice(&offset.to_le_bytes());
            put_poly_vec(&mut out, digits);
        }
        Message::RelinShareR1(pairs)
        | Message::RelinR1Agg(pairs)
        | Message::RelinShareR2(pairs) => put_pair_vec(&mut out, pairs),
        Message::Query { record } => out.extend_from_slice(&record.to_le_bytes()),
        Message::InputCt(ct) | Message::ResultCt(ct) => {
            out = ct_to_bytes(ct);
        }
        Message::KsShare((a, b)) => {
            crate::ckks::serial::put_poly(&mut out, a);
            crate::ckks::serial::put_poly(&mut out, b);
        }
        Message::Abort { reason } => {
            let bytes = reason.as_bytes();
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(bytes);
        }
    }
    out
}

fn decode_payload(ctx: &Context, ty: MsgType, payload: &[u8]) -> Result<Message> {
    let mut r = Reader::new(payload);
    let msg = match ty {
        MsgType::Hello => Message::Hello,
        MsgType::SetupDone => Message::SetupDone,
        MsgType::Ack => Message::Ack,
        MsgType::Finish => Message::Finish,
        MsgType::TpkBcast => return Ok(Message::TpkBcast(pubkey_from_bytes(ctx, payload)?)),
        MsgType::CpkBcast => return Ok(Message::CpkBcast(pubkey_from_bytes(ctx, payload)?)),
        MsgType::PkShare => Message::PkShare(crate::ckks::serial::get_poly(ctx, &mut r)?),
        MsgType::RotShare => {
            let offset = r.u64()?;
            let digits = get_poly_vec(ctx, &mut r)?;
            Message::RotShare { offset, digits }
        }
        MsgType::RelinShareR1 => Message::RelinShareR1(get_pair_vec(ctx, &mut r)?),
        MsgType::RelinR1Agg => Message::RelinR1Agg(get_pair_vec(ctx, &mut r)?),
        MsgType::RelinShareR2 => Message::RelinShareR2(get_pair_vec(ctx, &mut r)?),
        MsgType::Query => Message::Query { record: r.u64()? },
        MsgType::InputCt => return Ok(Message::InputCt(ct_from_bytes(ctx, payload)?)),
        MsgType::ResultCt => return Ok(Message::ResultCt(ct_from_bytes(ctx, payload)?)),
        MsgType::KsShare => {
            let a = crate::ckks::serial::get_poly(ctx, &mut r)?;
            let b = crate::ckks::serial::get_poly(ctx, &mut r)?;
            Message::KsShare((a, b))
        }
        MsgType::Abort => {
            let len = r.u32()? as usize;
            if len > 4096 {
                return Err(Error::Serialization("abort reason too long".into()));
            }
            let reason = String::from_utf8(r.bytes(len)?.to_vec())
                .map_err(|e| Error::Serialization(format!("abort reason not utf-8: {e}")))?;
            Message::Abort { reason }
        }
    };
    r.finish()?;
    Ok(msg)
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub session: [u8; 16],
    pub sender: u16,
    pub msg: Message,
}

/// Serializes a frame, length prefix included.
pub fn encode_frame(session: &[u8; 16], sender: u16, params_hash: &[u8; 32], msg: &Message) -> Vec<u8> {
    let payload = payload_bytes(msg);
    let len = 1 + 16 + 2 + 32 + payload.len();
    assert!(len + 4 <= MAX_FRAME, "frame of {len} bytes exceeds MAX_FRAME");
    let mut out = Vec::with_capacity(4 + len);
    out.extend_from_slice(&(len as u32).to_le_bytes());
    out.push(msg.msg_type() as u8);
    out.extend_from_slice(session);
    out.extend_from_slice(&(sender.to_le_bytes()));
    out.extend_from_slice(params_hash);
    out.extend_from_slice(&payload);
    out
}

/// Parses and validates a full frame (length prefix included). The parameter
/// hash must match the local context.
pub fn decode_frame(ctx: &Context, bytes: &[u8]) -> Result<Frame> {
    let mut r = Reader::new(bytes);
    let len = r.u32()? as usize;
    if len + 4 != bytes.len() {
        return Err(Error::Framing(format!(
            "length field {} disagrees with frame size {}",
            len,
            bytes.len() - 4
        )));
    }
    if bytes.len() > MAX_FRAME {
        return Err(Error::Framing(format!("frame of {} bytes exceeds cap", bytes.len())));
    }
    let ty = MsgType::from_byte(r.u8()?)?;
    let session: [u8; 16] = r.bytes(16)?.try_into().unwrap();
    let sender = r.u16()?;
    let hash: [u8; 32] = r.bytes(32)?.try_into().unwrap();
    if hash != ctx.params_hash() {
        return Err(Error::ParamsHashMismatch { sender });
    }
    let payload = r.bytes(r.remaining())?;
    let msg = decode_payload(ctx, ty, payload)?;
    Ok(Frame { session, sender, msg })
}

// ---- transports -------------------------------------------------------------

/// A reliable, ordered byte link carrying whole frames. `recv` returns
/// Ok(None) on timeout so callers can attribute the silence to a party.
pub trait Transport: Send {
    fn send(&mut self, frame: &[u8]) -> Result<()>;
    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>>;
}

/// In-process link over channels; both ends carry identical frame bytes to
/// the TCP transport, so transcripts agree bit for bit.
pub struct InProcTransport {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
}

pub fn inproc_pair() -> (InProcTransport, InProcTransport) {
    let (atx, brx) = mpsc::channel();
    let (btx, arx) = mpsc::channel();
    (
        InProcTransport { tx: atx, rx: arx },
        InProcTransport { tx: btx, rx: brx },
    )
}

impl Transport for InProcTransport {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| Error::Protocol("peer hung up".into()))
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>> {
        match self.rx.recv_timeout(timeout) {
            Ok(frame) => Ok(Some(frame)),
            Err(mpsc::RecvTimeoutError::Timeout) => Ok(None),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(Error::Protocol("peer hung up".into()))
            }
        }
    }
}

pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream
            .set_nodelay(true)
            .map_err(Error::Io)?;
        Ok(TcpTransport { stream })
    }

    pub fn connect(addr: &str) -> Result<Self> {
        Self::new(TcpStream::connect(addr)?)
    }

    /// Reads exactly `buf.len()` bytes. Returns Ok(false) if the timeout
    /// fires before the first byte; a timeout mid-frame is an error.
    fn read_full(&mut self, buf: &mut [u8], timeout: Duration, started: bool) -> Result<bool> {
        self.stream.set_read_timeout(Some(timeout)).map_err(Error::Io)?;
        let mut got = 0;
        while got < buf.len() {
            match self.stream.read(&mut buf[got..]) {
                Ok(0) => return Err(Error::Protocol("peer closed connection".into())),
                Ok(n) => got += n,
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    if got == 0 && !started {
                        return Ok(false);
                    }
                    return Err(Error::Protocol("timeout inside a frame".into()));
                }
                Err(e) => return Err(Error::Io(e)),
            }
        }
        Ok(true)
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        self.stream.write_all(frame).map_err(Error::Io)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>> {
        let mut len_bytes = [0u8; 4];
        if !self.read_full(&mut len_bytes, timeout, false)? {
            return Ok(None);
        }
        let len = u32::from_le_bytes(len_bytes) as usize;
        if len + 4 > MAX_FRAME {
            return Err(Error::Framing(format!("announced frame of {len} bytes exceeds cap")));
        }
        let mut frame = vec![0u8; 4 + len];
        frame[..4].copy_from_slice(&len_bytes);
        self.read_full(&mut frame[4..], timeout, true)?;
        Ok(Some(frame))
    }
}

// ---- transcript ---------------------------------------------------------------

/// One frame as the server saw it. `seq` numbers repeats of the same
/// (phase, message, sender, recipient) combination.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TranscriptEntry {
    pub phase: String,
    pub message: String,
    pub sender: u16,
    pub recipient: u16,
    pub seq: u64,
    pub bytes: usize,
    pub digest: String,
}

/// Canonically ordered record of every frame relayed through the hub. Two
/// runs of the same session (any transport) produce identical transcripts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
    counters: BTreeMap<(String, String, u16, u16), u64>,
}

/// Phase order for canonical sorting.
const PHASES: &[&str] = &[
    "hello", "tpk", "cpk", "rotKeys", "relinR1", "relinR2", "setupDone", "query", "input",
    "evaluate", "ksShare", "result", "finish", "abort",
];

fn phase_index(phase: &str) -> usize {
    PHASES.iter().position(|p| *p == phase).unwrap_or(PHASES.len())
}

impl Transcript {
    pub fn record(&mut self, phase: &str, ty: MsgType, sender: u16, recipient: u16, frame: &[u8]) {
        let key = (phase.to_string(), ty.name().to_string(), sender, recipient);
        let seq = self.counters.entry(key).or_insert(0);
        let digest = hex::encode(Sha256::digest(frame));
        self.entries.push(TranscriptEntry {
            phase: phase.into(),
            message: ty.name().into(),
            sender,
            recipient,
            seq: *seq,
            bytes: frame.len(),
            digest,
        });
        *seq += 1;
    }

    /// Sorted by (phase, message type, sender, recipient, seq); arrival
    /// order within a phase does not matter.
    pub fn canonical(&self) -> Vec<TranscriptEntry> {
        let mut entries = self.entries.clone();
        entries.sort_by_key(|e| {
            (
                phase_index(&e.phase),
                e.message.clone(),
                e.sender,
                e.recipient,
                e.seq,
            )
        });
        entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.canonical()
            .iter()
            .map(|e| serde_json::to_string(e).expect("transcript entry serializes"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}
