//! The simulated enclave boundary.
//!
//! Every message between the client, the trusted enclave and the untrusted
//! host is encoded to bytes (a 1-byte tag followed by big-endian fields),
//! observed by the [`LeakageLog`], and decoded again on the far side.
//! Client ecalls travel sealed under a channel key agreed at setup, so the
//! host only ever sees their length.

use std::collections::VecDeque;
use std::fmt;
use std::io::{self, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SchemeParams;
use crate::crypto::{self, Key, SecretKeys, Token};
use crate::edb::{DeleteMsg, EdbError, EncryptedDb, InsertMsg, SplitEvent};
use crate::enclave::{
    Enclave, EnclaveError, EnclaveState, Hit, RankedResult, SearchQuery, UpdateOp, UpdateRequest,
};
use crate::filters::{FilterError, SubFilterId};
use crate::wire::{Put, Reader, WireError};

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error("secure channel not established; run setup first")]
    NotEstablished,
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error(transparent)]
    Enclave(#[from] EnclaveError),
    #[error(transparent)]
    Edb(#[from] EdbError),
    #[error("{0}")]
    State(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<WireError> for BoundaryError {
    fn from(e: WireError) -> Self {
        BoundaryError::MalformedMessage(e.to_string())
    }
}

impl BoundaryError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, BoundaryError::Enclave(e) if e.is_not_found())
    }
}

/// Server-side failures, as carried in an error reply.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServerError {
    #[error("duplicate TSet address")]
    DuplicateStag,
    #[error("duplicate ITSet address")]
    DuplicateIndex,
    #[error("{0} entry not found")]
    NotFound(String),
    #[error("unknown sub-filter {0}")]
    UnknownSubFilter(SubFilterId),
    #[error("request rejected: {0}")]
    Rejected(String),
}

impl From<EdbError> for ServerError {
    fn from(e: EdbError) -> Self {
        match e {
            EdbError::DuplicateStag => ServerError::DuplicateStag,
            EdbError::DuplicateIndex => ServerError::DuplicateIndex,
            EdbError::NotFound(what) => ServerError::NotFound(what.into()),
            EdbError::Filter(FilterError::UnknownSubFilter(id)) => ServerError::UnknownSubFilter(id),
            other => ServerError::Rejected(other.to_string()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OcallError {
    #[error("server: {0}")]
    Server(ServerError),
    #[error("transport: {0}")]
    Transport(String),
}

impl From<WireError> for OcallError {
    fn from(e: WireError) -> Self {
        OcallError::Transport(e.to_string())
    }
}

/// Calls from the enclave into untrusted code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OcallMsg {
    TSetGet { stag: Token },
    ITSetGet { ind: Token },
    TSetBatchGet { stags: Vec<Token> },
    LoadSubFilter { id: SubFilterId },
    ApplyInsert(InsertMsg),
    ApplyDelete(DeleteMsg),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OcallReply {
    Value(Option<Vec<u8>>),
    Batch(Vec<Option<Vec<u8>>>),
    SubFilter(Vec<u8>),
    Inserted,
    Deleted { fingerprint_removed: bool },
    Error(ServerError),
}

/// Calls into the enclave.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EcallMsg {
    /// `nonce` is reserved for a real attestation handshake.
    Setup { keys: SecretKeys, nonce: [u8; 16] },
    Update(UpdateRequest),
    Search(SearchQuery),
    /// Issued by the host after it split a sub-filter.
    IndexTreeSync { version: u64, split: SubFilterId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EcallReply {
    Ready,
    Updated,
    Results(RankedResult),
    Synced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OcallKind {
    TSetGet,
    ITSetGet,
    TSetBatchGet,
    LoadSubFilter,
    ApplyInsert,
    ApplyDelete,
}

impl OcallKind {
    /// Token exchanges count as roundtrips; the rest are data-plane loads.
    pub fn is_token_exchange(self) -> bool {
        matches!(self, OcallKind::TSetBatchGet | OcallKind::ApplyInsert | OcallKind::ApplyDelete)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EcallKind {
    Setup,
    Update,
    Search,
    IndexTreeSync,
}

impl fmt::Display for OcallKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for EcallKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

fn put_id(out: &mut Vec<u8>, id: SubFilterId) {
    out.put_u8(id.len());
    out.extend_from_slice(&id.to_packed());
}

fn read_id(r: &mut Reader) -> Result<SubFilterId, WireError> {
    let len = r.u8()?;
    let bytes = r.take((len as usize).div_ceil(8))?;
    SubFilterId::from_packed(len, bytes).map_err(|e| WireError::Invalid(e.to_string()))
}

fn put_opt(out: &mut Vec<u8>, v: &Option<Vec<u8>>) {
    match v {
        None => out.put_u8(0),
        Some(b) => {
            out.put_u8(1);
            out.put_bytes(b);
        }
    }
}

fn read_opt(r: &mut Reader) -> Result<Option<Vec<u8>>, WireError> {
    Ok(if r.bool()? { Some(r.bytes()?.to_vec()) } else { None })
}

fn bad_tag(what: &str, tag: u8) -> WireError {
    WireError::Invalid(format!("unknown {what} tag {tag:#04x}"))
}

impl OcallMsg {
    pub fn kind(&self) -> OcallKind {
        match self {
            OcallMsg::TSetGet { .. } => OcallKind::TSetGet,
            OcallMsg::ITSetGet { .. } => OcallKind::ITSetGet,
            OcallMsg::TSetBatchGet { .. } => OcallKind::TSetBatchGet,
            OcallMsg::LoadSubFilter { .. } => OcallKind::LoadSubFilter,
            OcallMsg::ApplyInsert(_) => OcallKind::ApplyInsert,
            OcallMsg::ApplyDelete(_) => OcallKind::ApplyDelete,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            OcallMsg::TSetGet { stag } => {
                out.put_u8(0x01);
                out.extend_from_slice(stag);
            }
            OcallMsg::ITSetGet { ind } => {
                out.put_u8(0x02);
                out.extend_from_slice(ind);
            }
            OcallMsg::TSetBatchGet { stags } => {
                out.put_u8(0x03);
                out.put_u32(stags.len() as u32);
                stags.iter().for_each(|s| out.extend_from_slice(s));
            }
            OcallMsg::LoadSubFilter { id } => {
                out.put_u8(0x04);
                put_id(&mut out, *id);
            }
            OcallMsg::ApplyInsert(m) => {
                out.put_u8(0x05);
                put_id(&mut out, m.subfilter);
                out.extend_from_slice(&m.stag);
                out.put_bytes(&m.cid);
                out.extend_from_slice(&m.ind);
                out.put_bytes(&m.cstag);
                out.put_u32(m.fingerprint);
                out.put_u32(m.bucket_hint);
            }
            OcallMsg::ApplyDelete(m) => {
                out.put_u8(0x06);
                put_id(&mut out, m.subfilter);
                out.extend_from_slice(&m.stag);
                out.extend_from_slice(&m.stag_last);
                out.extend_from_slice(&m.ind);
                out.extend_from_slice(&m.ind_last);
                out.put_u32(m.fingerprint);
                out.put_u32(m.bucket_hint);
                put_opt(&mut out, &m.moved_cid);
                put_opt(&mut out, &m.moved_cstag);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let msg = match r.u8()? {
            0x01 => OcallMsg::TSetGet { stag: r.token()? },
            0x02 => OcallMsg::ITSetGet { ind: r.token()? },
            0x03 => {
                let n = r.u32()? as usize;
                let stags = (0..n).map(|_| r.token()).collect::<Result<_, _>>()?;
                OcallMsg::TSetBatchGet { stags }
            }
            0x04 => OcallMsg::LoadSubFilter { id: read_id(&mut r)? },
            0x05 => OcallMsg::ApplyInsert(InsertMsg {
                subfilter: read_id(&mut r)?,
                stag: r.token()?,
                cid: r.bytes()?.to_vec(),
                ind: r.token()?,
                cstag: r.bytes()?.to_vec(),
                fingerprint: r.u32()?,
                bucket_hint: r.u32()?,
            }),
            0x06 => OcallMsg::ApplyDelete(DeleteMsg {
                subfilter: read_id(&mut r)?,
                stag: r.token()?,
                stag_last: r.token()?,
                ind: r.token()?,
                ind_last: r.token()?,
                fingerprint: r.u32()?,
                bucket_hint: r.u32()?,
                moved_cid: read_opt(&mut r)?,
                moved_cstag: read_opt(&mut r)?,
            }),
            t => return Err(bad_tag("ocall", t)),
        };
        r.finish()?;
        Ok(msg)
    }
}

impl ServerError {
    fn code(&self) -> u8 {
        match self {
            ServerError::DuplicateStag => 1,
            ServerError::DuplicateIndex => 2,
            ServerError::NotFound(_) => 3,
            ServerError::UnknownSubFilter(_) => 4,
            ServerError::Rejected(_) => 5,
        }
    }
}

impl OcallReply {
    pub fn kind(&self) -> &'static str {
        match self {
            OcallReply::Value(_) => "Value",
            OcallReply::Batch(_) => "Batch",
            OcallReply::SubFilter(_) => "SubFilter",
            OcallReply::Inserted => "Inserted",
            OcallReply::Deleted { .. } => "Deleted",
            OcallReply::Error(_) => "Error",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            OcallReply::Value(v) => {
                out.put_u8(0x81);
                put_opt(&mut out, v);
            }
            OcallReply::Batch(vs) => {
                out.put_u8(0x82);
                out.put_u32(vs.len() as u32);
                vs.iter().for_each(|v| put_opt(&mut out, v));
            }
            OcallReply::SubFilter(b) => {
                out.put_u8(0x83);
                out.put_bytes(b);
            }
            OcallReply::Inserted => out.put_u8(0x84),
            OcallReply::Deleted { fingerprint_removed } => {
                out.put_u8(0x85);
                out.put_u8(*fingerprint_removed as u8);
            }
            OcallReply::Error(e) => {
                out.put_u8(0xff);
                out.put_u8(e.code());
                match e {
                    ServerError::NotFound(s) | ServerError::Rejected(s) => out.put_string(s),
                    ServerError::UnknownSubFilter(id) => put_id(&mut out, *id),
                    ServerError::DuplicateStag | ServerError::DuplicateIndex => {}
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let reply = match r.u8()? {
            0x81 => OcallReply::Value(read_opt(&mut r)?),
            0x82 => {
                let n = r.u32()? as usize;
                OcallReply::Batch((0..n).map(|_| read_opt(&mut r)).collect::<Result<_, _>>()?)
            }
            0x83 => OcallReply::SubFilter(r.bytes()?.to_vec()),
            0x84 => OcallReply::Inserted,
            0x85 => OcallReply::Deleted {
                fingerprint_removed: r.bool()?,
            },
            0xff => OcallReply::Error(match r.u8()? {
                1 => ServerError::DuplicateStag,
                2 => ServerError::DuplicateIndex,
                3 => ServerError::NotFound(r.string()?),
                4 => ServerError::UnknownSubFilter(read_id(&mut r)?),
                5 => ServerError::Rejected(r.string()?),
                c => return Err(bad_tag("server error", c)),
            }),
            t => return Err(bad_tag("ocall reply", t)),
        };
        r.finish()?;
        Ok(reply)
    }
}

fn put_query(out: &mut Vec<u8>, q: &SearchQuery) {
    match q {
        SearchQuery::Exact { keywords, .. } => {
            out.put_u8(0);
            out.put_u16(keywords.len() as u16);
            keywords.iter().for_each(|k| out.put_string(k));
        }
        SearchQuery::Fuzzy { anchor, companions, .. } => {
            out.put_u8(1);
            out.put_string(anchor);
            out.put_u16(companions.len() as u16);
            for (k, d) in companions {
                out.put_string(k);
                out.put_i32(*d);
            }
        }
    }
    match q.top_k() {
        None => out.put_u8(0),
        Some(k) => {
            out.put_u8(1);
            out.put_u32(k);
        }
    }
}

fn read_query(r: &mut Reader) -> Result<SearchQuery, WireError> {
    let q = match r.u8()? {
        0 => {
            let n = r.u16()?;
            SearchQuery::Exact {
                keywords: (0..n).map(|_| r.string()).collect::<Result<_, _>>()?,
                top_k: None,
            }
        }
        1 => {
            let anchor = r.string()?;
            let n = r.u16()?;
            let companions = (0..n)
                .map(|_| Ok((r.string()?, r.i32()?)))
                .collect::<Result<_, WireError>>()?;
            SearchQuery::Fuzzy {
                anchor,
                companions,
                top_k: None,
            }
        }
        t => return Err(bad_tag("query", t)),
    };
    let top_k = if r.bool()? { Some(r.u32()?) } else { None };
    Ok(q.with_top_k(top_k))
}

impl EcallMsg {
    pub fn kind(&self) -> EcallKind {
        match self {
            EcallMsg::Setup { .. } => EcallKind::Setup,
            EcallMsg::Update(_) => EcallKind::Update,
            EcallMsg::Search(_) => EcallKind::Search,
            EcallMsg::IndexTreeSync { .. } => EcallKind::IndexTreeSync,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            EcallMsg::Setup { keys, nonce } => {
                out.put_u8(0x01);
                out.extend_from_slice(nonce);
                keys.iter().for_each(|k| out.extend_from_slice(k));
            }
            EcallMsg::Update(u) => {
                out.put_u8(0x02);
                out.put_string(&u.keyword);
                out.put_u64(u.id);
                out.put_u32(u.value);
                out.put_u8(match u.op {
                    UpdateOp::Insert => 0,
                    UpdateOp::Delete => 1,
                });
            }
            EcallMsg::Search(q) => {
                out.put_u8(0x03);
                put_query(&mut out, q);
            }
            EcallMsg::IndexTreeSync { version, split } => {
                out.put_u8(0x04);
                out.put_u64(*version);
                put_id(&mut out, *split);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let msg = match r.u8()? {
            0x01 => {
                let nonce = r.take(16)?.try_into().expect("16 bytes");
                let keys = SecretKeys {
                    k_t: r.token()?,
                    k_z: r.token()?,
                    k_x: r.token()?,
                };
                EcallMsg::Setup { keys, nonce }
            }
            0x02 => EcallMsg::Update(UpdateRequest {
                keyword: r.string()?,
                id: r.u64()?,
                value: r.u32()?,
                op: match r.u8()? {
                    0 => UpdateOp::Insert,
                    1 => UpdateOp::Delete,
                    t => return Err(bad_tag("update op", t)),
                },
            }),
            0x03 => EcallMsg::Search(read_query(&mut r)?),
            0x04 => EcallMsg::IndexTreeSync {
                version: r.u64()?,
                split: read_id(&mut r)?,
            },
            t => return Err(bad_tag("ecall", t)),
        };
        r.finish()?;
        Ok(msg)
    }
}

impl EcallReply {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            EcallReply::Ready => out.put_u8(0x81),
            EcallReply::Updated => out.put_u8(0x82),
            EcallReply::Results(r) => {
                out.put_u8(0x83);
                out.put_u32(r.hits.len() as u32);
                for h in &r.hits {
                    out.put_u64(h.id);
                    out.put_u32(h.weight);
                }
            }
            EcallReply::Synced => out.put_u8(0x84),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let reply = match r.u8()? {
            0x81 => EcallReply::Ready,
            0x82 => EcallReply::Updated,
            0x83 => {
                let n = r.u32()? as usize;
                let hits = (0..n)
                    .map(|_| Ok(Hit { id: r.u64()?, weight: r.u32()? }))
                    .collect::<Result<_, WireError>>()?;
                EcallReply::Results(RankedResult { hits })
            }
            0x84 => EcallReply::Synced,
            t => return Err(bad_tag("ecall reply", t)),
        };
        r.finish()?;
        Ok(reply)
    }
}

/// Something that answers ocalls: the in-process [`Host`] or a
/// [`RemoteHost`] speaking the framed protocol.
pub trait Untrusted {
    fn ocall(&mut self, msg: &OcallMsg) -> Result<OcallReply, OcallError>;

    /// Splits performed since the last drain, to be delivered as
    /// `IndexTreeSync` ecalls.
    fn drain_splits(&mut self) -> Vec<SplitEvent> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    ClientToEnclave,
    EnclaveToClient,
    EnclaveToHost,
    HostToEnclave,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetupLeakage {
    pub params: SchemeParams,
    pub tset_entries: usize,
    pub itset_entries: usize,
    pub subfilters: usize,
}

/// Sizes and location of one update, as the host sees them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateLeakage {
    pub op: UpdateOp,
    pub tset_value_len: usize,
    pub itset_value_len: usize,
    pub fingerprint_bits: u8,
    pub subfilter: SubFilterId,
}

/// Search tokens, the TSet addresses that matched, and the sub-filters
/// the enclave loaded.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SearchLeakage {
    pub stokens: Vec<Token>,
    pub tset_access: Vec<Token>,
    pub subfilters: Vec<SubFilterId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeakageEvent {
    Setup(SetupLeakage),
    Ecall { kind: EcallKind, wire_len: usize },
    Ocall { kind: OcallKind, request_len: usize, reply_len: usize },
    Update(UpdateLeakage),
    Search(SearchLeakage),
    TreeSync { version: u64, split: SubFilterId },
    Wire { direction: Direction, bytes: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageRecord {
    /// Index of the client operation this belongs to.
    pub op: u64,
    pub event: LeakageEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LeakageReport {
    pub setup: Vec<(u64, SetupLeakage)>,
    pub updates: Vec<(u64, UpdateLeakage)>,
    pub searches: Vec<(u64, SearchLeakage)>,
}

/// Where a watched byte string was seen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanaryHit {
    pub op: u64,
    pub direction: Direction,
    pub canary: Vec<u8>,
}

/// Append-only record of everything observable outside the enclave.
#[derive(Debug, Clone, Default)]
pub struct LeakageLog {
    records: Vec<LeakageRecord>,
    capture_wire: bool,
    canaries: Vec<Vec<u8>>,
    hits: Vec<CanaryHit>,
    messages: u64,
    wire_bytes: u64,
}

impl LeakageLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keep a copy of every message's bytes as a `Wire` record.
    pub fn set_capture_wire(&mut self, on: bool) {
        self.capture_wire = on;
    }

    /// Scan every subsequent message for `canary`.
    pub fn watch(&mut self, canary: impl Into<Vec<u8>>) {
        let c = canary.into();
        if !c.is_empty() {
            self.canaries.push(c);
        }
    }

    pub fn canary_hits(&self) -> &[CanaryHit] {
        &self.hits
    }

    pub fn records(&self) -> &[LeakageRecord] {
        &self.records
    }

    pub fn message_count(&self) -> u64 {
        self.messages
    }

    pub fn wire_bytes(&self) -> u64 {
        self.wire_bytes
    }

    pub fn clear(&mut self) {
        self.records.clear();
        self.hits.clear();
    }

    fn push(&mut self, op: u64, event: LeakageEvent) {
        self.records.push(LeakageRecord { op, event });
    }

    fn observe(&mut self, op: u64, direction: Direction, bytes: &[u8]) {
        self.messages += 1;
        self.wire_bytes += bytes.len() as u64;
        for c in &self.canaries {
            if bytes.windows(c.len()).any(|w| w == c.as_slice()) {
                self.hits.push(CanaryHit {
                    op,
                    direction,
                    canary: c.clone(),
                });
            }
        }
        if self.capture_wire {
            self.push(
                op,
                LeakageEvent::Wire {
                    direction,
                    bytes: bytes.to_vec(),
                },
            );
        }
    }

    /// Structured leakage of operations whose index lies in `ops`.
    pub fn leakage_report(&self, ops: Range<u64>) -> LeakageReport {
        let mut report = LeakageReport::default();
        for r in self.records.iter().filter(|r| ops.contains(&r.op)) {
            match &r.event {
                LeakageEvent::Setup(s) => report.setup.push((r.op, s.clone())),
                LeakageEvent::Update(u) => report.updates.push((r.op, u.clone())),
                LeakageEvent::Search(s) => report.searches.push((r.op, s.clone())),
                _ => {}
            }
        }
        report
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpCounts {
    /// Token exchanges between the enclave and the host.
    pub token_roundtrips: u64,
    /// Other ocalls (single lookups and sub-filter loads).
    pub data_ocalls: u64,
    pub subfilter_loads: u64,
    pub ecalls: u64,
}

impl std::ops::AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.token_roundtrips += o.token_roundtrips;
        self.data_ocalls += o.data_ocalls;
        self.subfilter_loads += o.subfilter_loads;
        self.ecalls += o.ecalls;
    }
}

/// Per-operation message counts, reset when an operation starts.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundTripCounter {
    current: OpCounts,
    last: OpCounts,
    total: OpCounts,
    ops: u64,
}

impl RoundTripCounter {
    fn begin(&mut self) {
        self.current = OpCounts::default();
    }

    fn end(&mut self) {
        self.last = self.current;
        self.total += self.current;
        self.ops += 1;
    }

    fn record_ocall(&mut self, kind: OcallKind) {
        if kind.is_token_exchange() {
            self.current.token_roundtrips += 1;
        } else {
            self.current.data_ocalls += 1;
        }
        if kind == OcallKind::LoadSubFilter {
            self.current.subfilter_loads += 1;
        }
    }

    /// Counts of the operation in progress.
    pub fn current(&self) -> OpCounts {
        self.current
    }

    /// Counts of the most recently completed operation.
    pub fn last(&self) -> OpCounts {
        self.last
    }

    pub fn total(&self) -> OpCounts {
        self.total
    }

    pub fn operations(&self) -> u64 {
        self.ops
    }
}

/// The untrusted host: owns the encrypted database and observes all
/// traffic.
#[derive(Debug)]
pub struct Host {
    edb: EncryptedDb,
    log: LeakageLog,
    counter: RoundTripCounter,
    splits: VecDeque<SplitEvent>,
    op: u64,
    search: Option<SearchLeakage>,
}

impl Host {
    pub fn new(edb: EncryptedDb) -> Self {
        Host {
            edb,
            log: LeakageLog::new(),
            counter: RoundTripCounter::default(),
            splits: VecDeque::new(),
            op: 0,
            search: None,
        }
    }

    pub fn edb(&self) -> &EncryptedDb {
        &self.edb
    }

    pub fn edb_mut(&mut self) -> &mut EncryptedDb {
        &mut self.edb
    }

    pub fn into_edb(self) -> EncryptedDb {
        self.edb
    }

    pub fn log(&self) -> &LeakageLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut LeakageLog {
        &mut self.log
    }

    pub fn counter(&self) -> &RoundTripCounter {
        &self.counter
    }

    fn begin_op(&mut self, op: u64) {
        self.op = op;
        self.counter.begin();
    }

    fn end_op(&mut self) {
        if let Some(s) = self.search.take() {
            self.log.push(self.op, LeakageEvent::Search(s));
        }
        self.counter.end();
    }

    /// Server-side dispatch, including the structured leakage records.
    pub fn execute(&mut self, msg: &OcallMsg) -> OcallReply {
        let result: Result<OcallReply, EdbError> = match msg {
            OcallMsg::TSetGet { stag } => Ok(OcallReply::Value(self.edb.tset_get(stag).map(<[u8]>::to_vec))),
            OcallMsg::ITSetGet { ind } => Ok(OcallReply::Value(self.edb.itset_get(ind).map(<[u8]>::to_vec))),
            OcallMsg::TSetBatchGet { stags } => {
                let values = self.edb.tset_batch_get(stags);
                let search = self.search.get_or_insert_with(SearchLeakage::default);
                search.stokens.extend_from_slice(stags);
                search.tset_access.extend(
                    stags
                        .iter()
                        .zip(&values)
                        .filter(|(_, v)| v.is_some())
                        .map(|(s, _)| *s),
                );
                Ok(OcallReply::Batch(values))
            }
            OcallMsg::LoadSubFilter { id } => self.edb.load_subfilter(*id).map(|b| {
                if let Some(s) = self.search.as_mut() {
                    s.subfilters.push(*id);
                }
                OcallReply::SubFilter(b)
            }),
            OcallMsg::ApplyInsert(m) => self.edb.apply_insert(m).map(|splits| {
                self.log.push(
                    self.op,
                    LeakageEvent::Update(UpdateLeakage {
                        op: UpdateOp::Insert,
                        tset_value_len: m.cid.len(),
                        itset_value_len: m.cstag.len(),
                        fingerprint_bits: self.edb.params().filter.fingerprint_bits(),
                        subfilter: m.subfilter,
                    }),
                );
                self.splits.extend(splits);
                OcallReply::Inserted
            }),
            OcallMsg::ApplyDelete(m) => {
                let tset_len = m
                    .moved_cid
                    .as_ref()
                    .map(Vec::len)
                    .or_else(|| self.edb.tset_get(&m.stag_last).map(<[u8]>::len))
                    .unwrap_or(0);
                let itset_len = m
                    .moved_cstag
                    .as_ref()
                    .map(Vec::len)
                    .or_else(|| self.edb.itset_get(&m.ind).map(<[u8]>::len))
                    .unwrap_or(0);
                self.edb.apply_delete(m).map(|removed| {
                    self.log.push(
                        self.op,
                        LeakageEvent::Update(UpdateLeakage {
                            op: UpdateOp::Delete,
                            tset_value_len: tset_len,
                            itset_value_len: itset_len,
                            fingerprint_bits: self.edb.params().filter.fingerprint_bits(),
                            subfilter: m.subfilter,
                        }),
                    );
                    OcallReply::Deleted {
                        fingerprint_removed: removed,
                    }
                })
            }
        };
        result.unwrap_or_else(|e| OcallReply::Error(e.into()))
    }

    /// Answers framed ocalls on `stream` until the peer closes it. Splits
    /// are sent as `IndexTreeSync` frames ahead of the reply that caused
    /// them. Returns the number of requests served.
    pub fn serve<S: Read + Write>(&mut self, mut stream: S) -> io::Result<u64> {
        let mut served = 0;
        while let Some(frame) = read_frame(&mut stream)? {
            let reply = match OcallMsg::decode(&frame) {
                Ok(msg) => self.execute(&msg),
                Err(e) => OcallReply::Error(ServerError::Rejected(e.to_string())),
            };
            for ev in self.splits.drain(..) {
                let sync = EcallMsg::IndexTreeSync {
                    version: ev.version,
                    split: ev.parent,
                };
                write_frame(&mut stream, &sync.encode())?;
            }
            write_frame(&mut stream, &reply.encode())?;
            served += 1;
        }
        Ok(served)
    }
}

impl Untrusted for Host {
    fn ocall(&mut self, msg: &OcallMsg) -> Result<OcallReply, OcallError> {
        let wire = msg.encode();
        self.log.observe(self.op, Direction::EnclaveToHost, &wire);
        let decoded = OcallMsg::decode(&wire)?;
        let reply = self.execute(&decoded);
        let reply_wire = reply.encode();
        self.log.observe(self.op, Direction::HostToEnclave, &reply_wire);
        self.log.push(
            self.op,
            LeakageEvent::Ocall {
                kind: decoded.kind(),
                request_len: wire.len(),
                reply_len: reply_wire.len(),
            },
        );
        self.counter.record_ocall(decoded.kind());
        match OcallReply::decode(&reply_wire)? {
            OcallReply::Error(e) => Err(OcallError::Server(e)),
            r => Ok(r),
        }
    }

    fn drain_splits(&mut self) -> Vec<SplitEvent> {
        self.splits.drain(..).collect()
    }
}

/// Writes a u32 big-endian length prefix and the payload.
pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `None` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut buf = vec![0u8; u32::from_be_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

/// Ocalls over a framed byte stream to a [`Host::serve`] loop.
#[derive(Debug)]
pub struct RemoteHost<S> {
    stream: S,
    splits: Vec<SplitEvent>,
}

impl<S: Read + Write> RemoteHost<S> {
    pub fn new(stream: S) -> Self {
        RemoteHost {
            stream,
            splits: Vec::new(),
        }
    }
}

impl<S: Read + Write> Untrusted for RemoteHost<S> {
    fn ocall(&mut self, msg: &OcallMsg) -> Result<OcallReply, OcallError> {
        let transport = |e: io::Error| OcallError::Transport(e.to_string());
        write_frame(&mut self.stream, &msg.encode()).map_err(transport)?;
        loop {
            let frame = read_frame(&mut self.stream)
                .map_err(transport)?
                .ok_or_else(|| OcallError::Transport("host closed the stream".into()))?;
            if frame.first() == Some(&0x04) {
                if let EcallMsg::IndexTreeSync { version, split } = EcallMsg::decode(&frame)? {
                    self.splits.push(SplitEvent { version, parent: split });
                    continue;
                }
            }
            return match OcallReply::decode(&frame)? {
                OcallReply::Error(e) => Err(OcallError::Server(e)),
                r => Ok(r),
            };
        }
    }

    fn drain_splits(&mut self) -> Vec<SplitEvent> {
        std::mem::take(&mut self.splits)
    }
}

/// Simulated attested channel: a key handed to both ends in-process.
struct Channel {
    key: Key,
    seq: u64,
}

impl fmt::Debug for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Channel").field("seq", &self.seq).finish_non_exhaustive()
    }
}

impl Channel {
    fn seal(&mut self, domain: &[u8], plain: &[u8]) -> Vec<u8> {
        self.seq += 1;
        let mut body = plain.to_vec();
        crypto::keystream_xor(&self.key, &nonce(domain, self.seq), &mut body);
        let mut out = Vec::with_capacity(body.len() + 13);
        out.put_u8(0x10);
        out.put_u64(self.seq);
        out.put_bytes(&body);
        out
    }

    fn open(&self, domain: &[u8], sealed: &[u8]) -> Result<Vec<u8>, WireError> {
        let mut r = Reader::new(sealed);
        if r.u8()? != 0x10 {
            return Err(WireError::Invalid("expected a sealed envelope".into()));
        }
        let seq = r.u64()?;
        let mut body = r.bytes()?.to_vec();
        r.finish()?;
        crypto::keystream_xor(&self.key, &nonce(domain, seq), &mut body);
        Ok(body)
    }
}

fn nonce(domain: &[u8], seq: u64) -> Vec<u8> {
    let mut n = domain.to_vec();
    n.extend_from_slice(&seq.to_be_bytes());
    n
}

const TO_ENCLAVE: &[u8] = b"client->enclave";
const TO_CLIENT: &[u8] = b"enclave->client";

/// Path of the enclave state file stored next to an EDB file.
pub fn state_path(edb_path: &Path) -> PathBuf {
    let mut s = edb_path.as_os_str().to_owned();
    s.push(".enclave");
    PathBuf::from(s)
}

/// Client, enclave and host wired together through the simulated
/// boundary. Messages are handled one at a time.
#[derive(Debug)]
pub struct Boundary {
    enclave: Enclave,
    host: Host,
    channel: Option<Channel>,
    rng: ChaCha20Rng,
    op: u64,
}

impl Boundary {
    pub fn new(params: SchemeParams, cache_budget: usize, seed: Option<u64>) -> Self {
        Boundary {
            enclave: Enclave::new(params, cache_budget),
            host: Host::new(EncryptedDb::new(params)),
            channel: None,
            rng: match seed {
                Some(s) => ChaCha20Rng::seed_from_u64(s),
                None => ChaCha20Rng::from_os_rng(),
            },
            op: 0,
        }
    }

    /// Reattaches a restored enclave to its database.
    pub fn from_parts(state: EnclaveState, edb: EncryptedDb, cache_budget: usize, seed: Option<u64>) -> Result<Self, BoundaryError> {
        if !state.params.storage_compatible(&edb.params()) {
            return Err(BoundaryError::State("enclave state and database parameters differ".into()));
        }
        let mut leaves = state.leaves.clone();
        let mut server = edb.subfilter_ids();
        leaves.sort();
        server.sort();
        if leaves != server {
            return Err(BoundaryError::State("enclave index tree does not match the database".into()));
        }
        let mut b = Boundary::new(state.params, cache_budget, seed);
        b.enclave = Enclave::restore(state, cache_budget)?;
        b.host = Host::new(edb);
        b.establish();
        Ok(b)
    }

    fn establish(&mut self) {
        let mut key = [0u8; 32];
        self.rng.fill_bytes(&mut key);
        self.channel = Some(Channel { key, seq: 0 });
    }

    pub fn enclave(&self) -> &Enclave {
        &self.enclave
    }

    pub fn enclave_mut(&mut self) -> &mut Enclave {
        &mut self.enclave
    }

    pub fn host(&self) -> &Host {
        &self.host
    }

    pub fn host_mut(&mut self) -> &mut Host {
        &mut self.host
    }

    pub fn edb(&self) -> &EncryptedDb {
        self.host.edb()
    }

    pub fn log(&self) -> &LeakageLog {
        self.host.log()
    }

    pub fn log_mut(&mut self) -> &mut LeakageLog {
        self.host.log_mut()
    }

    pub fn counter(&self) -> &RoundTripCounter {
        self.host.counter()
    }

    /// Index the next operation will get.
    pub fn next_op(&self) -> u64 {
        self.op
    }

    pub fn is_established(&self) -> bool {
        self.channel.is_some()
    }

    /// Generates fresh keys and provisions them.
    pub fn setup(&mut self) -> Result<(), BoundaryError> {
        let keys = SecretKeys::generate(&mut self.rng);
        let mut nonce = [0u8; 16];
        self.rng.fill_bytes(&mut nonce);
        self.call(EcallMsg::Setup { keys, nonce }).map(|_| ())
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        self.enclave.set_parallel(parallel);
        self.host.edb_mut().set_parallel(parallel);
    }

    /// Routes one client ecall through the boundary.
    pub fn call(&mut self, msg: EcallMsg) -> Result<EcallReply, BoundaryError> {
        let op = self.op;
        self.op += 1;
        self.host.begin_op(op);
        let result = self.dispatch(op, msg);
        self.host.end_op();
        result
    }

    fn dispatch(&mut self, op: u64, msg: EcallMsg) -> Result<EcallReply, BoundaryError> {
        let kind = msg.kind();
        if kind == EcallKind::Setup && self.channel.is_none() {
            self.establish();
        }
        let channel = self.channel.as_mut().ok_or(BoundaryError::NotEstablished)?;
        let wire = if kind == EcallKind::IndexTreeSync {
            msg.encode()
        } else {
            channel.seal(TO_ENCLAVE, &msg.encode())
        };
        self.host.counter.current.ecalls += 1;
        self.host.log.observe(op, Direction::ClientToEnclave, &wire);
        self.host.log.push(op, LeakageEvent::Ecall { kind, wire_len: wire.len() });

        let plain = if kind == EcallKind::IndexTreeSync {
            wire
        } else {
            channel.open(TO_ENCLAVE, &wire)?
        };
        let reply = match EcallMsg::decode(&plain)? {
            EcallMsg::Setup { keys, .. } => {
                self.enclave.setup(keys)?;
                let stats = self.host.edb.stats();
                self.host.log.push(
                    op,
                    LeakageEvent::Setup(SetupLeakage {
                        params: self.host.edb.params(),
                        tset_entries: stats.tset_entries,
                        itset_entries: stats.itset_entries,
                        subfilters: stats.subfilters,
                    }),
                );
                EcallReply::Ready
            }
            EcallMsg::Update(req) => {
                let outcome = self.enclave.update(&mut self.host, &req);
                self.deliver_splits(op)?;
                outcome?;
                EcallReply::Updated
            }
            EcallMsg::Search(q) => EcallReply::Results(self.enclave.search(&mut self.host, &q)?),
            EcallMsg::IndexTreeSync { version, split } => {
                self.enclave.sync_tree(version, split)?;
                self.host.log.push(op, LeakageEvent::TreeSync { version, split });
                EcallReply::Synced
            }
        };

        if kind == EcallKind::IndexTreeSync {
            return Ok(reply);
        }
        let channel = self.channel.as_mut().expect("established above");
        let sealed = channel.seal(TO_CLIENT, &reply.encode());
        self.host.log.observe(op, Direction::EnclaveToClient, &sealed);
        Ok(EcallReply::decode(&channel.open(TO_CLIENT, &sealed)?)?)
    }

    fn deliver_splits(&mut self, op: u64) -> Result<(), BoundaryError> {
        for ev in self.host.drain_splits() {
            let msg = EcallMsg::IndexTreeSync {
                version: ev.version,
                split: ev.parent,
            };
            let wire = msg.encode();
            self.host.log.observe(op, Direction::HostToEnclave, &wire);
            self.host.log.push(op, LeakageEvent::TreeSync {
                version: ev.version,
                split: ev.parent,
            });
            match EcallMsg::decode(&wire)? {
                EcallMsg::IndexTreeSync { version, split } => self.enclave.sync_tree(version, split)?,
                _ => unreachable!("encoded as a tree sync"),
            }
        }
        Ok(())
    }

    pub fn insert(&mut self, keyword: &str, id: u64, value: u32) -> Result<(), BoundaryError> {
        self.update(keyword, id, value, UpdateOp::Insert)
    }

    pub fn delete(&mut self, keyword: &str, id: u64, value: u32) -> Result<(), BoundaryError> {
        self.update(keyword, id, value, UpdateOp::Delete)
    }

    pub fn update(&mut self, keyword: &str, id: u64, value: u32, op: UpdateOp) -> Result<(), BoundaryError> {
        self.call(EcallMsg::Update(UpdateRequest {
            keyword: keyword.to_owned(),
            id,
            value,
            op,
        }))
        .map(|_| ())
    }

    pub fn search(&mut self, query: &SearchQuery) -> Result<RankedResult, BoundaryError> {
        match self.call(EcallMsg::Search(query.clone()))? {
            EcallReply::Results(r) => Ok(r),
            other => Err(BoundaryError::MalformedMessage(format!("unexpected reply {other:?}"))),
        }
    }

    /// Writes the EDB to `path` and the enclave state next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BoundaryError> {
        let path = path.as_ref();
        self.host.edb.save(path)?;
        let state = self.enclave.export_state()?;
        let json = serde_json::to_vec_pretty(&state).map_err(|e| BoundaryError::State(e.to_string()))?;
        std::fs::write(state_path(path), json)?;
        Ok(())
    }

    pub fn open(path: impl AsRef<Path>, cache_budget: usize, seed: Option<u64>) -> Result<Self, BoundaryError> {
        let path = path.as_ref();
        let edb = EncryptedDb::open(path)?;
        let json = std::fs::read(state_path(path))?;
        let state: EnclaveState = serde_json::from_slice(&json).map_err(|e| BoundaryError::State(e.to_string()))?;
        Self::from_parts(state, edb, cache_budget, seed)
    }
}
