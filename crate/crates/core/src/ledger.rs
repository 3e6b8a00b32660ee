//! The client's record of what the fleet should hold.
//!
//! The ledger keeps sizes and identifiers only, never payload bytes. Every
//! mutation is an [`OperationRecord`] stamped with a strictly increasing
//! logical tick, and [`replay_oracle`] recomputes expected occupancy from the
//! log alone as an independent check on the incremental tables.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::ids::{BlockId, ServerId, Tick};

pub const LEDGER_MAGIC: &str = "SPACELEDGER";
pub const LEDGER_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Append,
    Delete,
    Update,
    Allocate,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Append => "APPEND",
            OpKind::Delete => "DELETE",
            OpKind::Update => "UPDATE",
            OpKind::Allocate => "ALLOCATE",
        }
    }

    pub fn is_data_op(self) -> bool {
        !matches!(self, OpKind::Allocate)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "APPEND" => Ok(OpKind::Append),
            "DELETE" => Ok(OpKind::Delete),
            "UPDATE" => Ok(OpKind::Update),
            "ALLOCATE" => Ok(OpKind::Allocate),
            _ => Err(()),
        }
    }
}

/// One logged client operation. `pre_used`/`post_used` are the server's
/// expected occupancy immediately before and after it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationRecord {
    pub tick: Tick,
    pub kind: OpKind,
    pub server_id: ServerId,
    pub block_id: BlockId,
    pub size_delta: i64,
    pub pre_used: u64,
    pub post_used: u64,
}

impl OperationRecord {
    /// `post_used - pre_used == size_delta`, evaluated without overflow.
    pub fn is_consistent(&self) -> bool {
        self.post_used as i128 - self.pre_used as i128 == self.size_delta as i128
    }
}

impl fmt::Display for OperationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "op {} {} {} {} {} {} {}",
            self.tick,
            self.kind,
            self.server_id,
            self.block_id,
            self.size_delta,
            self.pre_used,
            self.post_used
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("tick {got} is not after current tick {current}")]
    NonMonotoneTick { current: Tick, got: Tick },
    #[error("record delta {delta} does not match pre {pre} / post {post}")]
    DeltaMismatch { delta: i64, pre: u64, post: u64 },
    #[error("server {0} is not known to the ledger")]
    UnknownServer(ServerId),
    #[error("record pre_used {got} disagrees with expected {expected} on {server}")]
    PreUsedMismatch { server: ServerId, expected: u64, got: u64 },
    #[error("block {block} already recorded on {server}")]
    DuplicateBlock { server: ServerId, block: BlockId },
    #[error("block {block} not recorded on {server}")]
    UnknownBlock { server: ServerId, block: BlockId },
    #[error("{kind} record for {block} carries invalid delta {delta}")]
    BadDelta { kind: OpKind, block: BlockId, delta: i64 },
    #[error("post_used {used} exceeds capacity {capacity} on {server}")]
    CapacityExceeded { server: ServerId, used: u64, capacity: u64 },
    #[error("server {0} has recorded blocks and cannot be reallocated")]
    NotEmpty(ServerId),
    #[error("allocation records must go through ClientLedger::allocate")]
    MissingCapacity,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LedgerServer {
    pub capacity: u64,
    pub blocks: BTreeMap<BlockId, u64>,
}

impl LedgerServer {
    pub fn used(&self) -> u64 {
        self.blocks.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientLedger {
    servers: BTreeMap<ServerId, LedgerServer>,
    log: Vec<OperationRecord>,
    current_tick: Tick,
}

impl ClientLedger {
    /// A fresh ledger tracking the given servers, all unallocated.
    pub fn new(servers: impl IntoIterator<Item = ServerId>) -> Self {
        ClientLedger {
            servers: servers.into_iter().map(|s| (s, LedgerServer::default())).collect(),
            log: Vec::new(),
            current_tick: Tick::ZERO,
        }
    }

    pub fn current_tick(&self) -> Tick {
        self.current_tick
    }

    pub fn log(&self) -> &[OperationRecord] {
        &self.log
    }

    pub fn servers(&self) -> &BTreeMap<ServerId, LedgerServer> {
        &self.servers
    }

    pub fn server(&self, id: ServerId) -> Result<&LedgerServer, LedgerError> {
        self.servers.get(&id).ok_or(LedgerError::UnknownServer(id))
    }

    pub fn expected_used(&self, id: ServerId) -> Result<u64, LedgerError> {
        self.server(id).map(LedgerServer::used)
    }

    pub fn capacity(&self, id: ServerId) -> Result<u64, LedgerError> {
        self.server(id).map(|s| s.capacity)
    }

    pub fn expected_size(&self, id: ServerId, block: &BlockId) -> Option<u64> {
        self.servers.get(&id)?.blocks.get(block).copied()
    }

    /// True once any append, delete or update has been recorded.
    pub fn has_data_ops(&self) -> bool {
        self.log.iter().any(|r| r.kind.is_data_op())
    }

    /// Moves the clock forward without logging anything.
    pub fn advance_tick(&mut self) -> Tick {
        self.current_tick = self.current_tick.next();
        self.current_tick
    }

    /// Builds the record an operation would produce at the next tick.
    pub fn draft(
        &self,
        kind: OpKind,
        server_id: ServerId,
        block_id: BlockId,
        size_delta: i64,
    ) -> Result<OperationRecord, LedgerError> {
        let pre_used = self.expected_used(server_id)?;
        let post = pre_used as i128 + size_delta as i128;
        let post_used = u64::try_from(post).map_err(|_| LedgerError::DeltaMismatch {
            delta: size_delta,
            pre: pre_used,
            post: 0,
        })?;
        Ok(OperationRecord {
            tick: self.current_tick.next(),
            kind,
            server_id,
            block_id,
            size_delta,
            pre_used,
            post_used,
        })
    }

    /// Records an allocation: sets the server's capacity and logs ALLOCATE.
    pub fn allocate(&mut self, server_id: ServerId, capacity: u64) -> Result<OperationRecord, LedgerError> {
        let record = self.draft(OpKind::Allocate, server_id, BlockId::none(), 0)?;
        self.check(&record, Some(capacity))?;
        self.commit(record.clone(), Some(capacity));
        Ok(record)
    }

    /// Appends a data-operation record after validating it against the tables.
    pub fn record(&mut self, record: OperationRecord) -> Result<(), LedgerError> {
        self.validate(&record)?;
        self.commit(record, None);
        Ok(())
    }

    /// Checks that `record` could be applied, without applying it.
    pub fn validate(&self, record: &OperationRecord) -> Result<(), LedgerError> {
        if record.kind == OpKind::Allocate {
            return Err(LedgerError::MissingCapacity);
        }
        self.check(record, None)
    }

    fn check(&self, r: &OperationRecord, new_capacity: Option<u64>) -> Result<(), LedgerError> {
        if r.tick <= self.current_tick {
            return Err(LedgerError::NonMonotoneTick { current: self.current_tick, got: r.tick });
        }
        if !r.is_consistent() {
            return Err(LedgerError::DeltaMismatch { delta: r.size_delta, pre: r.pre_used, post: r.post_used });
        }
        let server = self.server(r.server_id)?;
        let expected = server.used();
        if r.pre_used != expected {
            return Err(LedgerError::PreUsedMismatch { server: r.server_id, expected, got: r.pre_used });
        }
        let existing = server.blocks.get(&r.block_id).copied();
        let bad_delta = || LedgerError::BadDelta { kind: r.kind, block: r.block_id.clone(), delta: r.size_delta };
        let unknown = || LedgerError::UnknownBlock { server: r.server_id, block: r.block_id.clone() };
        match r.kind {
            OpKind::Append => {
                if existing.is_some() {
                    return Err(LedgerError::DuplicateBlock { server: r.server_id, block: r.block_id.clone() });
                }
                if r.size_delta < 1 {
                    return Err(bad_delta());
                }
            }
            OpKind::Delete => {
                let size = existing.ok_or_else(unknown)?;
                if r.size_delta as i128 != -(size as i128) {
                    return Err(bad_delta());
                }
            }
            OpKind::Update => {
                let size = existing.ok_or_else(unknown)?;
                if size as i128 + r.size_delta as i128 <= 0 {
                    return Err(bad_delta());
                }
            }
            OpKind::Allocate => {
                if !server.blocks.is_empty() {
                    return Err(LedgerError::NotEmpty(r.server_id));
                }
                if r.size_delta != 0 {
                    return Err(bad_delta());
                }
            }
        }
        let capacity = new_capacity.unwrap_or(server.capacity);
        if r.post_used > capacity {
            return Err(LedgerError::CapacityExceeded { server: r.server_id, used: r.post_used, capacity });
        }
        Ok(())
    }

    fn commit(&mut self, r: OperationRecord, new_capacity: Option<u64>) {
        let server = self.servers.get_mut(&r.server_id).expect("validated");
        match r.kind {
            OpKind::Append => {
                server.blocks.insert(r.block_id.clone(), r.size_delta as u64);
            }
            OpKind::Delete => {
                server.blocks.remove(&r.block_id);
            }
            OpKind::Update => {
                let size = server.blocks.get_mut(&r.block_id).expect("validated");
                *size = (*size as i128 + r.size_delta as i128) as u64;
            }
            OpKind::Allocate => {
                server.capacity = new_capacity.expect("allocation carries capacity");
            }
        }
        self.current_tick = r.tick;
        self.log.push(r);
    }

    /// Serializes to the line-based `SPACELEDGER v1` text form.
    pub fn save(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{LEDGER_MAGIC} {LEDGER_VERSION}");
        let _ = writeln!(out, "tick {}", self.current_tick);
        for (id, s) in &self.servers {
            let _ = writeln!(out, "server {id} capacity {}", s.capacity);
        }
        for (id, s) in &self.servers {
            for (block, size) in &s.blocks {
                let _ = writeln!(out, "block {id} {block} {size}");
            }
        }
        for r in &self.log {
            let _ = writeln!(out, "{r}");
        }
        out
    }

    /// Parses the output of [`ClientLedger::save`].
    pub fn load(text: &str) -> Result<Self, LoadError> {
        load::parse(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("line {line}: unsupported ledger version `{found}`")]
    Version { line: usize, found: String },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("truncated ledger after line {line}")]
    Truncated { line: usize },
}

impl LoadError {
    pub fn line(&self) -> usize {
        match self {
            LoadError::Version { line, .. } | LoadError::Malformed { line, .. } | LoadError::Truncated { line } => *line,
        }
    }
}

mod load {
    use super::*;

    fn malformed(line: usize, reason: impl Into<String>) -> LoadError {
        LoadError::Malformed { line, reason: reason.into() }
    }

    fn num<T: FromStr>(line: usize, tok: &str, what: &str) -> Result<T, LoadError> {
        // Reject "+5" and similar so that load accepts only what save emits.
        if tok.starts_with('+') {
            return Err(malformed(line, format!("bad {what} `{tok}`")));
        }
        tok.parse().map_err(|_| malformed(line, format!("bad {what} `{tok}`")))
    }

    fn server(line: usize, tok: &str) -> Result<ServerId, LoadError> {
        tok.parse().map_err(|e: crate::ids::IdError| malformed(line, e.to_string()))
    }

    fn block(line: usize, tok: &str) -> Result<BlockId, LoadError> {
        tok.parse().map_err(|e: crate::ids::IdError| malformed(line, e.to_string()))
    }

    #[derive(PartialEq, PartialOrd)]
    enum Section {
        Tick,
        Servers,
        Blocks,
        Ops,
    }

    pub(super) fn parse(text: &str) -> Result<ClientLedger, LoadError> {
        if text.is_empty() {
            return Err(LoadError::Truncated { line: 0 });
        }
        let body = match text.strip_suffix('\n') {
            Some(b) => b,
            None => {
                // Input was cut mid-line. Still report a bad header first.
                let lines = text.split('\n').count();
                if lines == 1 {
                    check_header(text)?;
                }
                return Err(LoadError::Truncated { line: lines });
            }
        };
        let mut lines = body.split('\n').enumerate().map(|(i, l)| (i + 1, l));

        let (_, header) = lines.next().expect("non-empty");
        check_header(header)?;

        let mut ledger = ClientLedger { servers: BTreeMap::new(), log: Vec::new(), current_tick: Tick::ZERO };
        let mut section = Section::Tick;
        let mut seen_tick = false;
        let mut last_line = 1;
        let mut prev_block: Option<(ServerId, BlockId)> = None;

        for (n, line) in lines {
            last_line = n;
            let toks: Vec<&str> = line.split(' ').collect();
            let order = |s: Section, section: &mut Section| -> Result<(), LoadError> {
                if s < *section {
                    return Err(malformed(n, "section out of order"));
                }
                *section = s;
                Ok(())
            };
            match toks.as_slice() {
                ["tick", t] => {
                    if seen_tick {
                        return Err(malformed(n, "duplicate tick line"));
                    }
                    ledger.current_tick = Tick(num(n, t, "tick")?);
                    seen_tick = true;
                    section = Section::Servers;
                }
                _ if !seen_tick => return Err(malformed(n, "expected `tick <n>`")),
                ["server", id, "capacity", cap] => {
                    order(Section::Servers, &mut section)?;
                    let id = server(n, id)?;
                    if let Some((&last, _)) = ledger.servers.last_key_value() {
                        if id <= last {
                            return Err(malformed(n, "servers not in ascending order"));
                        }
                    }
                    ledger.servers.insert(id, LedgerServer { capacity: num(n, cap, "capacity")?, blocks: BTreeMap::new() });
                }
                ["block", sid, bid, size] => {
                    order(Section::Blocks, &mut section)?;
                    let sid = server(n, sid)?;
                    let bid = block(n, bid)?;
                    let size: u64 = num(n, size, "size")?;
                    if size == 0 {
                        return Err(malformed(n, "zero-size block"));
                    }
                    let key = (sid, bid.clone());
                    if prev_block.as_ref().is_some_and(|p| *p >= key) {
                        return Err(malformed(n, "blocks not in ascending order"));
                    }
                    prev_block = Some(key);
                    let entry = ledger.servers.get_mut(&sid).ok_or_else(|| malformed(n, format!("block for unknown server {sid}")))?;
                    entry.blocks.insert(bid, size);
                    if entry.used() > entry.capacity {
                        return Err(malformed(n, format!("blocks exceed capacity of {sid}")));
                    }
                }
                ["op", tick, kind, sid, bid, delta, pre, post] => {
                    order(Section::Ops, &mut section)?;
                    let record = OperationRecord {
                        tick: Tick(num(n, tick, "tick")?),
                        kind: kind.parse().map_err(|_| malformed(n, format!("bad op kind `{kind}`")))?,
                        server_id: server(n, sid)?,
                        block_id: block(n, bid)?,
                        size_delta: num(n, delta, "delta")?,
                        pre_used: num(n, pre, "pre_used")?,
                        post_used: num(n, post, "post_used")?,
                    };
                    if !record.is_consistent() {
                        return Err(malformed(n, "delta does not match pre/post"));
                    }
                    if ledger.log.last().is_some_and(|p| p.tick >= record.tick) || record.tick > ledger.current_tick {
                        return Err(malformed(n, "op tick out of order"));
                    }
                    if !ledger.servers.contains_key(&record.server_id) {
                        return Err(malformed(n, format!("op for unknown server {}", record.server_id)));
                    }
                    ledger.log.push(record);
                }
                _ => return Err(malformed(n, format!("unrecognized line `{line}`"))),
            }
        }
        if !seen_tick {
            return Err(LoadError::Truncated { line: last_line });
        }
        Ok(ledger)
    }

    fn check_header(line: &str) -> Result<(), LoadError> {
        match line.split(' ').collect::<Vec<_>>().as_slice() {
            [LEDGER_MAGIC, LEDGER_VERSION] => Ok(()),
            [LEDGER_MAGIC, v] => Err(LoadError::Version { line: 1, found: v.to_string() }),
            _ => Err(malformed(1, "missing SPACELEDGER header")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("log entry {index}: {reason}")]
pub struct ReplayError {
    pub index: usize,
    pub reason: String,
}

/// Recomputes expected used bytes per server by folding `log` from an empty
/// state. Uses only the records' deltas, never the ledger's block tables.
///
/// Servers appear in the result once any record mentions them.
pub fn replay_oracle(log: &[OperationRecord]) -> Result<BTreeMap<ServerId, u64>, ReplayError> {
    let mut used: BTreeMap<ServerId, u64> = BTreeMap::new();
    let mut last_tick: Option<Tick> = None;
    for (index, r) in log.iter().enumerate() {
        let fail = |reason: &str| ReplayError { index, reason: reason.to_string() };
        if last_tick.is_some_and(|t| r.tick <= t) {
            return Err(fail("ticks not strictly increasing"));
        }
        last_tick = Some(r.tick);
        if !r.is_consistent() {
            return Err(fail("delta does not match pre/post"));
        }
        let running = used.entry(r.server_id).or_insert(0);
        if r.kind == OpKind::Allocate && (r.size_delta != 0 || *running != 0) {
            return Err(fail("allocation of a non-empty server"));
        }
        if *running != r.pre_used {
            return Err(fail("pre_used disagrees with running total"));
        }
        *running = r.post_used;
    }
    Ok(used)
}
