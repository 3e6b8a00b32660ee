//! CSP-held restore points and per-server recovery.
//!
//! A restore point is a deep copy of every server at one logical tick. The
//! client holds no data copy, so recovery pulls a server back to a restore
//! point and then reconciles the ledger with the restored sizes by logging
//! ordinary records. That keeps the ledger and the replay oracle in
//! agreement after a rollback.

use std::fmt;

use thiserror::Error;

use crate::ids::{BlockId, ServerId, Tick};
use crate::ledger::{ClientLedger, LedgerError, OpKind, OperationRecord};
use crate::storage::{Fleet, ServerState, StorageError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RestoreError {
    #[error("restore point tick {got} is not after latest {latest}")]
    NonMonotoneTick { latest: Tick, got: Tick },
    #[error("no restore point found at or before tick {0}")]
    NotFound(Tick),
    #[error("no restore point found")]
    Empty,
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("ledger reconciliation failed: {0}")]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestorePoint {
    tick: Tick,
    servers: Vec<ServerState>,
}

impl RestorePoint {
    pub fn tick(&self) -> Tick {
        self.tick
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn server(&self, id: ServerId) -> Option<&ServerState> {
        self.servers.get(id.index())
    }
}

/// Append-only collection of restore points ordered by tick.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RestoreStore {
    points: Vec<RestorePoint>,
}

impl RestoreStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[RestorePoint] {
        &self.points
    }

    pub fn latest(&self) -> Option<&RestorePoint> {
        self.points.last()
    }

    /// Snapshots every server of `fleet` at `tick`. A crashed server cannot
    /// be read, so its entry is carried forward from the previous point.
    pub fn create(&mut self, fleet: &Fleet, tick: Tick) -> Result<&RestorePoint, RestoreError> {
        let previous = self.latest();
        if let Some(latest) = previous {
            if tick <= latest.tick {
                return Err(RestoreError::NonMonotoneTick { latest: latest.tick, got: tick });
            }
        }
        let servers = fleet
            .servers()
            .iter()
            .map(|s| match previous.and_then(|p| p.server(s.id())) {
                Some(prev) if s.is_crashed() => prev.clone(),
                _ => s.snapshot(),
            })
            .collect();
        self.points.push(RestorePoint { tick, servers });
        Ok(self.points.last().expect("just pushed"))
    }

    /// The point with the greatest tick `<= at`.
    pub fn find(&self, at: Tick) -> Option<&RestorePoint> {
        let idx = self.points.partition_point(|p| p.tick <= at);
        idx.checked_sub(1).map(|i| &self.points[i])
    }
}

/// What a recovery did to the client's view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryNote {
    pub server_id: ServerId,
    pub to_tick: Tick,
    /// Ledger operations on this server recorded after the restore tick.
    pub lost_ops: Vec<OperationRecord>,
    /// Records logged to bring the ledger in line with the restored state.
    pub reconciliation: Vec<OperationRecord>,
}

impl fmt::Display for RecoveryNote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "RECOVER server={} to_tick={} lost_ops={}", self.server_id, self.to_tick, self.lost_ops.len())
    }
}

/// Restores `server` from the restore point selected by `at` (default:
/// latest) and reconciles the ledger. On error nothing changes.
pub fn recover(
    store: &RestoreStore,
    fleet: &mut Fleet,
    ledger: &mut ClientLedger,
    server: ServerId,
    at: Option<Tick>,
) -> Result<RecoveryNote, RestoreError> {
    fleet.server(server)?;
    ledger.server(server)?;
    let point = match at {
        Some(t) => store.find(t).ok_or(RestoreError::NotFound(t))?,
        None => store.latest().ok_or(RestoreError::Empty)?,
    };
    let snapshot = point.server(server).ok_or(StorageError::UnknownServer(server))?.clone();

    let lost_ops: Vec<OperationRecord> = ledger
        .log()
        .iter()
        .filter(|r| r.server_id == server && r.tick > point.tick)
        .cloned()
        .collect();

    let mut reconciled = ledger.clone();
    let reconciliation = reconcile(&mut reconciled, &snapshot)?;

    fleet.replace_server(snapshot)?;
    *ledger = reconciled;
    Ok(RecoveryNote { server_id: server, to_tick: point.tick, lost_ops, reconciliation })
}

/// Logs the records that turn the ledger's table for `target`'s server into
/// `target`'s sizes: deletions, then shrinking updates, then growing updates
/// and appends, so no intermediate state exceeds the final capacity.
fn reconcile(ledger: &mut ClientLedger, target: &ServerState) -> Result<Vec<OperationRecord>, LedgerError> {
    let id = target.id();
    let current = ledger.server(id)?.clone();
    let mut out = Vec::new();
    let log = |ledger: &mut ClientLedger, out: &mut Vec<OperationRecord>, kind: OpKind, block: BlockId, delta: i64| {
        let r = ledger.draft(kind, id, block, delta)?;
        ledger.record(r.clone())?;
        out.push(r);
        Ok::<(), LedgerError>(())
    };

    let target_sizes: Vec<(BlockId, u64)> = target.blocks().map(|b| (b.id().clone(), b.size())).collect();

    if current.capacity != target.capacity() {
        for (block, size) in &current.blocks {
            log(ledger, &mut out, OpKind::Delete, block.clone(), -(*size as i64))?;
        }
        let r = ledger.allocate(id, target.capacity())?;
        out.push(r);
        for (block, size) in target_sizes {
            log(ledger, &mut out, OpKind::Append, block, size as i64)?;
        }
        return Ok(out);
    }

    for (block, size) in &current.blocks {
        if target.block(block).is_none() {
            log(ledger, &mut out, OpKind::Delete, block.clone(), -(*size as i64))?;
        }
    }
    let mut grows = Vec::new();
    for (block, size) in target_sizes {
        match current.blocks.get(&block) {
            Some(&old) if size < old => log(ledger, &mut out, OpKind::Update, block, size as i64 - old as i64)?,
            Some(&old) if size > old => grows.push((OpKind::Update, block, size as i64 - old as i64)),
            Some(_) => {}
            None => grows.push((OpKind::Append, block, size as i64)),
        }
    }
    for (kind, block, delta) in grows {
        log(ledger, &mut out, kind, block, delta)?;
    }
    Ok(out)
}
