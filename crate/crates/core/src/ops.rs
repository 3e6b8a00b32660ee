//! Client-facing dynamic operations: allocate, append, delete, update.
//!
//! Each operation validates against both the fleet and the ledger before
//! touching either, so a failed call leaves everything as it was. A
//! successful call logs one record at a fresh tick and, when enabled, takes a
//! restore point at that tick.

use thiserror::Error;

use crate::accounting::{self, AccountingError, IntegrityReport};
use crate::ids::{BlockId, ServerId, Tick};
use crate::ledger::{ClientLedger, LedgerError, OpKind, OperationRecord};
use crate::payload::generate_payload;
use crate::restore::{self, RecoveryNote, RestoreError, RestoreStore};
use crate::storage::{DataBlock, Fleet, StorageError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Restore(#[from] RestoreError),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
    #[error("server {0} is empty: nothing to delete")]
    EmptyServer(ServerId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpSettings {
    /// Run a comparison before each operation and return it in the outcome.
    pub pre_check: bool,
    /// Take a restore point after each successful operation.
    pub auto_restore: bool,
}

impl Default for OpSettings {
    fn default() -> Self {
        OpSettings { pre_check: false, auto_restore: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpOutcome {
    pub record: OperationRecord,
    pub pre_check: Option<IntegrityReport>,
    pub restore_point_tick: Option<Tick>,
}

/// Fleet, client ledger and restore points, mutated together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloudState {
    pub fleet: Fleet,
    pub ledger: ClientLedger,
    pub restore_points: RestoreStore,
    pub settings: OpSettings,
}

impl CloudState {
    /// A fresh, unallocated fleet of `count` servers and a matching ledger.
    /// With auto-restore on, the empty fleet is snapshotted at tick 0.
    pub fn new(count: usize, settings: OpSettings) -> Result<Self, OpError> {
        let fleet = Fleet::new(count)?;
        let ledger = ClientLedger::new(fleet.server_ids());
        let mut restore_points = RestoreStore::new();
        if settings.auto_restore {
            restore_points.create(&fleet, ledger.current_tick())?;
        }
        Ok(CloudState { fleet, ledger, restore_points, settings })
    }

    /// The check appropriate to the current phase: the initial-allocation
    /// check until the first data operation, the full comparison after.
    pub fn check(&self) -> Result<IntegrityReport, AccountingError> {
        if self.ledger.has_data_ops() {
            accounting::compare_spaces(&self.ledger, &self.fleet)
        } else {
            accounting::check_initial_allocation(&self.ledger, &self.fleet)
        }
    }

    fn pre_check(&self) -> Result<Option<IntegrityReport>, OpError> {
        Ok(if self.settings.pre_check { Some(self.check()?) } else { None })
    }

    fn finish(&mut self, record: OperationRecord, pre_check: Option<IntegrityReport>) -> Result<OpOutcome, OpError> {
        let restore_point_tick = if self.settings.auto_restore {
            Some(self.restore_points.create(&self.fleet, record.tick)?.tick())
        } else {
            None
        };
        Ok(OpOutcome { record, pre_check, restore_point_tick })
    }

    fn live(&self, server: ServerId) -> Result<(), OpError> {
        let s = self.fleet.server(server)?;
        if s.is_crashed() {
            return Err(StorageError::Crashed(server).into());
        }
        Ok(())
    }

    /// Size of `block` as the client recorded it. The block must also be
    /// present on the server.
    fn known_size(&self, server: ServerId, block: &BlockId) -> Result<u64, OpError> {
        let unknown = || StorageError::UnknownBlock { server, block: block.clone() };
        self.fleet.server(server)?.block(block).ok_or_else(unknown)?;
        Ok(self.ledger.expected_size(server, block).ok_or_else(unknown)?)
    }

    pub fn allocate(&mut self, server: ServerId, capacity: u64) -> Result<OpOutcome, OpError> {
        let pre_check = self.pre_check()?;
        let mut fleet = self.fleet.clone();
        fleet.allocate(server, capacity)?;
        let mut ledger = self.ledger.clone();
        let record = ledger.allocate(server, capacity)?;
        self.fleet = fleet;
        self.ledger = ledger;
        self.finish(record, pre_check)
    }

    pub fn append_block(&mut self, server: ServerId, block: BlockId, size: u64, seed: u64) -> Result<OpOutcome, OpError> {
        self.live(server)?;
        let delta = i64::try_from(size).map_err(|_| StorageError::TooLarge(size))?;
        let record = self.ledger.draft(OpKind::Append, server, block.clone(), delta)?;
        self.ledger.validate(&record)?;
        self.fits(server, &block, size)?;
        let data = DataBlock::new(block, generate_payload(seed, size)?)?;
        let pre_check = self.pre_check()?;
        self.fleet.server_mut(server)?.insert(data)?;
        self.ledger.record(record.clone()).expect("validated");
        self.finish(record, pre_check)
    }

    pub fn delete_block(&mut self, server: ServerId, block: BlockId) -> Result<OpOutcome, OpError> {
        self.live(server)?;
        if self.fleet.measure(server)?.is_empty() {
            return Err(OpError::EmptyServer(server));
        }
        let size = self.known_size(server, &block)?;
        let record = self.ledger.draft(OpKind::Delete, server, block.clone(), -(size as i64))?;
        self.ledger.validate(&record)?;
        let pre_check = self.pre_check()?;
        self.fleet.server_mut(server)?.remove(&block)?;
        self.ledger.record(record.clone()).expect("validated");
        self.finish(record, pre_check)
    }

    pub fn update_block(&mut self, server: ServerId, block: BlockId, new_size: u64, seed: u64) -> Result<OpOutcome, OpError> {
        self.live(server)?;
        let old_size = self.known_size(server, &block)?;
        let delta = new_size as i128 - old_size as i128;
        let delta = i64::try_from(delta).map_err(|_| StorageError::TooLarge(new_size))?;
        let record = self.ledger.draft(OpKind::Update, server, block.clone(), delta)?;
        self.ledger.validate(&record)?;
        self.fits(server, &block, new_size)?;
        let data = DataBlock::new(block, generate_payload(seed, new_size)?)?;
        let pre_check = self.pre_check()?;
        self.fleet.server_mut(server)?.replace(data)?;
        self.ledger.record(record.clone()).expect("validated");
        self.finish(record, pre_check)
    }

    /// Capacity check against the fleet, done before any payload is built.
    fn fits(&self, server: ServerId, block: &BlockId, size: u64) -> Result<(), StorageError> {
        let srv = self.fleet.server(server)?;
        let m = srv.measure()?;
        let reclaimed = srv.block(block).map_or(0, |b| b.size());
        let free = m.free + reclaimed;
        if size > free {
            return Err(StorageError::CapacityExceeded { server, needed: size, free });
        }
        Ok(())
    }

    /// Takes a restore point now. If a point already holds the current tick,
    /// the clock is advanced first so points stay one per tick.
    pub fn create_restore_point(&mut self) -> Result<Tick, OpError> {
        let now = self.ledger.current_tick();
        let tick = match self.restore_points.latest() {
            Some(p) if p.tick() >= now => self.ledger.advance_tick(),
            _ => now,
        };
        Ok(self.restore_points.create(&self.fleet, tick)?.tick())
    }

    /// Restores `server` from the point selected by `at` (default: latest)
    /// and reconciles the ledger. With auto-restore on, a new point is taken
    /// if reconciliation logged anything.
    pub fn recover(&mut self, server: ServerId, at: Option<Tick>) -> Result<RecoveryNote, OpError> {
        let note = restore::recover(&self.restore_points, &mut self.fleet, &mut self.ledger, server, at)?;
        if self.settings.auto_restore && !note.reconciliation.is_empty() {
            self.restore_points.create(&self.fleet, self.ledger.current_tick())?;
        }
        Ok(note)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accounting::Verdict;
    use crate::ledger::replay_oracle;

    const GIB_32: u64 = 34_359_738_368;

    fn sid(k: u32) -> ServerId {
        ServerId::new(k)
    }

    fn bid(s: &str) -> BlockId {
        s.parse().unwrap()
    }

    fn state(n: usize, cap: u64) -> CloudState {
        let mut st = CloudState::new(n, OpSettings::default()).unwrap();
        for k in 0..n as u32 {
            st.allocate(sid(k), cap).unwrap();
        }
        st
    }

    fn consistent(st: &CloudState) -> bool {
        st.check().unwrap().summary == Verdict::Consistent
    }

    #[test]
    fn append_to_32_gib_server() {
        let mut st = state(1, GIB_32);
        let out = st.append_block(sid(0), bid("blk1"), 1_048_576, 7).unwrap();
        assert_eq!((out.record.pre_used, out.record.post_used), (0, 1_048_576));
        assert_eq!(out.record.post_used, st.fleet.measure(sid(0)).unwrap().used);
        assert_eq!(out.restore_point_tick, Some(out.record.tick));
        assert!(consistent(&st));
    }

    #[test]
    fn fill_exactly_then_overflow_by_one() {
        let mut st = state(1, 100);
        st.append_block(sid(0), bid("a"), 60, 1).unwrap();
        st.append_block(sid(0), bid("b"), 40, 2).unwrap();
        assert_eq!(st.fleet.measure(sid(0)).unwrap().free, 0);
        let before = st.clone();
        let err = st.append_block(sid(0), bid("c"), 1, 3).unwrap_err();
        assert!(matches!(err, OpError::Ledger(LedgerError::CapacityExceeded { .. })));
        assert_eq!(st, before);
    }

    #[test]
    fn duplicate_append_is_atomic() {
        let mut st = state(1, 100);
        st.append_block(sid(0), bid("a"), 10, 1).unwrap();
        let oracle = replay_oracle(st.ledger.log()).unwrap();
        let before = st.clone();
        assert!(st.append_block(sid(0), bid("a"), 5, 1).is_err());
        assert_eq!(st, before);
        assert_eq!(replay_oracle(st.ledger.log()).unwrap(), oracle);
    }

    #[test]
    fn delete_returns_to_empty() {
        let mut st = state(1, 100);
        st.append_block(sid(0), bid("a"), 10, 1).unwrap();
        let out = st.delete_block(sid(0), bid("a")).unwrap();
        assert_eq!(out.record.size_delta, -10);
        assert!(st.fleet.measure(sid(0)).unwrap().is_empty());
        assert!(consistent(&st));
    }

    #[test]
    fn delete_guards() {
        let mut st = state(1, 100);
        let before = st.clone();
        assert_eq!(st.delete_block(sid(0), bid("a")), Err(OpError::EmptyServer(sid(0))));
        assert_eq!(st, before);
        st.append_block(sid(0), bid("a"), 10, 1).unwrap();
        let before = st.clone();
        assert!(matches!(st.delete_block(sid(0), bid("zz")), Err(OpError::Storage(StorageError::UnknownBlock { .. }))));
        assert_eq!(st, before);
    }

    #[test]
    fn update_grow_same_and_overflow() {
        let mut st = state(1, 2000);
        st.append_block(sid(0), bid("a"), 1000, 1).unwrap();
        let out = st.update_block(sid(0), bid("a"), 1512, 2).unwrap();
        assert_eq!(out.record.size_delta, 512);
        assert_eq!(st.fleet.measure(sid(0)).unwrap().used, 1512);

        let old = st.fleet.server(sid(0)).unwrap().block(&bid("a")).unwrap().payload().to_vec();
        let out = st.update_block(sid(0), bid("a"), 1512, 3).unwrap();
        assert_eq!(out.record.size_delta, 0);
        assert_ne!(st.fleet.server(sid(0)).unwrap().block(&bid("a")).unwrap().payload(), &old[..]);
        assert!(consistent(&st));

        let before = st.clone();
        assert!(st.update_block(sid(0), bid("a"), 2001, 4).is_err());
        assert_eq!(st, before);
        st.update_block(sid(0), bid("a"), 2000, 4).unwrap();
    }

    #[test]
    fn crashed_server_rejects_ops() {
        let mut st = state(1, 100);
        st.fleet.server_mut(sid(0)).unwrap().crash().unwrap();
        let before = st.clone();
        assert_eq!(st.append_block(sid(0), bid("a"), 1, 1), Err(OpError::Storage(StorageError::Crashed(sid(0)))));
        assert_eq!(st.delete_block(sid(0), bid("a")), Err(OpError::Storage(StorageError::Crashed(sid(0)))));
        assert_eq!(st, before);
    }

    #[test]
    fn one_tick_and_one_point_per_op() {
        let mut st = state(2, 100);
        let (t0, p0) = (st.ledger.current_tick(), st.restore_points.len());
        st.append_block(sid(1), bid("a"), 5, 1).unwrap();
        assert_eq!(st.ledger.current_tick(), t0.next());
        assert_eq!(st.restore_points.len(), p0 + 1);
    }

    #[test]
    fn pre_check_is_reported() {
        let mut st = state(1, 100);
        st.settings.pre_check = true;
        let out = st.append_block(sid(0), bid("a"), 5, 1).unwrap();
        assert_eq!(out.pre_check.unwrap().summary, Verdict::Consistent);
    }

    #[test]
    fn explicit_restore_point_advances_clock_when_needed() {
        let mut st = state(1, 100);
        let now = st.ledger.current_tick();
        let t = st.create_restore_point().unwrap();
        assert_eq!(t, now.next());

        let mut quiet = CloudState::new(1, OpSettings { pre_check: false, auto_restore: false }).unwrap();
        quiet.allocate(sid(0), 10).unwrap();
        assert_eq!(quiet.create_restore_point().unwrap(), quiet.ledger.current_tick());
        assert_eq!(quiet.restore_points.len(), 1);
    }
}
