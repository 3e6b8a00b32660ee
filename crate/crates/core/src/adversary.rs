//! Unledgered fleet mutations: malicious modification, unauthorized
//! add/remove, and server crashes.
//!
//! The adversary only ever receives the fleet, never the ledger, so it cannot
//! rewrite the client's record. Replacement bytes come from a dedicated seed
//! stream and campaigns replay deterministically.

use std::fmt;

use thiserror::Error;

use crate::ids::{BlockId, ServerId};
use crate::payload::{generate_payload, SeedStream};
use crate::storage::{DataBlock, Fleet, StorageError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TamperError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("modifying {block} by {delta} leaves no bytes; use a remove instead")]
    SizeUnderflow { block: BlockId, delta: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TamperAction {
    /// Resize/rewrite a block. A zero delta keeps the size and swaps content.
    Modify { server: ServerId, block: BlockId, size_delta: i64 },
    Add { server: ServerId, block: BlockId, size: u64 },
    Remove { server: ServerId, block: BlockId },
    Crash { server: ServerId },
}

impl TamperAction {
    pub fn server(&self) -> ServerId {
        match self {
            TamperAction::Modify { server, .. }
            | TamperAction::Add { server, .. }
            | TamperAction::Remove { server, .. }
            | TamperAction::Crash { server } => *server,
        }
    }
}

impl fmt::Display for TamperAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TamperAction::Modify { server, block, size_delta } => write!(f, "tamper modify {server} {block} {size_delta}"),
            TamperAction::Add { server, block, size } => write!(f, "tamper add {server} {block} {size}"),
            TamperAction::Remove { server, block } => write!(f, "tamper remove {server} {block}"),
            TamperAction::Crash { server } => write!(f, "crash {server}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adversary {
    seeds: SeedStream,
}

impl Adversary {
    pub fn new(seed: u64) -> Self {
        Adversary { seeds: SeedStream::new(seed) }
    }

    pub fn apply(&mut self, fleet: &mut Fleet, action: &TamperAction) -> Result<(), TamperError> {
        match action {
            TamperAction::Modify { server, block, size_delta } => self.tamper_modify(fleet, *server, block, *size_delta),
            TamperAction::Add { server, block, size } => self.tamper_add(fleet, *server, block.clone(), *size),
            TamperAction::Remove { server, block } => self.tamper_remove(fleet, *server, block),
            TamperAction::Crash { server } => self.crash_server(fleet, *server),
        }
    }

    /// Rewrites `block` with fresh bytes, `size_delta` bytes longer or shorter.
    pub fn tamper_modify(&mut self, fleet: &mut Fleet, server: ServerId, block: &BlockId, size_delta: i64) -> Result<(), TamperError> {
        let state = fleet.server(server)?;
        if state.is_crashed() {
            return Err(StorageError::Crashed(server).into());
        }
        let old = state
            .block(block)
            .ok_or_else(|| StorageError::UnknownBlock { server, block: block.clone() })?;
        let new_size = old.size() as i128 + size_delta as i128;
        if new_size < 1 {
            return Err(TamperError::SizeUnderflow { block: block.clone(), delta: size_delta });
        }
        let new_size = u64::try_from(new_size).map_err(|_| StorageError::TooLarge(u64::MAX))?;
        let mut payload = generate_payload(self.seeds.next_seed(), new_size)?;
        // Same-size substitution must actually change the content.
        while payload == old.payload() {
            payload = generate_payload(self.seeds.next_seed(), new_size)?;
        }
        fleet.server_mut(server)?.replace(DataBlock::new(block.clone(), payload)?)?;
        Ok(())
    }

    pub fn tamper_add(&mut self, fleet: &mut Fleet, server: ServerId, block: BlockId, size: u64) -> Result<(), TamperError> {
        let payload = generate_payload(self.seeds.next_seed(), size)?;
        fleet.server_mut(server)?.insert(DataBlock::new(block, payload)?)?;
        Ok(())
    }

    pub fn tamper_remove(&mut self, fleet: &mut Fleet, server: ServerId, block: &BlockId) -> Result<(), TamperError> {
        fleet.server_mut(server)?.remove(block)?;
        Ok(())
    }

    /// Fails the server; its data is lost until recovery.
    pub fn crash_server(&mut self, fleet: &mut Fleet, server: ServerId) -> Result<(), TamperError> {
        fleet.server_mut(server)?.crash()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accounting::Verdict;
    use crate::ops::{CloudState, OpSettings};

    fn sid(k: u32) -> ServerId {
        ServerId::new(k)
    }

    fn bid(s: &str) -> BlockId {
        s.parse().unwrap()
    }

    fn honest() -> CloudState {
        let mut st = CloudState::new(2, OpSettings::default()).unwrap();
        st.allocate(sid(0), 10_000).unwrap();
        st.allocate(sid(1), 10_000).unwrap();
        st.append_block(sid(0), bid("blk1"), 1000, 1).unwrap();
        st.append_block(sid(1), bid("blk2"), 2000, 2).unwrap();
        st
    }

    #[test]
    fn grow_is_detected_on_that_server_only() {
        let mut st = honest();
        let ledger = st.ledger.save();
        Adversary::new(9).tamper_modify(&mut st.fleet, sid(1), &bid("blk2"), 512).unwrap();
        assert_eq!(st.ledger.save(), ledger);
        let r = st.check().unwrap();
        assert_eq!(r.violators(), vec![sid(1)]);
        let row = r.row(sid(1)).unwrap();
        assert_eq!((row.expected_used, row.actual_used), (2000, Some(2512)));
        assert_eq!(r.row(sid(0)).unwrap().verdict, Verdict::Consistent);
    }

    #[test]
    fn same_weight_substitution_is_invisible() {
        let mut st = honest();
        let before = st.fleet.server(sid(0)).unwrap().block(&bid("blk1")).unwrap().clone();
        Adversary::new(9).tamper_modify(&mut st.fleet, sid(0), &bid("blk1"), 0).unwrap();
        let after = st.fleet.server(sid(0)).unwrap().block(&bid("blk1")).unwrap();
        assert_eq!(after.size(), before.size());
        assert_ne!(after.payload(), before.payload());
        assert_eq!(st.check().unwrap().summary, Verdict::Consistent);
    }

    #[test]
    fn modify_to_zero_rejected() {
        let mut st = honest();
        let before = st.fleet.clone();
        let err = Adversary::new(1).tamper_modify(&mut st.fleet, sid(0), &bid("blk1"), -1000).unwrap_err();
        assert!(matches!(err, TamperError::SizeUnderflow { .. }));
        assert_eq!(st.fleet, before);
        assert!(Adversary::new(1).tamper_modify(&mut st.fleet, sid(0), &bid("blk1"), -999).is_ok());
    }

    #[test]
    fn add_and_remove_are_detected() {
        let mut st = honest();
        let mut adv = Adversary::new(3);
        adv.tamper_add(&mut st.fleet, sid(0), bid("x"), 100).unwrap();
        let row = st.check().unwrap().row(sid(0)).unwrap().clone();
        assert_eq!((row.expected_used, row.actual_used, row.verdict), (1000, Some(1100), Verdict::Violation));

        let mut st = honest();
        adv.tamper_remove(&mut st.fleet, sid(1), &bid("blk2")).unwrap();
        let row = st.check().unwrap().row(sid(1)).unwrap().clone();
        assert_eq!((row.actual_used, row.verdict), (Some(0), Verdict::Violation));
    }

    #[test]
    fn net_zero_window_is_invisible() {
        let mut st = honest();
        let mut adv = Adversary::new(3);
        adv.tamper_add(&mut st.fleet, sid(0), bid("x"), 100).unwrap();
        adv.tamper_remove(&mut st.fleet, sid(0), &bid("x")).unwrap();
        assert_eq!(st.check().unwrap().summary, Verdict::Consistent);
    }

    #[test]
    fn crash_contract() {
        let mut st = honest();
        let mut adv = Adversary::new(3);
        adv.crash_server(&mut st.fleet, sid(0)).unwrap();
        assert_eq!(st.fleet.measure(sid(0)), Err(StorageError::MeasurementUnavailable(sid(0))));
        assert!(st.append_block(sid(0), bid("n"), 1, 1).is_err());
        assert_eq!(st.check().unwrap().row(sid(0)).unwrap().verdict, Verdict::Unavailable);
        assert!(adv.crash_server(&mut st.fleet, sid(0)).is_err());
        assert!(adv.crash_server(&mut st.fleet, sid(5)).is_err());

        st.recover(sid(0), None).unwrap();
        assert_eq!(st.check().unwrap().summary, Verdict::Consistent);
        assert_eq!(st.fleet.server(sid(0)).unwrap().block(&bid("blk1")).unwrap().payload(), generate_payload(1, 1000).unwrap());
    }

    #[test]
    fn campaigns_replay_deterministically() {
        let run = || {
            let mut st = honest();
            let mut adv = Adversary::new(77);
            adv.tamper_modify(&mut st.fleet, sid(0), &bid("blk1"), 0).unwrap();
            adv.tamper_add(&mut st.fleet, sid(1), bid("y"), 7).unwrap();
            st.fleet
        };
        assert_eq!(run(), run());
    }
}
