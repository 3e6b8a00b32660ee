//! Content-blind third-party audit.
//!
//! The auditor sees two projections and nothing else: [`LedgerPublicView`]
//! (expected sizes from the client's ledger) and [`FleetOccupancy`] (what the
//! servers report as used/free). Neither type has a field that can hold
//! payload bytes.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::accounting::{IntegrityReport, ReportRow};
use crate::ids::{BlockId, ServerId, Tick};
use crate::ledger::ClientLedger;
use crate::storage::FleetOccupancy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("audit not delegated by the client")]
    NotGranted,
    #[error("audit scope names {0}, which is not part of the fleet")]
    OutOfScope(ServerId),
}

/// The client's delegation to the auditor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditGrant {
    pub granted: bool,
    pub scope: Vec<ServerId>,
}

impl AuditGrant {
    pub fn new(scope: Vec<ServerId>) -> Self {
        AuditGrant { granted: true, scope }
    }

    /// Granted over every server the ledger tracks.
    pub fn full(view: &LedgerPublicView) -> Self {
        AuditGrant::new(view.servers.keys().copied().collect())
    }

    pub fn revoked() -> Self {
        AuditGrant { granted: false, scope: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PublicServerEntry {
    pub capacity: u64,
    pub expected_used: u64,
    pub block_sizes: BTreeMap<BlockId, u64>,
}

/// Size-only projection of the ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerPublicView {
    pub tick: Tick,
    pub servers: BTreeMap<ServerId, PublicServerEntry>,
}

impl LedgerPublicView {
    pub fn of(ledger: &ClientLedger) -> Self {
        let servers = ledger
            .servers()
            .iter()
            .map(|(id, s)| {
                (*id, PublicServerEntry { capacity: s.capacity, expected_used: s.used(), block_sizes: s.blocks.clone() })
            })
            .collect();
        LedgerPublicView { tick: ledger.current_tick(), servers }
    }
}

/// Audits the servers in `grant.scope` using sizes only. Rows follow fleet
/// order; duplicate scope entries collapse.
pub fn tpa_audit(grant: &AuditGrant, view: &LedgerPublicView, occupancy: &FleetOccupancy) -> Result<IntegrityReport, AuditError> {
    if !grant.granted {
        return Err(AuditError::NotGranted);
    }
    for id in &grant.scope {
        if occupancy.get(*id).is_none() || !view.servers.contains_key(id) {
            return Err(AuditError::OutOfScope(*id));
        }
    }
    let rows = occupancy
        .entries()
        .iter()
        .filter(|(id, _)| grant.scope.contains(id))
        .map(|(id, measured)| ReportRow::new(*id, view.servers[id].expected_used, measured.map(|m| m.used)))
        .collect();
    Ok(IntegrityReport::from_rows(view.tick, rows))
}
