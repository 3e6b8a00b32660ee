//! Expected-versus-actual occupancy comparison.
//!
//! The client never holds content, so the only integrity signal is size: the
//! ledger says how many bytes each server should hold, the server reports how
//! many it does hold, and any difference is a violation. Same-size content
//! substitution is invisible to this check.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::ids::{BlockId, ServerId, Tick};
use crate::ledger::ClientLedger;
use crate::storage::Fleet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Consistent,
    Violation,
    Unavailable,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Consistent => "CONSISTENT",
            Verdict::Violation => "VIOLATION",
            Verdict::Unavailable => "UNAVAILABLE",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportRow {
    pub server_id: ServerId,
    pub expected_used: u64,
    /// `None` when the server could not be measured.
    pub actual_used: Option<u64>,
    pub verdict: Verdict,
}

impl ReportRow {
    pub fn new(server_id: ServerId, expected_used: u64, actual_used: Option<u64>) -> Self {
        let verdict = match actual_used {
            None => Verdict::Unavailable,
            Some(actual) if actual == expected_used => Verdict::Consistent,
            Some(_) => Verdict::Violation,
        };
        ReportRow { server_id, expected_used, actual_used, verdict }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntegrityReport {
    pub tick: Tick,
    pub rows: Vec<ReportRow>,
    pub summary: Verdict,
    pub violation_count: usize,
}

impl IntegrityReport {
    pub fn from_rows(tick: Tick, rows: Vec<ReportRow>) -> Self {
        let violation_count = rows.iter().filter(|r| r.verdict == Verdict::Violation).count();
        let summary = if violation_count > 0 {
            Verdict::Violation
        } else if rows.iter().any(|r| r.verdict == Verdict::Unavailable) {
            Verdict::Unavailable
        } else {
            Verdict::Consistent
        };
        IntegrityReport { tick, rows, summary, violation_count }
    }

    pub fn row(&self, id: ServerId) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.server_id == id)
    }

    /// Servers with a VIOLATION verdict, in row order.
    pub fn violators(&self) -> Vec<ServerId> {
        self.rows.iter().filter(|r| r.verdict == Verdict::Violation).map(|r| r.server_id).collect()
    }

    /// Renders the report block under the given header word (`CHECK`, `AUDIT`).
    pub fn render(&self, header: &str) -> String {
        let mut out = format!("{header} tick={}\n", self.tick);
        for r in &self.rows {
            let actual = r.actual_used.map_or_else(|| "NA".to_string(), |a| a.to_string());
            out.push_str(&format!(
                "server {} expected={} actual={} verdict={}\n",
                r.server_id, r.expected_used, actual, r.verdict
            ));
        }
        out.push_str(&format!("SUMMARY verdict={} violations={}\n", self.summary, self.violation_count));
        out
    }
}

impl fmt::Display for IntegrityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render("CHECK"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccountingError {
    #[error("ledger and fleet disagree on the server set (ledger: {ledger}, fleet: {fleet})")]
    ServerSetMismatch { ledger: usize, fleet: usize },
    #[error("initial-allocation check requested after data operations were recorded")]
    DataAlreadyRecorded,
}

fn ensure_same_servers(ledger: &ClientLedger, fleet: &Fleet) -> Result<(), AccountingError> {
    let same = ledger.servers().len() == fleet.count() && ledger.servers().keys().copied().eq(fleet.server_ids());
    if same {
        Ok(())
    } else {
        Err(AccountingError::ServerSetMismatch { ledger: ledger.servers().len(), fleet: fleet.count() })
    }
}

/// Compares the ledger's expected occupancy with what each server reports.
pub fn compare_spaces(ledger: &ClientLedger, fleet: &Fleet) -> Result<IntegrityReport, AccountingError> {
    ensure_same_servers(ledger, fleet)?;
    let rows = fleet
        .servers()
        .iter()
        .map(|s| {
            let expected = ledger.servers()[&s.id()].used();
            ReportRow::new(s.id(), expected, s.measure().ok().map(|m| m.used))
        })
        .collect();
    Ok(IntegrityReport::from_rows(ledger.current_tick(), rows))
}

/// Check run before any data operation: every server must be empty.
pub fn check_initial_allocation(ledger: &ClientLedger, fleet: &Fleet) -> Result<IntegrityReport, AccountingError> {
    ensure_same_servers(ledger, fleet)?;
    if ledger.has_data_ops() {
        return Err(AccountingError::DataAlreadyRecorded);
    }
    let rows = fleet
        .servers()
        .iter()
        .map(|s| ReportRow::new(s.id(), 0, s.measure().ok().map(|m| m.used)))
        .collect();
    Ok(IntegrityReport::from_rows(ledger.current_tick(), rows))
}

/// Per-block explanation of a server's discrepancy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockDiscrepancy {
    Missing { block: BlockId, expected: u64 },
    Unexpected { block: BlockId, actual: u64 },
    Resized { block: BlockId, expected: u64, actual: u64 },
}

/// Best-effort attribution of a violation to individual blocks. Returns
/// `None` when the server's block table cannot be read (crashed or unknown).
///
/// Diagnostic only: verdicts come from [`compare_spaces`].
pub fn attribute(ledger: &ClientLedger, fleet: &Fleet, server: ServerId) -> Option<Vec<BlockDiscrepancy>> {
    let state = fleet.server(server).ok().filter(|s| !s.is_crashed())?;
    let expected = &ledger.servers().get(&server)?.blocks;
    let mut out = Vec::new();
    for (block, &size) in expected {
        match state.block(block) {
            None => out.push(BlockDiscrepancy::Missing { block: block.clone(), expected: size }),
            Some(b) if b.size() != size => {
                out.push(BlockDiscrepancy::Resized { block: block.clone(), expected: size, actual: b.size() })
            }
            Some(_) => {}
        }
    }
    for b in state.blocks().filter(|b| !expected.contains_key(b.id())) {
        out.push(BlockDiscrepancy::Unexpected { block: b.id().clone(), actual: b.size() });
    }
    Some(out)
}
