//! Size-based integrity auditing for data held on untrusted multi-server
//! storage.
//!
//! A client keeps a content-free [`ledger::ClientLedger`] of how many bytes
//! each server should hold. [`accounting::compare_spaces`] checks that against
//! what the servers report, [`restore`] keeps CSP-side restore points for
//! rollback after crashes or tampering, and [`scenario`] drives the whole
//! thing deterministically from a text file.

pub mod accounting;
pub mod adversary;
pub mod audit;
pub mod ids;
pub mod ledger;
pub mod ops;
pub mod payload;
pub mod restore;
pub mod scenario;
pub mod storage;

pub use accounting::{check_initial_allocation, compare_spaces, IntegrityReport, ReportRow, Verdict};
pub use adversary::{Adversary, TamperAction};
pub use audit::{tpa_audit, AuditGrant, LedgerPublicView};
pub use ids::{BlockId, ServerId, Tick};
pub use ledger::{replay_oracle, ClientLedger, OpKind, OperationRecord};
pub use ops::{CloudState, OpOutcome, OpSettings};
pub use payload::generate_payload;
pub use restore::{RecoveryNote, RestorePoint, RestoreStore};
pub use scenario::{parse_scenario, run_scenario, RunOptions, RunReport};
pub use storage::{DataBlock, Fleet, ServerState, SpaceMeasurement};
