//! Line-oriented scenario files and the deterministic runner behind the CLI.
//!
//! ```text
//! fleet <count>
//! allocate <server> <capacity-bytes>
//! append <server> <block-id> <size-bytes> [seed=<u64>]
//! delete <server> <block-id>
//! update <server> <block-id> <new-size-bytes> [seed=<u64>]
//! check
//! audit [<server> ...]
//! restorepoint
//! tamper modify <server> <block-id> <signed-delta>
//! tamper add <server> <block-id> <size-bytes>
//! tamper remove <server> <block-id>
//! crash <server>
//! recover <server> [at=<tick>]
//! ```

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::accounting::{AccountingError, IntegrityReport, Verdict};
use crate::adversary::{Adversary, TamperAction, TamperError};
use crate::audit::{tpa_audit, AuditError, AuditGrant, LedgerPublicView};
use crate::ids::{BlockId, ServerId, Tick};
use crate::ledger::ClientLedger;
use crate::ops::{CloudState, OpError, OpSettings};
use crate::payload::SeedStream;
use crate::restore::RecoveryNote;

pub const EXIT_CONSISTENT: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_UNRECOVERABLE: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Fleet { count: usize },
    Allocate { server: ServerId, capacity: u64 },
    Append { server: ServerId, block: BlockId, size: u64, seed: Option<u64> },
    Delete { server: ServerId, block: BlockId },
    Update { server: ServerId, block: BlockId, new_size: u64, seed: Option<u64> },
    Check,
    Audit { servers: Vec<ServerId> },
    RestorePoint,
    /// `tamper modify|add|remove` and `crash`.
    Tamper(TamperAction),
    Recover { server: ServerId, at: Option<Tick> },
}

impl Command {
    /// Commands after which the runner inserts an automatic check.
    pub fn is_mutating(&self) -> bool {
        !matches!(self, Command::Fleet { .. } | Command::Check | Command::Audit { .. } | Command::RestorePoint)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seed = |s: &Option<u64>| s.map(|s| format!(" seed={s}")).unwrap_or_default();
        match self {
            Command::Fleet { count } => write!(f, "fleet {count}"),
            Command::Allocate { server, capacity } => write!(f, "allocate {server} {capacity}"),
            Command::Append { server, block, size, seed: s } => write!(f, "append {server} {block} {size}{}", seed(s)),
            Command::Delete { server, block } => write!(f, "delete {server} {block}"),
            Command::Update { server, block, new_size, seed: s } => {
                write!(f, "update {server} {block} {new_size}{}", seed(s))
            }
            Command::Check => f.write_str("check"),
            Command::Audit { servers } => {
                f.write_str("audit")?;
                for s in servers {
                    write!(f, " {s}")?;
                }
                Ok(())
            }
            Command::RestorePoint => f.write_str("restorepoint"),
            Command::Tamper(action) => write!(f, "{action}"),
            Command::Recover { server, at: Some(t) } => write!(f, "recover {server} at={t}"),
            Command::Recover { server, at: None } => write!(f, "recover {server}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioCommand {
    pub line_no: usize,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn unsigned(tok: &str, what: &str) -> Result<u64, String> {
    if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("{what} must be a non-negative integer, got `{tok}`"));
    }
    tok.parse().map_err(|_| format!("{what} `{tok}` out of range"))
}

fn signed(tok: &str) -> Result<i64, String> {
    let digits = tok.strip_prefix(['+', '-']).unwrap_or(tok);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("delta must be a signed integer, got `{tok}`"));
    }
    let tok = tok.strip_prefix('+').unwrap_or(tok);
    tok.parse().map_err(|_| format!("delta `{tok}` out of range"))
}

fn id<T: FromStr>(tok: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    tok.parse().map_err(|e: T::Err| e.to_string())
}

fn keyed(tok: Option<&&str>, key: &str) -> Result<Option<u64>, String> {
    match tok {
        None => Ok(None),
        Some(t) => {
            let v = t.strip_prefix(key).ok_or_else(|| format!("expected `{key}<u64>`, got `{t}`"))?;
            unsigned(v, key.trim_end_matches('=')).map(Some)
        }
    }
}

fn arity(verb: &str, args: &[&str], min: usize, max: usize) -> Result<(), String> {
    if args.len() < min || args.len() > max {
        let want = if min == max { min.to_string() } else { format!("{min}..={max}") };
        return Err(format!("`{verb}` takes {want} argument(s), got {}", args.len()));
    }
    Ok(())
}

fn parse_command(toks: &[&str]) -> Result<Command, String> {
    let (verb, args) = toks.split_first().expect("non-empty line");
    let cmd = match *verb {
        "fleet" => {
            arity(verb, args, 1, 1)?;
            let count = unsigned(args[0], "count")?;
            Command::Fleet { count: usize::try_from(count).unwrap_or(usize::MAX) }
        }
        "allocate" => {
            arity(verb, args, 2, 2)?;
            Command::Allocate { server: id(args[0])?, capacity: unsigned(args[1], "capacity")? }
        }
        "append" => {
            arity(verb, args, 3, 4)?;
            Command::Append {
                server: id(args[0])?,
                block: id(args[1])?,
                size: unsigned(args[2], "size")?,
                seed: keyed(args.get(3), "seed=")?,
            }
        }
        "delete" => {
            arity(verb, args, 2, 2)?;
            Command::Delete { server: id(args[0])?, block: id(args[1])? }
        }
        "update" => {
            arity(verb, args, 3, 4)?;
            Command::Update {
                server: id(args[0])?,
                block: id(args[1])?,
                new_size: unsigned(args[2], "size")?,
                seed: keyed(args.get(3), "seed=")?,
            }
        }
        "check" => {
            arity(verb, args, 0, 0)?;
            Command::Check
        }
        "audit" => Command::Audit { servers: args.iter().map(|a| id(a)).collect::<Result<_, _>>()? },
        "restorepoint" => {
            arity(verb, args, 0, 0)?;
            Command::RestorePoint
        }
        "tamper" => {
            let (sub, rest) = args.split_first().ok_or("`tamper` needs modify|add|remove")?;
            let action = match *sub {
                "modify" => {
                    arity("tamper modify", rest, 3, 3)?;
                    TamperAction::Modify { server: id(rest[0])?, block: id(rest[1])?, size_delta: signed(rest[2])? }
                }
                "add" => {
                    arity("tamper add", rest, 3, 3)?;
                    TamperAction::Add { server: id(rest[0])?, block: id(rest[1])?, size: unsigned(rest[2], "size")? }
                }
                "remove" => {
                    arity("tamper remove", rest, 2, 2)?;
                    TamperAction::Remove { server: id(rest[0])?, block: id(rest[1])? }
                }
                other => return Err(format!("unknown tamper kind `{other}`")),
            };
            Command::Tamper(action)
        }
        "crash" => {
            arity(verb, args, 1, 1)?;
            Command::Tamper(TamperAction::Crash { server: id(args[0])? })
        }
        "recover" => {
            arity(verb, args, 1, 2)?;
            Command::Recover { server: id(args[0])?, at: keyed(args.get(1), "at=")?.map(Tick) }
        }
        other => return Err(format!("unknown command `{other}`")),
    };
    Ok(cmd)
}

/// Parses scenario text. `#` starts a comment; blank lines are skipped.
pub fn parse_scenario(text: &str) -> Result<Vec<ScenarioCommand>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let command = parse_command(&toks).map_err(|message| ParseError { line: i + 1, message })?;
        out.push(ScenarioCommand { line_no: i + 1, command });
    }
    Ok(out)
}

/// Canonical text for a command list, one command per line.
pub fn format_scenario(commands: &[ScenarioCommand]) -> String {
    commands.iter().map(|c| format!("{}\n", c.command)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub auto_check: bool,
    pub auto_restore: bool,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { auto_check: true, auto_restore: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("no fleet: the scenario must start with `fleet <count>`")]
    NoFleet,
    #[error("fleet already created")]
    FleetExists,
    #[error(transparent)]
    Op(#[from] OpError),
    #[error(transparent)]
    Tamper(#[from] TamperError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
}

/// Something a command emitted into the report stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Emitted {
    Check(IntegrityReport),
    Audit(IntegrityReport),
    Recover(RecoveryNote),
}

impl fmt::Display for Emitted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Emitted::Check(r) => f.write_str(&r.render("CHECK")),
            Emitted::Audit(r) => f.write_str(&r.render("AUDIT")),
            Emitted::Recover(n) => write!(f, "{n}"),
        }
    }
}

/// Executes commands one at a time against a fresh world.
#[derive(Debug, Clone)]
pub struct Session {
    options: RunOptions,
    state: Option<CloudState>,
    client_seeds: SeedStream,
    adversary: Adversary,
    emitted: Vec<Emitted>,
}

impl Session {
    pub fn new(options: RunOptions) -> Self {
        Session {
            options,
            state: None,
            client_seeds: SeedStream::new(options.seed),
            adversary: Adversary::new(!options.seed),
            emitted: Vec::new(),
        }
    }

    pub fn state(&self) -> Option<&CloudState> {
        self.state.as_ref()
    }

    pub fn emitted(&self) -> &[Emitted] {
        &self.emitted
    }

    fn state_mut(&mut self) -> Result<&mut CloudState, RunError> {
        self.state.as_mut().ok_or(RunError::NoFleet)
    }

    fn seed_or_draw(&mut self, seed: Option<u64>) -> u64 {
        seed.unwrap_or_else(|| self.client_seeds.next_seed())
    }

    /// Runs one command, appending anything it emits. Returns the number of
    /// items emitted.
    pub fn execute(&mut self, command: &Command) -> Result<usize, RunError> {
        let before = self.emitted.len();
        match command {
            Command::Fleet { count } => {
                if self.state.is_some() {
                    return Err(RunError::FleetExists);
                }
                let settings = OpSettings { pre_check: false, auto_restore: self.options.auto_restore };
                self.state = Some(CloudState::new(*count, settings)?);
            }
            Command::Allocate { server, capacity } => {
                self.state_mut()?.allocate(*server, *capacity)?;
            }
            Command::Append { server, block, size, seed } => {
                let seed = self.seed_or_draw(*seed);
                self.state_mut()?.append_block(*server, block.clone(), *size, seed)?;
            }
            Command::Delete { server, block } => {
                self.state_mut()?.delete_block(*server, block.clone())?;
            }
            Command::Update { server, block, new_size, seed } => {
                let seed = self.seed_or_draw(*seed);
                self.state_mut()?.update_block(*server, block.clone(), *new_size, seed)?;
            }
            Command::Check => {
                let report = self.state_mut()?.check()?;
                self.emitted.push(Emitted::Check(report));
            }
            Command::Audit { servers } => {
                let state = self.state.as_ref().ok_or(RunError::NoFleet)?;
                let view = LedgerPublicView::of(&state.ledger);
                let grant = if servers.is_empty() { AuditGrant::full(&view) } else { AuditGrant::new(servers.clone()) };
                let report = tpa_audit(&grant, &view, &state.fleet.occupancy())?;
                self.emitted.push(Emitted::Audit(report));
            }
            Command::RestorePoint => {
                self.state_mut()?.create_restore_point()?;
            }
            Command::Tamper(action) => {
                let state = self.state.as_mut().ok_or(RunError::NoFleet)?;
                self.adversary.apply(&mut state.fleet, action)?;
            }
            Command::Recover { server, at } => {
                let note = self.state_mut()?.recover(*server, *at)?;
                self.emitted.push(Emitted::Recover(note));
            }
        }
        if self.options.auto_check && command.is_mutating() {
            let report = self.state_mut()?.check()?;
            self.emitted.push(Emitted::Check(report));
        }
        Ok(self.emitted.len() - before)
    }

    fn saw_violation(&self) -> bool {
        self.emitted.iter().any(|e| match e {
            Emitted::Check(r) | Emitted::Audit(r) => r.violation_count > 0,
            Emitted::Recover(_) => false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    /// CHECK/AUDIT/RECOVER blocks, an optional ERROR line, then RESULT.
    pub text: String,
    pub exit_code: i32,
    pub emitted: Vec<Emitted>,
    /// Final client ledger, if a fleet was created.
    pub ledger: Option<ClientLedger>,
    pub final_state: Option<CloudState>,
}

impl RunReport {
    pub fn violation_rows(&self) -> usize {
        self.emitted
            .iter()
            .map(|e| match e {
                Emitted::Check(r) | Emitted::Audit(r) => r.violation_count,
                Emitted::Recover(_) => 0,
            })
            .sum()
    }
}

/// Runs a parsed scenario against fresh state.
///
/// Exit code: 2 if any VIOLATION row was reported; otherwise 3 if a command
/// failed or a server is still crashed at the end; otherwise 0.
pub fn run_scenario(commands: &[ScenarioCommand], options: RunOptions) -> RunReport {
    let mut session = Session::new(options);
    let mut error = None;
    for cmd in commands {
        if let Err(e) = session.execute(&cmd.command) {
            error = Some((cmd.line_no, e));
            break;
        }
    }

    let crashed = session
        .state
        .as_ref()
        .is_some_and(|s| s.fleet.servers().iter().any(|srv| srv.is_crashed()));
    let (verdict, exit_code) = if session.saw_violation() {
        (Verdict::Violation.as_str(), EXIT_VIOLATION)
    } else if error.is_some() {
        ("UNRECOVERABLE", EXIT_UNRECOVERABLE)
    } else if crashed {
        (Verdict::Unavailable.as_str(), EXIT_UNRECOVERABLE)
    } else {
        (Verdict::Consistent.as_str(), EXIT_CONSISTENT)
    };

    let mut text: String = session.emitted.iter().map(ToString::to_string).collect();
    if let Some((line, e)) = &error {
        text.push_str(&format!("ERROR line={line} {e}\n"));
    }
    text.push_str(&format!("RESULT verdict={verdict} exit={exit_code}\n"));

    RunReport {
        text,
        exit_code,
        ledger: session.state.as_ref().map(|s| s.ledger.clone()),
        emitted: session.emitted,
        final_state: session.state,
    }
}
