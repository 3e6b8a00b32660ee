#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spaceaudit::scenario::{Command, ScenarioCommand, Session};
use spaceaudit::{BlockId, CloudState, Fleet, OpKind, OperationRecord, RunOptions, ServerId, TamperAction};

pub const MAX_SERVERS: u32 = 8;
pub const MAX_OPS: usize = 200;
pub const MAX_BLOCK: u64 = 4096;

pub fn sid(k: u32) -> ServerId {
    ServerId::new(k)
}

pub fn bid(s: &str) -> BlockId {
    s.parse().unwrap()
}

/// Second, independent fold of a ledger log: tracks each block's size by
/// kind and sums per server. Never looks at pre/post fields.
pub fn per_block_fold(log: &[OperationRecord]) -> BTreeMap<ServerId, u64> {
    let mut blocks: BTreeMap<(ServerId, BlockId), i128> = BTreeMap::new();
    let mut servers: BTreeMap<ServerId, u64> = BTreeMap::new();
    for r in log {
        servers.entry(r.server_id).or_insert(0);
        match r.kind {
            OpKind::Append => {
                assert!(blocks.insert((r.server_id, r.block_id.clone()), r.size_delta as i128).is_none());
            }
            OpKind::Delete => {
                let old = blocks.remove(&(r.server_id, r.block_id.clone())).expect("deleted block existed");
                assert_eq!(old, -(r.size_delta as i128));
            }
            OpKind::Update => {
                *blocks.get_mut(&(r.server_id, r.block_id.clone())).expect("updated block existed") += r.size_delta as i128;
            }
            OpKind::Allocate => {}
        }
    }
    for ((server, _), size) in blocks {
        *servers.get_mut(&server).unwrap() += u64::try_from(size).unwrap();
    }
    servers
}

/// Byte serialization of a fleet, including payloads, for exact comparison.
pub fn dump_fleet(fleet: &Fleet) -> Vec<u8> {
    let mut out = Vec::new();
    for s in fleet.servers() {
        out.extend_from_slice(format!("server {} {} {}\n", s.id(), s.capacity(), s.is_crashed()).as_bytes());
        for b in s.blocks() {
            out.extend_from_slice(format!("block {} {}\n", b.id(), b.size()).as_bytes());
            out.extend_from_slice(b.payload());
            out.push(b'\n');
        }
    }
    out
}

/// Seeded generator that picks commands valid for the live state.
pub struct ScenarioGen {
    pub rng: ChaCha8Rng,
    next_block: u32,
}

impl ScenarioGen {
    pub fn new(seed: u64) -> Self {
        ScenarioGen { rng: ChaCha8Rng::seed_from_u64(seed), next_block: 0 }
    }

    fn fresh_block(&mut self) -> BlockId {
        self.next_block += 1;
        bid(&format!("b{}", self.next_block))
    }

    /// `fleet` plus allocations; s0 is always allocated.
    pub fn setup(&mut self) -> Vec<Command> {
        let n = self.rng.gen_range(1..=MAX_SERVERS);
        let mut cmds = vec![Command::Fleet { count: n as usize }];
        for k in 0..n {
            if k == 0 || self.rng.gen_bool(0.85) {
                cmds.push(Command::Allocate { server: sid(k), capacity: self.rng.gen_range(2_000..=60_000) });
            }
        }
        cmds
    }

    fn live_allocated(state: &CloudState) -> Vec<ServerId> {
        state.fleet.servers().iter().filter(|s| !s.is_crashed() && s.capacity() > 0).map(|s| s.id()).collect()
    }

    /// One client-side command valid on `state`.
    pub fn honest_step(&mut self, state: &CloudState) -> Command {
        let servers = Self::live_allocated(state);
        let with_blocks: Vec<ServerId> = servers
            .iter()
            .copied()
            .filter(|s| state.fleet.server(*s).unwrap().block_count() > 0)
            .collect();
        let seed = if self.rng.gen_bool(0.7) { Some(self.rng.gen()) } else { None };
        for _ in 0..8 {
            match self.rng.gen_range(0..100) {
                0..=44 => {
                    let server = servers[self.rng.gen_range(0..servers.len())];
                    let free = state.fleet.measure(server).unwrap().free;
                    if free == 0 {
                        continue;
                    }
                    let size = self.rng.gen_range(1..=free.min(MAX_BLOCK));
                    return Command::Append { server, block: self.fresh_block(), size, seed };
                }
                45..=59 if !with_blocks.is_empty() => {
                    let server = with_blocks[self.rng.gen_range(0..with_blocks.len())];
                    return Command::Delete { server, block: self.pick_block(state, server).0 };
                }
                60..=84 if !with_blocks.is_empty() => {
                    let server = with_blocks[self.rng.gen_range(0..with_blocks.len())];
                    let (block, old) = self.pick_block(state, server);
                    let free = state.fleet.measure(server).unwrap().free;
                    let new_size = if self.rng.gen_bool(0.15) { old } else { self.rng.gen_range(1..=(old + free).min(MAX_BLOCK.max(old))) };
                    return Command::Update { server, block, new_size, seed };
                }
                85..=91 => return Command::Check,
                92..=95 => return Command::RestorePoint,
                96..=99 => return Command::Audit { servers: Vec::new() },
                _ => {}
            }
        }
        Command::Check
    }

    pub fn pick_block(&mut self, state: &CloudState, server: ServerId) -> (BlockId, u64) {
        let blocks: Vec<_> = state.fleet.server(server).unwrap().blocks().map(|b| (b.id().clone(), b.size())).collect();
        blocks[self.rng.gen_range(0..blocks.len())].clone()
    }

    /// Tamper actions on `server` whose net byte effect is nonzero.
    /// Uses only blocks already on the server or fresh ids; keeps within capacity.
    pub fn size_changing_tamper(&mut self, state: &CloudState, server: ServerId) -> Vec<TamperAction> {
        let srv = state.fleet.server(server).unwrap();
        let mut free = state.fleet.measure(server).unwrap().free as i64;
        let mut blocks: Vec<(BlockId, u64)> = srv.blocks().map(|b| (b.id().clone(), b.size())).collect();
        let mut actions = Vec::new();
        let mut net: i64 = 0;
        let steps = self.rng.gen_range(1..=3);
        for _ in 0..steps {
            match self.rng.gen_range(0..3) {
                0 if !blocks.is_empty() => {
                    let i = self.rng.gen_range(0..blocks.len());
                    let (ref block, size) = blocks[i];
                    let lo = -(size as i64 - 1);
                    let hi = free.min(1024);
                    let delta = self.rng.gen_range(lo..=hi);
                    actions.push(TamperAction::Modify { server, block: block.clone(), size_delta: delta });
                    blocks[i].1 = (size as i64 + delta) as u64;
                    free -= delta;
                    net += delta;
                }
                1 if !blocks.is_empty() => {
                    let i = self.rng.gen_range(0..blocks.len());
                    let (block, size) = blocks.swap_remove(i);
                    actions.push(TamperAction::Remove { server, block });
                    free += size as i64;
                    net -= size as i64;
                }
                _ if free > 0 => {
                    let size = self.rng.gen_range(1..=free.min(512)) as u64;
                    let block = bid(&format!("evil{}", self.rng.gen::<u32>()));
                    actions.push(TamperAction::Add { server, block: block.clone(), size });
                    blocks.push((block, size));
                    free -= size as i64;
                    net += size as i64;
                }
                _ => {}
            }
        }
        if net == 0 {
            // Force a nonzero net effect.
            if free > 0 {
                actions.push(TamperAction::Add { server, block: bid(&format!("evil{}", self.rng.gen::<u32>())), size: 1 });
            } else if let Some((block, _)) = blocks.pop() {
                actions.push(TamperAction::Remove { server, block });
            }
        }
        actions
    }
}

/// Drives a session, recording every command as a scenario line.
pub struct Recorder {
    pub session: Session,
    pub commands: Vec<ScenarioCommand>,
}

impl Recorder {
    pub fn new(options: RunOptions) -> Self {
        Recorder { session: Session::new(options), commands: Vec::new() }
    }

    pub fn exec(&mut self, command: Command) {
        self.session.execute(&command).unwrap_or_else(|e| panic!("`{command}` failed: {e}"));
        self.commands.push(ScenarioCommand { line_no: self.commands.len() + 1, command });
    }

    pub fn state(&self) -> &CloudState {
        self.session.state().expect("fleet created")
    }
}

/// A full honest scenario: setup plus 1..=200 client operations, with
/// `after_each` called once every command has executed.
pub fn honest_scenario(seed: u64, options: RunOptions, mut after_each: impl FnMut(&Recorder)) -> Recorder {
    let mut gen = ScenarioGen::new(seed);
    let mut rec = Recorder::new(options);
    for cmd in gen.setup() {
        rec.exec(cmd);
        after_each(&rec);
    }
    let ops = gen.rng.gen_range(1..=MAX_OPS);
    for _ in 0..ops {
        let cmd = gen.honest_step(rec.state());
        rec.exec(cmd);
        after_each(&rec);
    }
    rec
}
