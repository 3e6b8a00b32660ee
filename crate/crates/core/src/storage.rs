//! The simulated cloud: servers with CSP-allocated capacity, their block
//! tables, and raw space measurement.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::ids::{BlockId, ServerId, MAX_SERVERS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StorageError {
    #[error("fleet size {0} out of range 1..={MAX_SERVERS}")]
    FleetSize(usize),
    #[error("unknown server {0}")]
    UnknownServer(ServerId),
    #[error("server {0} is crashed")]
    Crashed(ServerId),
    #[error("server {0} is not crashed")]
    NotCrashed(ServerId),
    #[error("measurement unavailable: server {0} is crashed")]
    MeasurementUnavailable(ServerId),
    #[error("server {0} holds data and cannot be reallocated")]
    NotEmpty(ServerId),
    #[error("capacity must be at least 1 byte")]
    ZeroCapacity,
    #[error("zero-size blocks are not allowed")]
    ZeroSize,
    #[error("size {0} does not fit in memory")]
    TooLarge(u64),
    #[error("block {block} already exists on {server}")]
    DuplicateBlock { server: ServerId, block: BlockId },
    #[error("block {block} not found on {server}")]
    UnknownBlock { server: ServerId, block: BlockId },
    #[error("capacity exceeded on {server}: {needed} bytes needed, {free} free")]
    CapacityExceeded { server: ServerId, needed: u64, free: u64 },
}

/// A stored unit. The payload is shared and never mutated in place, so
/// cloning a block (or a whole server) is cheap and snapshots stay exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataBlock {
    id: BlockId,
    payload: Arc<[u8]>,
}

impl DataBlock {
    pub fn new(id: BlockId, payload: Vec<u8>) -> Result<Self, StorageError> {
        if payload.is_empty() {
            return Err(StorageError::ZeroSize);
        }
        Ok(DataBlock { id, payload: payload.into() })
    }

    pub fn id(&self) -> &BlockId {
        &self.id
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn size(&self) -> u64 {
        self.payload.len() as u64
    }
}

/// Occupancy of one server as the server itself reports it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpaceMeasurement {
    pub server_id: ServerId,
    pub used: u64,
    pub free: u64,
    pub capacity: u64,
}

impl SpaceMeasurement {
    /// The empty state: nothing stored, all capacity free.
    pub fn is_empty(&self) -> bool {
        self.used == 0 && self.free == self.capacity
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerState {
    id: ServerId,
    capacity: u64,
    blocks: BTreeMap<BlockId, DataBlock>,
    crashed: bool,
}

impl ServerState {
    fn new(id: ServerId) -> Self {
        ServerState { id, capacity: 0, blocks: BTreeMap::new(), crashed: false }
    }

    pub fn id(&self) -> ServerId {
        self.id
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed
    }

    pub fn blocks(&self) -> impl Iterator<Item = &DataBlock> {
        self.blocks.values()
    }

    pub fn block(&self, id: &BlockId) -> Option<&DataBlock> {
        self.blocks.get(id)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Bytes physically present, regardless of crash state.
    fn stored_bytes(&self) -> u64 {
        self.blocks.values().map(DataBlock::size).sum()
    }

    pub fn measure(&self) -> Result<SpaceMeasurement, StorageError> {
        if self.crashed {
            return Err(StorageError::MeasurementUnavailable(self.id));
        }
        let used = self.stored_bytes();
        Ok(SpaceMeasurement {
            server_id: self.id,
            used,
            free: self.capacity - used,
            capacity: self.capacity,
        })
    }

    fn ensure_live(&self) -> Result<(), StorageError> {
        if self.crashed {
            Err(StorageError::Crashed(self.id))
        } else {
            Ok(())
        }
    }

    fn allocate(&mut self, capacity: u64) -> Result<(), StorageError> {
        self.ensure_live()?;
        if capacity == 0 {
            return Err(StorageError::ZeroCapacity);
        }
        if !self.blocks.is_empty() {
            return Err(StorageError::NotEmpty(self.id));
        }
        self.capacity = capacity;
        Ok(())
    }

    fn fits(&self, removed: u64, added: u64) -> Result<(), StorageError> {
        let free = self.capacity - self.stored_bytes() + removed;
        if added > free {
            return Err(StorageError::CapacityExceeded { server: self.id, needed: added, free });
        }
        Ok(())
    }

    /// Stores a new block after checking id uniqueness and capacity.
    pub(crate) fn insert(&mut self, block: DataBlock) -> Result<(), StorageError> {
        self.ensure_live()?;
        if self.blocks.contains_key(block.id()) {
            return Err(StorageError::DuplicateBlock { server: self.id, block: block.id().clone() });
        }
        self.fits(0, block.size())?;
        self.blocks.insert(block.id().clone(), block);
        Ok(())
    }

    /// Replaces an existing block's payload, returning the old block.
    pub(crate) fn replace(&mut self, block: DataBlock) -> Result<DataBlock, StorageError> {
        self.ensure_live()?;
        let old_size = self
            .blocks
            .get(block.id())
            .ok_or_else(|| StorageError::UnknownBlock { server: self.id, block: block.id().clone() })?
            .size();
        self.fits(old_size, block.size())?;
        Ok(self.blocks.insert(block.id().clone(), block).expect("checked above"))
    }

    pub(crate) fn remove(&mut self, id: &BlockId) -> Result<DataBlock, StorageError> {
        self.ensure_live()?;
        self.blocks
            .remove(id)
            .ok_or_else(|| StorageError::UnknownBlock { server: self.id, block: id.clone() })
    }

    /// Marks the server failed. Its blocks are lost.
    pub(crate) fn crash(&mut self) -> Result<(), StorageError> {
        self.ensure_live()?;
        self.crashed = true;
        self.blocks.clear();
        Ok(())
    }

    /// Copy suitable for a restore point: same data, crash flag cleared.
    pub(crate) fn snapshot(&self) -> ServerState {
        ServerState { crashed: false, ..self.clone() }
    }
}

/// Ordered collection of servers `s0..s{count-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fleet {
    servers: Vec<ServerState>,
}

impl Fleet {
    pub fn new(count: usize) -> Result<Self, StorageError> {
        if !(1..=MAX_SERVERS).contains(&count) {
            return Err(StorageError::FleetSize(count));
        }
        let servers = (0..count as u32).map(|k| ServerState::new(ServerId::new(k))).collect();
        Ok(Fleet { servers })
    }

    pub fn count(&self) -> usize {
        self.servers.len()
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn server_ids(&self) -> impl Iterator<Item = ServerId> + '_ {
        self.servers.iter().map(ServerState::id)
    }

    pub fn contains(&self, id: ServerId) -> bool {
        id.index() < self.servers.len()
    }

    pub fn server(&self, id: ServerId) -> Result<&ServerState, StorageError> {
        self.servers.get(id.index()).ok_or(StorageError::UnknownServer(id))
    }

    pub(crate) fn server_mut(&mut self, id: ServerId) -> Result<&mut ServerState, StorageError> {
        self.servers.get_mut(id.index()).ok_or(StorageError::UnknownServer(id))
    }

    /// Sets the capacity of an empty, live server.
    pub fn allocate(&mut self, id: ServerId, capacity: u64) -> Result<(), StorageError> {
        self.server_mut(id)?.allocate(capacity)
    }

    pub fn measure(&self, id: ServerId) -> Result<SpaceMeasurement, StorageError> {
        self.server(id)?.measure()
    }

    /// Server-reported occupancy of every server, with no access to content.
    pub fn occupancy(&self) -> FleetOccupancy {
        FleetOccupancy {
            entries: self.servers.iter().map(|s| (s.id(), s.measure().ok())).collect(),
        }
    }

    pub(crate) fn replace_server(&mut self, state: ServerState) -> Result<(), StorageError> {
        let slot = self.server_mut(state.id())?;
        *slot = state;
        Ok(())
    }
}

/// What servers report about themselves: used/free per server, or nothing
/// for a crashed server. Carries no payload bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FleetOccupancy {
    entries: Vec<(ServerId, Option<SpaceMeasurement>)>,
}

impl FleetOccupancy {
    pub fn entries(&self) -> &[(ServerId, Option<SpaceMeasurement>)] {
        &self.entries
    }

    pub fn get(&self, id: ServerId) -> Option<Option<SpaceMeasurement>> {
        self.entries.iter().find(|(s, _)| *s == id).map(|(_, m)| *m)
    }
}
