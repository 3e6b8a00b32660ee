//! Identifier and logical-time newtypes shared by every module.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

/// Largest fleet the simulator will build.
pub const MAX_SERVERS: usize = 1024;

/// Longest accepted block identifier, in characters.
pub const MAX_BLOCK_ID_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("invalid server id `{0}` (expected s<k>)")]
    Server(String),
    #[error("invalid block id `{0}` (1..=64 chars of [A-Za-z0-9_-])")]
    Block(String),
}

/// Server identifier `s<k>`. Ordered by index, so `s2 < s10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(into = "String")]
pub struct ServerId(u32);

impl ServerId {
    pub fn new(index: u32) -> Self {
        ServerId(index)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl From<ServerId> for String {
    fn from(id: ServerId) -> String {
        id.to_string()
    }
}

impl FromStr for ServerId {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IdError::Server(s.to_string());
        let digits = s.strip_prefix('s').ok_or_else(bad)?;
        // Canonical decimal only: no sign, no leading zeros.
        if digits.is_empty()
            || !digits.bytes().all(|b| b.is_ascii_digit())
            || (digits.len() > 1 && digits.starts_with('0'))
        {
            return Err(bad());
        }
        digits.parse::<u32>().map(ServerId).map_err(|_| bad())
    }
}

/// Block identifier: 1 to 64 characters from `[A-Za-z0-9_-]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct BlockId(String);

impl BlockId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Placeholder carried by records that do not name a block (allocation).
    pub fn none() -> BlockId {
        BlockId("-".to_string())
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for BlockId {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let valid = !s.is_empty()
            && s.len() <= MAX_BLOCK_ID_LEN
            && s
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
        if valid {
            Ok(BlockId(s.to_string()))
        } else {
            Err(IdError::Block(s.to_string()))
        }
    }
}

impl TryFrom<&str> for BlockId {
    type Error = IdError;

    fn try_from(s: &str) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Logical timestamp. Tick 0 is the state before any recorded operation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Tick(pub u64);

impl Tick {
    pub const ZERO: Tick = Tick(0);

    pub fn next(self) -> Tick {
        Tick(self.0 + 1)
    }
}

impl fmt::Display for Tick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
