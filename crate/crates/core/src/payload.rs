//! Deterministic payload bytes.
//!
//! Payloads come from a 64-bit linear congruential recurrence so that a
//! scenario replays bit-identically on any platform:
//!
//! ```text
//! x_0     = seed
//! x_{j+1} = 6364136223846793005 * x_j + 1442695040888963407   (mod 2^64)
//! byte k  = x_{k+1} >> 56
//! ```

use crate::storage::StorageError;

const MULTIPLIER: u64 = 6_364_136_223_846_793_005;
const INCREMENT: u64 = 1_442_695_040_888_963_407;

fn step(x: u64) -> u64 {
    x.wrapping_mul(MULTIPLIER).wrapping_add(INCREMENT)
}

/// Generates `size` payload bytes from `seed`.
pub fn generate_payload(seed: u64, size: u64) -> Result<Vec<u8>, StorageError> {
    if size == 0 {
        return Err(StorageError::ZeroSize);
    }
    let len = usize::try_from(size).map_err(|_| StorageError::TooLarge(size))?;
    let mut out = Vec::with_capacity(len);
    let mut x = seed;
    for _ in 0..len {
        x = step(x);
        out.push((x >> 56) as u8);
    }
    Ok(out)
}

/// A stream of 64-bit seeds driven by the same recurrence.
///
/// Each draw returns the full next state. Used to derive default client
/// seeds and adversary seeds from a single run seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedStream {
    state: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream { state: seed }
    }

    pub fn next_seed(&mut self) -> u64 {
        self.state = step(self.state);
        self.state
    }
}
