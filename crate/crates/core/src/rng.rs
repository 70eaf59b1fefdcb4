//! Counter-based random streams.
//!
//! A stream is a ChaCha20 generator whose 256-bit key is the little-endian
//! concatenation of `(base_seed, grid_id, replication, role)`; its block
//! counter starts at zero. Every replication therefore draws from its own
//! keyed stream, and the draws do not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// What a stream is used for within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    Generate = 1,
    Contaminate = 2,
    SingleChoice = 3,
    Optimizer = 4,
}

pub fn stream_rng(base_seed: u64, grid_id: u64, replication: u64, role: StreamRole) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key
        .chunks_exact_mut(8)
        .zip([base_seed, grid_id, replication, role as u64])
    {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha20Rng::from_seed(key)
}
