//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`). A
//! 64-bit seed is expanded to the 256-bit ChaCha key with
//! `SeedableRng::seed_from_u64`, and the 64-bit ChaCha stream id selects one
//! of several independent keystreams under that key. The keystream is
//! specified bit-for-bit, so a seed reproduces the same numbers on every
//! platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent substreams of one trial seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Data = 4,
    Sampling = 5,
}

/// Generator for substream `stream` of `seed`.
pub fn stream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Generator for a plain seed (stream 0), used by tests and examples.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
