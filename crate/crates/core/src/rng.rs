//! Seeded random streams.
//!
//! Every random draw in a run comes from ChaCha20 keyed by the root seed, with
//! the 64-bit stream word selecting what the draws are for. The high 32 bits
//! hold the [`Stream`] id, the low 32 bits an optional sub-index (one per
//! sample, say), so independent consumers never share a keystream.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Name of the generator, as written into configs and reports.
pub const ALGORITHM: &str = "chacha20";

pub type RunRng = ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Parameter initialization.
    Init = 1,
    /// Batch order.
    Shuffle = 2,
    Augment = 3,
    /// Train/test split plan.
    Split = 4,
    /// Label-ratio subset.
    Label = 5,
    /// Synthetic data generation.
    Synth = 6,
}

impl Stream {
    pub fn id(self) -> u64 {
        self as u64
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> RunRng {
    sub_rng(seed, stream, 0)
}

pub fn sub_rng(seed: u64, stream: Stream, index: u32) -> RunRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((stream.id() << 32) | index as u64);
    rng
}
