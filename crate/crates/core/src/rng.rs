//! Per-replica random streams.
//!
//! Every replica draws from its own ChaCha8 stream. ChaCha is a counter-based
//! generator: the 64-bit key comes from the master seed and the replica index
//! selects the stream, so replica `i` sees the same numbers no matter how many
//! workers run or in which order replicas are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The generator used by every simulation in the crate.
pub type SimRng = ChaCha8Rng;

/// Seed record for one replica: the master seed and the stream index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub master: u64,
    pub stream: u64,
}

impl RngSeed {
    pub const fn new(master: u64, stream: u64) -> Self {
        Self { master, stream }
    }

    /// Builds the generator for this seed, positioned at the start of its stream.
    pub fn rng(&self) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }

    /// Seed of replica `index` under the same master.
    pub const fn replica(&self, index: u64) -> Self {
        Self::new(self.master, index)
    }
}

/// SplitMix64 finalizer.
pub const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent master seed for a sub-experiment from a parent seed
/// and a path of labels (study tag, grid index, ...).
pub fn derive_master(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(parent), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

/// Stable 64-bit tag for a string label.
pub fn label_tag(label: &str) -> u64 {
    // FNV-1a
    label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
