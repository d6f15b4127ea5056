//! Counter-based random streams.
//!
//! Every random draw in a run is taken from a stream keyed by
//! `(seed, stage, step, index)`. Particle `i` at sampler step `j` of stage `s`
//! always sees the same stream, so results do not depend on how work is split
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator handed to every per-particle or per-step stream.
pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Folded into the key so different uses of the
/// same `(stage, step, index)` never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Move = 2,
    Resample = 3,
    Merge = 4,
    Chain = 5,
    Data = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A family of streams bound to one seed and one stage identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
    stage: u64,
}

impl Streams {
    pub fn new(seed: u64, stage: u64) -> Self {
        Self { seed, stage }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stage(&self) -> u64 {
        self.stage
    }

    /// A child family, e.g. one per node of a stage.
    pub fn child(&self, sub: u64) -> Self {
        Self {
            seed: self.seed,
            stage: splitmix64(self.stage ^ splitmix64(sub.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    /// Stream for `index` at sampler `step` used for `purpose`.
    pub fn stream(&self, purpose: Purpose, step: u64, index: u64) -> StreamRng {
        let mut key = splitmix64(self.seed);
        key = splitmix64(key ^ self.stage);
        key = splitmix64(key ^ (purpose as u64));
        key = splitmix64(key ^ step);
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&key.to_le_bytes());
        bytes[8..16].copy_from_slice(&splitmix64(key).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(bytes);
        rng.set_stream(index);
        rng
    }
}
