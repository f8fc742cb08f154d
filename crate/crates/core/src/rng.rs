//! Counter-style seed derivation.
//!
//! Every random quantity in the crate is drawn from a [`Substream`] addressed
//! by a path of integer tags below a root seed, e.g. `root / REPEAT / 7 /
//! CHAIN / 2`. Two substreams with different paths are statistically
//! independent, and a given path always yields the same stream, so results do
//! not depend on the order in which parallel jobs are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub mod tag {
    pub const INIT: u64 = 1;
    pub const GENERATE: u64 = 2;
    pub const THETA: u64 = 3;
    pub const REPEAT: u64 = 4;
    pub const COEFFICIENTS: u64 = 5;
    pub const CHAIN: u64 = 6;
    pub const PREDICTIVE: u64 = 7;
    pub const HELDOUT: u64 = 8;
    pub const SEARCH_K: u64 = 9;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Substream {
    key: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Substream {
    pub fn new(seed: u64) -> Self {
        Substream {
            key: splitmix64(seed),
        }
    }

    pub fn child(&self, tag: u64) -> Self {
        Substream {
            key: splitmix64(self.key ^ splitmix64(tag.wrapping_add(0xA076_1D64_78BD_642F))),
        }
    }

    /// Shorthand for `self.child(tag).child(index)`.
    pub fn at(&self, tag: u64, index: u64) -> Self {
        self.child(tag).child(index)
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}
