//! Reproducible random streams.
//!
//! A stream is ChaCha8 keyed by the 64-bit master seed (expanded with the
//! generator's own `seed_from_u64`) and positioned on stream number
//! `replicate`. Both steps are defined by the ChaCha specification, so a
//! `(master, replicate)` pair yields the same numbers on every platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master: u64,
    pub replicate: u64,
}

impl SeedSpec {
    pub fn new(master: u64, replicate: u64) -> Self {
        SeedSpec { master, replicate }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.replicate);
        rng
    }

    /// The same replicate under an independent master seed, for auxiliary
    /// simulations that must not share draws with the main one.
    pub fn derive(&self, tag: u64) -> SeedSpec {
        SeedSpec {
            master: splitmix64(self.master ^ splitmix64(tag)),
            replicate: self.replicate,
        }
    }

    pub fn with_replicate(&self, replicate: u64) -> SeedSpec {
        SeedSpec {
            master: self.master,
            replicate,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
