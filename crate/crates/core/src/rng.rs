//! Named random streams derived from one 64-bit seed.
//!
//! Every consumer of randomness asks for a stream by name (`"data"`,
//! `"init"`, `"shuffle"`, `"montecarlo"`, ...). Streams with different names
//! are statistically independent, and a stream never depends on how many
//! values another stream has drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSplitter {
    seed: u64,
}

impl SeedSplitter {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sub-seed for the stream `name`.
    pub fn derive(&self, name: &str) -> u64 {
        splitmix64(splitmix64(self.seed) ^ fnv1a(name.as_bytes()))
    }

    /// Sub-seed for item `index` of stream `name` (one per Monte Carlo trial).
    pub fn derive_indexed(&self, name: &str, index: u64) -> u64 {
        splitmix64(self.derive(name) ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        StreamRng::seed_from_u64(self.derive(name))
    }

    pub fn child(&self, name: &str) -> SeedSplitter {
        SeedSplitter::new(self.derive(name))
    }
}
