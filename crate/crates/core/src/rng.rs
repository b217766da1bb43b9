//! Counter-based random streams for the stochastic transforms.
//!
//! Each stream is keyed by `(seed, image_index, class_id, replicate)` and
//! produces `mix(key + n * GAMMA)` for n = 1, 2, ... where `mix` is the
//! SplitMix64 finalizer:
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! with `GAMMA = 0x9E3779B97F4A7C15`. The key is built by folding each
//! derivation input into the running hash: `h = mix(h + GAMMA ^ input)`,
//! starting from `h = mix(seed ^ DOMAIN)`. Bounded draws use Lemire's
//! multiply-shift with rejection, so they are exactly uniform.
//!
//! Streams share no state, so images can be distorted on any thread in any
//! order with identical results.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX2: u64 = 0x94D0_49BB_1331_11EB;
const DOMAIN: u64 = 0x6571_645f_7377_6170; // "eqd_swap"

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX2);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn derive(seed: u64, image_index: u64, class_id: u8, replicate: u32) -> Self {
        let mut h = mix64(seed ^ DOMAIN);
        for input in [image_index, u64::from(class_id), u64::from(replicate)] {
            h = mix64(h.wrapping_add(GAMMA) ^ input);
        }
        Self::from_key(h)
    }

    pub fn from_key(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform integer in `0..bound`. `bound` must be nonzero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        let mut m = u128::from(self.next_u64()) * u128::from(bound);
        if (m as u64) < bound {
            let threshold = bound.wrapping_neg() % bound;
            while (m as u64) < threshold {
                m = u128::from(self.next_u64()) * u128::from(bound);
            }
        }
        (m >> 64) as u64
    }
}
