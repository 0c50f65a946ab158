//! Counter-based random number generation.
//!
//! Scene simulation must be reproducible bit-for-bit at any worker count,
//! so instead of a sequential generator every draw is a pure function of
//! `(seed, stream, index)`. Workers can evaluate draws in any order and
//! always observe the same values. The generator is identified by
//! [`GENERATOR_ID`] in output headers; changing the mixing function is a
//! format break and must bump that id.

/// Identifier written into cube headers for reproducibility.
pub const GENERATOR_ID: &str = "splitmix-counter/1";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_MULT: u64 = 0xA076_1D64_78BD_642F;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateless keyed generator: `word(i)` is the SplitMix64 output for
/// counter `i` under a key derived from `(seed, stream)`.
#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let key = mix64(seed.wrapping_add(GOLDEN_GAMMA))
            ^ mix64(stream.wrapping_mul(STREAM_MULT).wrapping_add(GOLDEN_GAMMA));
        Self { key }
    }

    fn word(&self, index: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn uniform(&self, index: u64) -> f64 {
        (self.word(index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via Box–Muller; consumes counters
    /// `2*index` and `2*index + 1` of the underlying uniform stream.
    pub fn standard_normal(&self, index: u64) -> f64 {
        let u1 = self.uniform(index.wrapping_mul(2));
        let u2 = self.uniform(index.wrapping_mul(2).wrapping_add(1));
        // 1 - u1 lies in (0, 1], keeping the log finite.
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
