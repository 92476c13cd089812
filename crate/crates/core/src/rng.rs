//! Counter-based splittable PRNG.
//!
//! Reproducibility across runs, platforms and process layouts is a hard
//! requirement here, and it is much easier to audit with a *stateless* core:
//! output `i` of a stream is a pure function `mix(seed + i * GAMMA)` of the
//! seed and the draw index (the SplitMix64 construction). That buys three
//! things the usual stateful generators make awkward:
//!
//! * independent streams by key — `derive_seed(seed, tag)` gives every scene,
//!   tick and subsystem its own stream, so inserting an extra draw in one
//!   place cannot shift the noise consumed somewhere else;
//! * trivial serialization — a stream is two `u64`s;
//! * bit-identical floats everywhere — `u64 -> f64` conversion is explicit,
//!   and every downstream distribution (uniform, normal, Bernoulli) is built
//!   only from that conversion and `libm`-free arithmetic.
//!
//! The float path uses the standard 53-bit construction `(x >> 11) * 2^-53`,
//! uniform on [0, 1). Normals come from Box-Muller with the first uniform
//! mapped into (0, 1] so the logarithm never sees zero.

/// Weyl increment from SplitMix64 (odd, near 2^64 / golden ratio).
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// 2^-53, the spacing of the uniform grid produced by [`Rng::next_f64`].
const F64_EPS: f64 = 1.0 / (1u64 << 53) as f64;

/// SplitMix64 finalizer: an invertible avalanche mix of a 64-bit word.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of an independent child stream from `(seed, tag)`.
///
/// Tags are free-form: scene indices, tick numbers, or one of the fixed
/// subsystem tags the harness defines. Both inputs go through the avalanche
/// mix so that related parents/tags (e.g. consecutive tick numbers) land on
/// unrelated streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag.wrapping_add(GOLDEN_GAMMA)))
}

/// A single pseudo-random stream: a seed plus a draw counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    /// Opens the stream identified by `seed` at its first draw.
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    /// Opens the child stream `(self.seed, tag)`; `self` is left untouched.
    pub fn split(&self, tag: u64) -> Self {
        Rng::new(derive_seed(self.seed, tag))
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform on [0, 1) with 53 significant bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * F64_EPS
    }

    /// Uniform on [lo, hi). `lo` must be <= `hi`; equal bounds return `lo`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo <= hi, "range_f64 bounds out of order");
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer on [0, n) via the widening multiply-shift reduction
    /// (no modulo bias worth caring about at these stream lengths; the map is
    /// exactly uniform when n divides 2^64 and within 2^-64 otherwise).
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0, "below(0) is meaningless");
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform integer on [lo, hi] (inclusive bounds).
    pub fn range_u64(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi, "range_u64 bounds out of order");
        lo + self.below(hi - lo + 1)
    }

    /// Standard normal deviate (Box-Muller, cosine branch).
    pub fn next_normal(&mut self) -> f64 {
        // u1 in (0, 1]: shift the 53-bit integer up by one grid step so
        // ln(u1) is finite; u2 in [0, 1).
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * F64_EPS;
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Bernoulli trial; `p` outside [0, 1] behaves as its clamp.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}
