//! Counter-based splittable random number streams.
//!
//! Every source of randomness in the pipeline (parameter init, data shuffling,
//! dropout masks, Monte-Carlo sampling, synthetic motion) owns its own
//! [`RngStream`], identified by a `(seed, stream id)` pair. The generator is
//! counter-based: draw `k` of a stream is a pure hash of `(seed, stream, k)`,
//! so streams can be created in any order and never interfere. Identical
//! `(seed, stream)` pairs always produce bit-identical sequences.
//!
//! The mixing function is the SplitMix64 finalizer, which passes BigCrush as
//! the core of SplitMix64 and is more than enough for simulation use.

use alloc::vec::Vec;

use crate::fmath;

/// Odd constant (2^64 / golden ratio); multiplication by it is a bijection.
const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijective avalanche mix on 64 bits.
fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic random stream addressed by `(seed, stream id)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    counter: u64,
}

impl RngStream {
    /// Opens the stream `stream` under `seed`, positioned at its first draw.
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream, counter: 0 }
    }

    /// Derives a child stream. Distinct `id`s yield distinct streams, and the
    /// derivation ignores how far this stream has been consumed.
    pub fn substream(&self, id: u64) -> RngStream {
        let child = mix(self.stream.wrapping_add(GAMMA.wrapping_mul(id.wrapping_add(1))));
        RngStream::new(self.seed, child)
    }

    /// Next raw 64-bit draw.
    pub fn next_u64(&mut self) -> u64 {
        let key = mix(self.seed ^ mix(self.stream));
        let out = mix(key.wrapping_add(GAMMA.wrapping_mul(self.counter)));
        self.counter += 1;
        out
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn next_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw via Box-Muller. No spare is cached: each call
    /// consumes exactly two uniforms, keeping the stream position a pure
    /// function of the number of calls.
    pub fn next_normal(&mut self) -> f64 {
        // 1 - u ∈ (0, 1] keeps the log argument away from zero.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = fmath::sqrt(-2.0 * fmath::ln(u1));
        r * fmath::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Uniform index in `[0, n)` by the multiply-shift reduction.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_index(i + 1);
            xs.swap(i, j);
        }
    }

    /// `n` standard normal draws.
    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_normal()).collect()
    }
}
