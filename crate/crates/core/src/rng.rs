//! Deterministic counter-based random number generation.
//!
//! Every stochastic component of the crate (simulators, Monte-Carlo
//! likelihood draws, parameter initialization, batch shuffling) draws from
//! [`CounterRng`], a counter-based view of SplitMix64. The generator is
//! fully specified here so a reimplementation in any language reproduces
//! the exact streams:
//!
//! ```text
//! output_i = mix64(seed + i · 0x9E3779B97F4A7C15)        (i = 1, 2, ...)
//!
//! mix64(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!           z ^= z >> 27; z *= 0x94D049BB133111EB;
//!           z ^= z >> 31; return z
//! ```
//!
//! All arithmetic is wrapping 64-bit. Because the state is `seed + i·γ`,
//! the generator is a pure function of (seed, counter): streams can be
//! split, replayed, or jumped by setting the counter directly.
//!
//! Derived quantities are likewise pinned down:
//! - `uniform`: `(output >> 11) · 2⁻⁵³` — a double in [0, 1).
//! - `exponential(rate)`: inverse CDF, `−ln(1 − u)/rate`.
//! - `normal`: Box–Muller, `√(−2 ln u₁) · cos(2π u₂)` with `u₁ ∈ (0, 1]`.
//! - `below(n)`: rejection sampling from the largest multiple of `n`.
//! - `substream(s)`: a child generator seeded with
//!   `mix64(seed ^ mix64(s + 0xA0761D6478BD642F))`, used to hand
//!   independent streams to parallel workers without sharing state.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_SALT: u64 = 0xA076_1D64_78BD_642F;

/// SplitMix64 finalizer; the single mixing function behind every stream.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

/// Counter-based SplitMix64 stream. Cheap to copy; copying forks the
/// stream at the current position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng { seed, counter: 0 }
    }

    /// Child stream `s`, statistically independent of the parent and of
    /// every other substream index. Documented formula (see module docs).
    pub fn substream(&self, s: u64) -> CounterRng {
        CounterRng {
            seed: mix64(self.seed ^ mix64(s.wrapping_add(STREAM_SALT))),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform double in [0, 1), 53 random mantissa bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Exponential variate with the given rate, by inverse CDF.
    /// `u ∈ [0, 1)` so `1 − u ∈ (0, 1]` and the logarithm is finite.
    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        debug_assert!(rate > 0.0);
        -(1.0 - self.uniform()).ln() / rate
    }

    /// Normal variate via Box–Muller. Consumes exactly two uniforms.
    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1], keeps the log finite
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        mean + sd * r * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in [0, n), exact (rejection sampling, no modulo bias).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        let threshold = (u64::MAX / n) * n;
        loop {
            let x = self.next_u64();
            if x < threshold {
                return x % n;
            }
        }
    }

    /// In-place Fisher–Yates shuffle (descending index, swap with `below`).
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}
