//! Deterministic pseudo-random number generation.
//!
//! A hand-rolled SplitMix64 stream so that every stochastic choice in the
//! crate (weight init, noise draws, dataset synthesis, shuffling) is a pure
//! function of an explicit `u64` seed. Substreams are derived by hashing
//! `(seed, label...)` tuples rather than by advancing shared state, which is
//! what makes epoch-level training resume bit-exact.

/// SplitMix64 generator. Small state, full 2^64 period, passes BigCrush.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Derive an independent substream from a seed and a label path.
    ///
    /// `derive(&[seed, epoch, step])` gives the same stream no matter what
    /// was drawn before, so training can restart at any epoch boundary.
    pub fn derive(parts: &[u64]) -> Self {
        let mut acc: u64 = 0x243f_6a88_85a3_08d3; // pi fractional bits
        for &p in parts {
            acc = mix64(acc ^ p.wrapping_mul(GOLDEN));
        }
        Rng { state: acc }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller (cosine branch only, so each draw
    /// consumes exactly two uniforms and the stream layout stays obvious).
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1], keeps ln finite
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal_scaled(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.normal()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
