//! Deterministic random number generation.
//!
//! Every random draw in the toolkit flows through [`Rng`], a SplitMix64
//! generator pinned bit-for-bit so that datasets, initializations, and batch
//! orders can be reproduced exactly in any language. The update rule is:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! return z ^ (z >> 31)
//! ```
//!
//! with all arithmetic modulo 2^64.

/// The SplitMix64 state increment. Also used by callers to derive
/// independent seed streams from a base seed.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`: the top 53 bits scaled by 2^-53.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform in `(0, 1]`: the top 53 bits plus one, scaled by 2^-53.
    /// Safe to pass to `ln`.
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform in `[-bound, bound]` as `(2u - 1) * bound` with `u` from
    /// [`Rng::next_f64`].
    pub fn next_symmetric(&mut self, bound: f64) -> f64 {
        (2.0 * self.next_f64() - 1.0) * bound
    }

    /// Uniform index in `[0, n)` by modulo reduction. The modulo bias is
    /// below 2^-50 for any `n` this toolkit uses.
    pub fn next_index(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher-Yates shuffle: for `i` from `len-1` down to 1,
    /// swap position `i` with `next_index(i + 1)`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Standard normal stream via the Box-Muller transform.
///
/// Each pair of draws consumes two uniforms `u1 in (0, 1]` and `u2 in [0, 1)`
/// and yields `r*cos(2*pi*u2)` then `r*sin(2*pi*u2)` with `r = sqrt(-2 ln u1)`.
/// Values come out strictly in that order, one pair at a time.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        GaussianStream {
            rng: Rng::new(seed),
            spare: None,
        }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.rng.next_open01();
        let u2 = self.rng.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}
