//! Reproducible random numbers with a fully documented algorithm.
//!
//! * integers: SplitMix64 (Steele, Lea & Flood), state advanced by
//!   `0x9E3779B97F4A7C15` and finalized with the standard 30/27/31 mix;
//! * uniforms: top 53 bits of the next integer times `2^-53`, in `[0, 1)`;
//! * normals: Box–Muller on two uniforms, `u1` mapped to `(0, 1]`, both
//!   outputs of a pair are used (cosine first, then sine);
//! * shuffles: Fisher–Yates from the back, index `floor(u * (i + 1))`.
//!
//! Any implementation following those four rules reproduces the synthetic
//! datasets, initializations and batch orders of this crate bit-for-bit.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
    spare_normal: Option<f64>,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed,
            spare_normal: None,
        }
    }

    /// Independent stream derived from `seed` and a stream key, e.g. an
    /// epoch number or a parameter-group index.
    pub fn keyed(seed: u64, key: u64) -> Self {
        let mut mixer = Self::new(seed ^ key.wrapping_add(1).wrapping_mul(GOLDEN));
        Self::new(mixer.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_f64()
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform index in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
