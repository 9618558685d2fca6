//! Deterministic pseudo-random generation.
//!
//! Everything stochastic in this crate (simulation draws, FastICA restarts)
//! goes through [`Rng`], a self-contained xoshiro256++ generator. Runs are
//! reproducible bit-for-bit from a single `u64` seed, and independent
//! sub-streams can be derived for per-unit work so results do not depend on
//! the order units are processed in.

use crate::flt;

/// xoshiro256++ generator seeded through SplitMix64.
#[derive(Debug, Clone)]
pub struct Rng {
    state: [u64; 4],
    spare_normal: Option<f64>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rotl(x: u64, k: u32) -> u64 {
    x.rotate_left(k)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng {
            state,
            spare_normal: None,
        }
    }

    /// Derive an independent generator for a tagged sub-stream.
    ///
    /// The derivation only depends on `(seed used for self, tag)` order of
    /// calls, never on how much the parent stream has been consumed, so
    /// per-unit streams stay stable when unrelated draws are added elsewhere.
    pub fn derive(seed: u64, tag: u64) -> Self {
        let mut sm = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        // Decorrelate nearby tags before seeding the main state.
        let mixed = splitmix64(&mut sm);
        Rng::new(mixed)
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = rotl(s[0].wrapping_add(s[3]), 23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn uniform_usize(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller (the second draw is cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log stays finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = flt::sqrt(-2.0 * flt::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare_normal = Some(r * flt::sin(theta));
        r * flt::cos(theta)
    }

    pub fn normal_scaled(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.normal()
    }

    /// Gaussian draw clamped into `mean ± n_sd·sd`.
    pub fn normal_clipped(&mut self, mean: f64, sd: f64, n_sd: f64) -> f64 {
        let z = self.normal().clamp(-n_sd, n_sd);
        mean + sd * z
    }

    /// Random unit vector of the given dimension.
    pub fn unit_vector(&mut self, dim: usize) -> alloc::vec::Vec<f64> {
        use alloc::vec::Vec;
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let norm = flt::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}
