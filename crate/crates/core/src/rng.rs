//! Counter-based uniform generator used for seeded initial conditions and
//! sample points.
//!
//! Draw `i` (0-based) for seed `s` is SplitMix64 applied to the counter
//! `s + (i + 1) · 0x9E3779B97F4A7C15` (wrapping), i.e.
//!
//! ```text
//! z = s + (i + 1) * 0x9E3779B97F4A7C15
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! u = (z >> 11) * 2^-53            // in [0, 1)
//! ```
//!
//! All arithmetic is wrapping `u64`. The value for index `i` depends only on
//! `(s, i)`, so any implementation following the recipe above reproduces the
//! same initial conditions bit for bit.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform `[0, 1)` draw number `index` for `seed`.
pub fn uniform_at(seed: u64, index: u64) -> f64 {
    let z = mix(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GAMMA)));
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential view over [`uniform_at`].
#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn next_f64(&mut self) -> f64 {
        let u = uniform_at(self.seed, self.counter);
        self.counter += 1;
        u
    }

    /// Uniform draw in `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_f64()
    }
}
