//! Reproducible random streams.
//!
//! Every experiment draws from ChaCha20 (`rand_chacha::ChaCha20Rng`), seeded
//! with `seed_from_u64(seed)` and switched to a numbered stream with
//! `set_stream`. Streams with different numbers never overlap, which keeps
//! training and evaluation samples independent under a single user seed.
//!
//! Uniforms use the top 53 bits of `next_u64`, shifted half a step off zero:
//! `u = ((x >> 11) + 0.5) · 2⁻⁵³`, so `u ∈ (0, 1)`.
//!
//! Standard normals use the Box–Muller transform on two consecutive uniforms
//! `u₁, u₂`: `z₁ = √(−2 ln u₁) cos(2π u₂)`, `z₂ = √(−2 ln u₁) sin(2π u₂)`.
//! `z₁` is returned first and `z₂` is cached for the next call.
//!
//! Given (seed, stream), output is identical across platforms.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream used for training scenarios.
pub const TRAIN_STREAM: u64 = 1;
/// Stream used for out-of-sample Monte Carlo evaluation.
pub const EVAL_STREAM: u64 = 2;

#[derive(Clone, Debug)]
pub struct SampleStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl SampleStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    pub fn uniform(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * SCALE
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }
}
