//! Reproducible random streams.
//!
//! Every Monte Carlo run gets its own ChaCha stream addressed by
//! `(master seed, run index)`, so results do not depend on which thread
//! executes which run.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Generator behind every stream.
pub type Rng = ChaCha8Rng;

/// Independent stream `index` under `master`.
pub fn stream(master: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Uniform on `[0, 1)` with 53 random bits.
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal variates by Box–Muller, cached in pairs.
#[derive(Debug, Clone)]
pub struct Normals<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> Normals<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping the logarithm finite
        let u1 = 1.0 - uniform(&mut self.rng);
        let u2 = uniform(&mut self.rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}
