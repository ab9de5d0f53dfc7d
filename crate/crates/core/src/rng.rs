//! Reproducible random streams.
//!
//! Every simulator draws from a ChaCha20 stream keyed by a 64-bit seed
//! (expanded with `rand_core`'s PCG32-based `seed_from_u64`) and a 64-bit
//! stream id, so the same `(seed, stream)` pair yields the same sequence on
//! every platform. Uniforms use the top 53 bits of a `u64` draw. Standard
//! normals come from the Box–Muller transform
//! `r = sqrt(-2 ln u1)`, `(r cos 2πu2, r sin 2πu2)`, with the second deviate
//! cached for the next call.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};

/// Stream ids used by the simulators. Keeping them distinct means that, for
/// instance, burst draws never perturb the anchor trajectory.
pub mod streams {
    pub const DYNAMICS: u64 = 0;
    pub const BURSTS: u64 = 1;
    pub const SENSORS: u64 = 2;
    pub const PROBE: u64 = 3;
}

#[derive(Clone, Debug)]
pub struct SimRng {
    inner: ChaCha20Rng,
    spare: Option<f64>,
}

impl SimRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, spare: None }
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping ln finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let phi = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * phi.sin());
        r * phi.cos()
    }

    /// Poisson draw; a zero rate always yields zero.
    pub fn poisson(&mut self, rate: f64) -> u64 {
        if rate <= 0.0 {
            return 0;
        }
        let dist = Poisson::new(rate).expect("finite positive Poisson rate");
        dist.sample(&mut self.inner) as u64
    }
}
