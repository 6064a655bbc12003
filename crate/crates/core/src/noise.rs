//! Counter-addressed Brownian increments.
//!
//! Increment `k` of stream `(seed, stream_id)` is drawn from ChaCha8 words
//! `4k..4k+4` of that stream, so it is a pure function of
//! `(seed, stream_id, k)` no matter how many trajectories run or in which
//! order.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const WORDS_PER_DRAW: u128 = 4;

#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    stream_id: u64,
    dt: f64,
    sqrt_dt: f64,
    cursor: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream_id: u64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("dt must be positive, got {dt}"),
            });
        }
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_id);
        Ok(Self {
            seed,
            stream_id,
            dt,
            sqrt_dt: dt.sqrt(),
            cursor: 0,
            rng,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// Reposition so the next draw is increment `cursor`.
    pub fn seek(&mut self, cursor: u64) {
        self.rng.set_word_pos(cursor as u128 * WORDS_PER_DRAW);
        self.cursor = cursor;
    }

    /// Standard normal variate for the current cursor (Box–Muller, cosine branch).
    pub fn next_standard_normal(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        self.cursor += 1;
        // a' in (0, 1], b' in [0, 1)
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Brownian increment `ΔW ~ N(0, dt)`.
    pub fn next_increment(&mut self) -> f64 {
        self.sqrt_dt * self.next_standard_normal()
    }
}

impl Iterator for NoiseStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_increment())
    }
}
