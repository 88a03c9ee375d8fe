//! Counter-based Gaussian streams keyed by `(seed, stream, step)`.

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngConfig {
    pub seed: u64,
    pub stream: u64,
}

impl RngConfig {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// The `index`-th child stream.
    ///
    /// Children share a key derived from the parent and use `index` as their
    /// ChaCha stream id, so `child(i)` is `split_streams(self, n)[i]` for any
    /// `n > i`.
    pub fn child(&self, index: u64) -> RngConfig {
        RngConfig {
            seed: self.child_key(),
            stream: index,
        }
    }

    fn child_key(&self) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        // Block 2^60 is never reached by path sampling.
        rng.set_word_pos(1u128 << 64);
        rng.next_u64()
    }
}

/// Derive `n` independent child streams.
pub fn split_streams(parent: RngConfig, n: usize) -> Result<Vec<RngConfig>> {
    if n == 0 {
        return domain("split_streams needs n >= 1");
    }
    let key = parent.child_key();
    Ok((0..n as u64)
        .map(|i| RngConfig {
            seed: key,
            stream: i,
        })
        .collect())
}

/// Standard normal variates, a fixed number of 32-bit words per step.
pub struct GaussianStream {
    rng: ChaCha8Rng,
    dim: usize,
}

impl GaussianStream {
    /// A stream producing `dim` normals per step.
    pub fn new(config: RngConfig, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(config.stream);
        Self { rng, dim }
    }

    /// 32-bit words consumed per step: one Box-Muller pair uses two u64.
    pub fn words_per_step(&self) -> u128 {
        4 * self.dim.div_ceil(2) as u128
    }

    /// Jump to the start of `step`.
    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(step as u128 * self.words_per_step());
    }

    /// Fill `out[..dim]` with the next step's normals.
    #[inline]
    pub fn next_step(&mut self, out: &mut [f64]) {
        let mut i = 0;
        while i < self.dim {
            let (a, b) = self.pair();
            out[i] = a;
            if i + 1 < self.dim {
                out[i + 1] = b;
            }
            i += 2;
        }
    }

    #[inline]
    fn pair(&mut self) -> (f64, f64) {
        // u1 in (0, 1], u2 in [0, 1).
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let radius = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        (radius * c, radius * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic() {
        let a = split_streams(RngConfig::new(1, 0), 2).unwrap();
        let b = split_streams(RngConfig::new(1, 0), 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            split_streams(RngConfig::new(1, 0), 1).unwrap()[0],
            RngConfig::new(1, 0).child(0)
        );
        assert!(split_streams(RngConfig::new(1, 0), 0).is_err());
    }

    #[test]
    fn seek_matches_sequential_reading() {
        for dim in 1..=4 {
            let cfg = RngConfig::new(9, 3);
            let mut seq = GaussianStream::new(cfg, dim);
            let mut buf = [0.0; 4];
            let mut last = [0.0; 4];
            for _ in 0..7 {
                seq.next_step(&mut buf);
            }
            seq.next_step(&mut last);
            let mut jump = GaussianStream::new(cfg, dim);
            jump.seek(7);
            jump.next_step(&mut buf);
            assert_eq!(buf[..dim], last[..dim]);
        }
    }

    #[test]
    fn moments_are_standard() {
        let mut s = GaussianStream::new(RngConfig::new(5, 0), 2);
        let n = 200_000;
        let (mut m1, mut m2, mut m4) = (0.0, 0.0, 0.0);
        let mut buf = [0.0; 2];
        for _ in 0..n {
            s.next_step(&mut buf);
            for &z in &buf {
                m1 += z;
                m2 += z * z;
                m4 += z.powi(4);
            }
        }
        let n = 2.0 * n as f64;
        assert!((m1 / n).abs() < 0.01);
        assert!((m2 / n - 1.0).abs() < 0.01);
        assert!((m4 / n - 3.0).abs() < 0.05);
    }
}
