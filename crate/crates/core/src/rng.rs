//! Counter-addressed Gaussian streams.
//!
//! Every draw is located by `(seed, path, step, mode)`: the ChaCha key comes
//! from the seed, the stream id is the path index, and each step owns the
//! block of `modes * WORDS_PER_MODE` words starting at
//! `step * modes * WORDS_PER_MODE`, read mode by mode. A trajectory therefore
//! reads the same numbers whatever order, thread or batch it is simulated in.
//!
//! Normals come from the ziggurat sampler, which needs about two words per
//! draw; the block leaves room for more than twice that.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

/// u32 words reserved per mode and step.
pub const WORDS_PER_MODE: u128 = 16;

#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    modes: usize,
}

impl NoiseStream {
    pub fn new(seed: u64, path: u64, modes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Self { rng, modes }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Three independent standard normals for every mode of `step`, written
    /// mode-major into `out` (length `3 * modes`).
    pub fn step_normals(&mut self, step: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), 3 * self.modes);
        let pos = step as u128 * self.modes as u128 * WORDS_PER_MODE;
        self.rng.set_word_pos(pos);
        for z in out.iter_mut() {
            *z = StandardNormal.sample(&mut self.rng);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn addressable_and_order_free() {
        let mut a = NoiseStream::new(7, 3, 4);
        let mut b = NoiseStream::new(7, 3, 4);
        let mut x = vec![0.0; 12];
        let mut y = vec![0.0; 12];
        a.step_normals(5, &mut x);
        b.step_normals(2, &mut y);
        b.step_normals(5, &mut y);
        assert_eq!(x, y);
        a.step_normals(6, &mut y);
        assert_ne!(x, y);
    }

    #[test]
    fn paths_differ() {
        let mut x = vec![0.0; 6];
        let mut y = vec![0.0; 6];
        NoiseStream::new(1, 0, 2).step_normals(0, &mut x);
        NoiseStream::new(1, 1, 2).step_normals(0, &mut y);
        assert_ne!(x, y);
    }

    #[test]
    fn standard_normal_moments() {
        let mut s = NoiseStream::new(42, 0, 16);
        let mut buf = vec![0.0; 48];
        let (mut m1, mut m2, mut m4, mut n) = (0.0, 0.0, 0.0, 0.0);
        let mut cross = 0.0;
        for step in 0..4000 {
            s.step_normals(step, &mut buf);
            for c in buf.chunks_exact(3) {
                for &z in c {
                    m1 += z;
                    m2 += z * z;
                    m4 += z.powi(4);
                    n += 1.0;
                }
                cross += c[0] * c[1];
            }
        }
        let m = n / 3.0;
        assert!((m1 / n).abs() < 4.0 / n.sqrt());
        assert!((m2 / n - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
        assert!((m4 / n - 3.0).abs() < 4.0 * (96.0 / n).sqrt());
        assert!((cross / m).abs() < 4.0 / m.sqrt());
    }
}
