//! Deterministic, labelled random streams.
//!
//! Algorithm (version 1): the 64-bit seed initializes a ChaCha12 generator via
//! `SeedableRng::seed_from_u64` (PCG32 key expansion, as specified by
//! `rand_core`), and the stream label selects the ChaCha stream id through a
//! 64-bit FNV-1a hash of its UTF-8 bytes. Gaussian samples use the ziggurat
//! sampler of `rand_distr::StandardNormal`. ChaCha output is defined
//! independently of platform endianness, so a (seed, label) pair yields the
//! same sequence everywhere. Changing any of these choices must bump
//! [`STREAM_ALGORITHM`].

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub const STREAM_ALGORITHM: &str = "chacha12-fnv1a-ziggurat/1";

/// Stream labels used by the simulator. One per noise source.
pub mod labels {
    pub const VCO_JITTER: &str = "vco.jitter";
    pub const REF_JITTER: &str = "ref.jitter";
    pub const SUPPLY_NOISE: &str = "supply.noise";
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// A single-owner source of uniform and Gaussian samples.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha12Rng,
}

impl RandomStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a64(label.as_bytes()));
        Self { rng }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard normal.
    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Convenience constructor matching the stream contract.
pub fn random_stream(seed: u64, label: &str) -> RandomStream {
    RandomStream::new(seed, label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_label_repeat() {
        let mut a = random_stream(42, "vco.jitter");
        let mut b = random_stream(42, "vco.jitter");
        for _ in 0..1000 {
            assert_eq!(a.gaussian().to_bits(), b.gaussian().to_bits());
        }
    }

    #[test]
    fn labels_are_uncorrelated() {
        let n = 100_000;
        let mut a = random_stream(7, labels::VCO_JITTER);
        let mut b = random_stream(7, labels::SUPPLY_NOISE);
        let xs: Vec<f64> = (0..n).map(|_| a.gaussian()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.gaussian()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!(r.abs() < 0.05, "correlation {r}");
    }

    #[test]
    fn gaussian_mean_within_bound() {
        let n = 100_000;
        let mut s = random_stream(1, "ref.jitter");
        let mean = (0..n).map(|_| s.gaussian()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut s = random_stream(3, "x");
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = random_stream(1, "x");
        let mut b = random_stream(2, "x");
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
