use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Portable seeded generator used everywhere randomness enters the simulation.
///
/// xoshiro256++ seeded through splitmix64, so a given seed produces the same
/// stream on every platform.
pub type SimRng = Xoshiro256PlusPlus;

pub fn sim_rng(seed: u64) -> SimRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Stationary i.i.d. model of the message-loop sampling interval.
///
/// Draws are uniform on `[delta_nom·(1−jitter), delta_nom·(1+jitter))`.
#[derive(Debug, Clone)]
pub struct SamplingProcess {
    delta_nom: f64,
    jitter: f64,
    seed: u64,
    rng: SimRng,
}

impl SamplingProcess {
    pub const DEFAULT_DELTA: f64 = 0.02;
    pub const DEFAULT_JITTER: f64 = 0.2;

    /// Panics unless `delta_nom > 0` and `0 <= jitter < 1`.
    pub fn new(delta_nom: f64, jitter: f64, seed: u64) -> Self {
        assert!(delta_nom > 0.0 && delta_nom.is_finite(), "delta_nom must be positive");
        assert!((0.0..1.0).contains(&jitter), "jitter must lie in [0, 1)");
        Self { delta_nom, jitter, seed, rng: sim_rng(seed) }
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self::new(Self::DEFAULT_DELTA, Self::DEFAULT_JITTER, seed)
    }

    pub fn delta_nom(&self) -> f64 {
        self.delta_nom
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sample(&mut self) -> f64 {
        let unit: f64 = self.rng.gen();
        self.delta_nom * (1.0 + self.jitter * (2.0 * unit - 1.0))
    }
}

impl Iterator for SamplingProcess {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.sample())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_jitter_is_exact() {
        let mut p = SamplingProcess::new(0.02, 0.0, 3);
        for _ in 0..1000 {
            assert_eq!(p.sample(), 0.02);
        }
    }

    #[test]
    fn draws_stay_in_band() {
        let mut p = SamplingProcess::new(0.02, 0.2, 11);
        for _ in 0..10_000 {
            let d = p.sample();
            assert!((0.016..=0.024).contains(&d), "{d}");
        }
    }

    #[test]
    fn empirical_mean_seed_7() {
        let p = SamplingProcess::new(0.02, 0.2, 7);
        let mean = p.take(10_000).sum::<f64>() / 10_000.0;
        assert!((mean - 0.02).abs() < 2e-4, "mean {mean}");
    }

    #[test]
    fn windowed_means_are_stationary() {
        let p = SamplingProcess::with_defaults(1234);
        let draws: Vec<f64> = p.take(20_000).collect();
        let means: Vec<f64> = draws.chunks(1000).map(|w| w.iter().sum::<f64>() / 1000.0).collect();
        let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 0.05 * 0.02, "spread {}", hi - lo);
    }

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<f64> = SamplingProcess::with_defaults(99).take(500).collect();
        let b: Vec<f64> = SamplingProcess::with_defaults(99).take(500).collect();
        assert_eq!(a, b);
    }

    #[test]
    #[should_panic]
    fn rejects_unit_jitter() {
        SamplingProcess::new(0.02, 1.0, 0);
    }
}
