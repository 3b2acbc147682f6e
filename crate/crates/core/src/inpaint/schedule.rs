//! Discrete diffusion noise schedule and forward noising.

use serde::{Deserialize, Serialize};

use super::latent::Latent;
use crate::error::{Error, Result};

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Linear-beta schedule. Timesteps run `1..=T`; `alpha_bar(t)` is the
/// product of `1 - beta` over `1..=t`, with `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    /// When false every reverse step is deterministic.
    pub stochastic: bool,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("valid default schedule")
    }
}

impl NoiseSchedule {
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "invalid schedule: T={timesteps}, beta in [{beta_start}, {beta_end}]"
            )));
        }
        let betas: Vec<f64> = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(timesteps + 1);
        alpha_bars.push(1.0);
        for b in &betas {
            let last = *alpha_bars.last().expect("seeded with 1");
            alpha_bars.push(last * (1.0 - b));
        }
        Ok(NoiseSchedule {
            betas,
            alpha_bars,
            stochastic: true,
        })
    }

    /// Same schedule with the reverse-step noise switched off.
    pub fn deterministic(mut self) -> Self {
        self.stochastic = false;
        self
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// `sqrt(beta_t)`, or 0 for a deterministic schedule.
    pub fn sigma(&self, t: usize) -> f64 {
        if self.stochastic {
            self.beta(t).sqrt()
        } else {
            0.0
        }
    }

    pub(crate) fn check(&self, t: usize) -> Result<()> {
        if t > self.timesteps() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.timesteps(),
            });
        }
        Ok(())
    }
}

/// `sqrt(ᾱ_t) z0 + sqrt(1 - ᾱ_t) ε`; `t = 0` returns `z0`.
pub fn forward_noise(z0: &Latent, t: usize, schedule: &NoiseSchedule, eps: &Latent) -> Result<Latent> {
    schedule.check(t)?;
    z0.check_same_shape(eps)?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z0.zip_map(eps, |z, e| a * z + b * e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn alpha_bar_is_strictly_decreasing() {
        let s = NoiseSchedule::default();
        assert_eq!(s.timesteps(), 1000);
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
        }
        assert_relative_eq!(s.beta(1), 1e-4);
        assert_relative_eq!(s.beta(1000), 0.02);
    }

    #[test]
    fn forward_noise_limits() {
        let s = NoiseSchedule::default();
        let z0 = Latent::filled(3, 2, 2, 0.7);
        let zero = Latent::filled(3, 2, 2, 0.0);
        let one = Latent::filled(3, 2, 2, 1.0);
        assert_eq!(forward_noise(&z0, 0, &s, &one).unwrap(), z0);
        let z = forward_noise(&z0, 500, &s, &zero).unwrap();
        assert_relative_eq!(z.data[0], s.alpha_bar(500).sqrt() * 0.7, epsilon = 1e-15);
        assert!(forward_noise(&z0, 1001, &s, &zero).is_err());
    }

    #[test]
    fn forward_noise_at_final_step() {
        // independent product over the beta table
        let mut ab = 1.0;
        for i in 0..1000 {
            ab *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
        }
        let s = NoiseSchedule::default();
        let one = Latent::filled(1, 1, 1, 1.0);
        let z = forward_noise(&one, 1000, &s, &one).unwrap();
        assert_relative_eq!(z.data[0], ab.sqrt() + (1.0 - ab).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn forward_noise_variance() {
        let s = NoiseSchedule::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for t in [10, 300, 900] {
            let z0 = Latent::filled(1, 100, 100, 0.3);
            let eps = Latent::gaussian(1, 100, 100, &mut rng);
            let z = forward_noise(&z0, t, &s, &eps).unwrap();
            let n = z.data.len() as f64;
            let mean = z.data.iter().sum::<f64>() / n;
            let var = z.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let expected = 1.0 - s.alpha_bar(t);
            assert!((var - expected).abs() <= 0.05 * expected, "t={t}: {var} vs {expected}");
        }
    }
}
