//! Adaptive scale/shift noise that produces the two contrastive views.
//!
//! Each feature column of a window gets one scaling factor
//! `ε_s ~ N(1, (α·σ)²)` and one offset `ε_b ~ N(0, (β·σ)²)`, where `σ` is the
//! column's population standard deviation over the window. The whole
//! column is mapped affinely, so the within-window shape survives.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Scaling-noise strength.
    pub alpha: f64,
    /// Shift-noise strength.
    pub beta: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            alpha: 0.5,
            beta: 0.1,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "augment.alpha and augment.beta must be non-negative, got {} and {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Per-column mean and population standard deviation of a `T×D` window.
pub fn series_stats(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (t, d) = x.dims2()?;
    let mut mu = vec![0.0; d];
    for row in x.data().chunks_exact(d) {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= t as f64);
    let mut var = vec![0.0; d];
    for row in x.data().chunks_exact(d) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mu) {
            *s += (v - m) * (v - m);
        }
    }
    let sigma = var.into_iter().map(|s| (s / t as f64).sqrt()).collect();
    Ok((mu, sigma))
}

/// The `(ε_s, ε_b)` pair for every feature column.
pub fn draw_factors(sigma: &[f64], cfg: &AugmentConfig, draw_index: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(draw_index);
    sigma
        .iter()
        .map(|&s| {
            let zs: f64 = StandardNormal.sample(&mut rng);
            let zb: f64 = StandardNormal.sample(&mut rng);
            (1.0 + cfg.alpha * s * zs, cfg.beta * s * zb)
        })
        .collect()
}

/// One augmented view of `x`. `draw_index` selects an independent random
/// stream under the same seed, so views 1 and 2 decorrelate.
pub fn augment_view(x: &Tensor, cfg: &AugmentConfig, draw_index: u64) -> Result<Tensor> {
    let (_, d) = x.dims2()?;
    let (_, sigma) = series_stats(x)?;
    let factors = draw_factors(&sigma, cfg, draw_index);
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (s, b) = factors[i % d];
            s * v + b
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window() -> Tensor {
        Tensor::from_fn(vec![32, 2], |i| ((i * 7) % 11) as f64 - 3.0)
    }

    #[test]
    fn population_std() {
        let (mu, sigma) = series_stats(&Tensor::new(vec![2, 1], vec![0.0, 2.0]).unwrap()).unwrap();
        assert_eq!((mu[0], sigma[0]), (1.0, 1.0));
        let (mu, sigma) = series_stats(&Tensor::full(vec![5, 1], 3.5)).unwrap();
        assert_eq!((mu[0], sigma[0]), (3.5, 0.0));
    }

    #[test]
    fn zero_strength_is_identity() {
        let cfg = AugmentConfig {
            alpha: 0.0,
            beta: 0.0,
            seed: 9,
        };
        assert_eq!(augment_view(&window(), &cfg, 1).unwrap(), window());
    }

    #[test]
    fn constant_window_is_untouched() {
        let x = Tensor::full(vec![16, 3], -2.0);
        let cfg = AugmentConfig {
            alpha: 3.0,
            beta: 3.0,
            seed: 1,
        };
        assert_eq!(augment_view(&x, &cfg, 2).unwrap(), x);
    }

    #[test]
    fn views_differ_and_repeat() {
        let cfg = AugmentConfig::default();
        let a = augment_view(&window(), &cfg, 1).unwrap();
        let b = augment_view(&window(), &cfg, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, augment_view(&window(), &cfg, 1).unwrap());
    }

    #[test]
    fn negative_strength_rejected() {
        let cfg = AugmentConfig {
            alpha: -0.1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
