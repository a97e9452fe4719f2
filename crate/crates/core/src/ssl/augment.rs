//! View generation for the contrastive pretext tasks.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationConfig {
    /// Smallest crop, as a fraction of the input length.
    pub crop_min_fraction: f64,
    /// Additive Gaussian noise std, relative to the std of the input.
    pub noise_sigma: f64,
    /// Shape of the symmetric Beta distribution of the mixing weight.
    pub mixup_alpha: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            crop_min_fraction: 0.5,
            noise_sigma: 0.05,
            mixup_alpha: 0.2,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.crop_min_fraction > 0.0 && self.crop_min_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "crop_min_fraction must be in (0, 1], got {}",
                self.crop_min_fraction
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::Config(format!("mixup_alpha must be > 0, got {}", self.mixup_alpha)));
        }
        Ok(())
    }
}

/// Linear interpolation of `x[start..start + len]` onto `out_len` points.
pub fn crop_resize(x: &[f64], start: usize, len: usize, out_len: usize) -> Vec<f64> {
    let window = &x[start..start + len];
    if len == 1 || out_len == 1 {
        return vec![window[0]; out_len];
    }
    let step = (len - 1) as f64 / (out_len - 1) as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = (pos.floor() as usize).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            let frac = pos - lo as f64;
            window[lo] * (1.0 - frac) + window[hi] * frac
        })
        .collect()
}

fn std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// One augmented view and the crop length used before resizing.
pub fn augment_view(x: &[f64], cfg: &AugmentationConfig, rng: &mut SeededRng) -> (Vec<f64>, usize) {
    let n = x.len();
    let f = if cfg.crop_min_fraction < 1.0 {
        rng.random_range(cfg.crop_min_fraction..=1.0)
    } else {
        1.0
    };
    let len = ((f * n as f64).ceil() as usize).clamp(1, n);
    let start = if len < n { rng.random_range(0..=n - len) } else { 0 };
    let mut view = crop_resize(x, start, len, n);
    let sigma = cfg.noise_sigma * std(x);
    if sigma > 0.0 {
        for v in view.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v += sigma * e;
        }
    }
    (view, len)
}

/// Two independently augmented views of `x`.
pub fn simclr_augment(x: &[f64], cfg: &AugmentationConfig, rng: &mut SeededRng) -> (Vec<f64>, Vec<f64>) {
    let (a, _) = augment_view(x, cfg, rng);
    let (b, _) = augment_view(x, cfg, rng);
    (a, b)
}

pub fn sample_lambda(alpha: f64, rng: &mut SeededRng) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("mixup alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// `lambda * x1 + (1 - lambda) * x2`.
pub fn mix(x1: &[f64], x2: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if x1.len() != x2.len() {
        return Err(Error::dimension("mix", x1.len(), x2.len()));
    }
    Ok(x1.iter().zip(x2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect())
}

/// Mixes two samples with a Beta(alpha, alpha) weight.
pub fn mixup_augment(x1: &[f64], x2: &[f64], alpha: f64, rng: &mut SeededRng) -> Result<(Vec<f64>, f64)> {
    let lambda = sample_lambda(alpha, rng)?;
    Ok((mix(x1, x2, lambda)?, lambda))
}
