//! Time-series augmentations that produce the two views of an unlabeled sample.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Series;
use crate::error::{Error, Result};

/// Which augmentations run, and with what strength. Masking is applied before
/// jitter when both are enabled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub temporal_mask: bool,
    /// Probability that a timestamp column is zeroed.
    pub mask_prob: f64,
    pub jitter: bool,
    /// Standard deviation of the additive Gaussian noise.
    pub jitter_sigma: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec { temporal_mask: true, mask_prob: 0.5, jitter: false, jitter_sigma: 0.1 }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        check_prob(self.mask_prob)?;
        check_sigma(self.jitter_sigma)
    }
}

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Contract(format!("mask probability must lie in [0, 1], got {p}")));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Contract(format!("jitter sigma must be finite and >= 0, got {sigma}")));
    }
    Ok(())
}

/// Zeroes each timestamp column (every channel at that time) with probability `p`.
pub fn temporal_mask<R: Rng + ?Sized>(x: &Series, p: f64, rng: &mut R) -> Result<Series> {
    check_prob(p)?;
    let mut out = x.clone();
    let (channels, length) = (x.channels(), x.length());
    for t in 0..length {
        if rng.random_bool(p) {
            for c in 0..channels {
                out.values_mut()[c * length + t] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every element.
pub fn jitter<R: Rng + ?Sized>(x: &Series, sigma: f64, rng: &mut R) -> Result<Series> {
    check_sigma(sigma)?;
    let mut out = x.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    for v in out.values_mut() {
        *v += normal.sample(rng);
    }
    Ok(out)
}

pub fn augment<R: Rng + ?Sized>(x: &Series, spec: &AugmentSpec, rng: &mut R) -> Result<Series> {
    spec.validate()?;
    let mut out = if spec.temporal_mask { temporal_mask(x, spec.mask_prob, rng)? } else { x.clone() };
    if spec.jitter {
        out = jitter(&out, spec.jitter_sigma, rng)?;
    }
    Ok(out)
}

/// Two independent augmented views of `x`.
pub fn make_views<R: Rng + ?Sized>(x: &Series, spec: &AugmentSpec, rng: &mut R) -> Result<(Series, Series)> {
    let a = augment(x, spec, rng)?;
    let b = augment(x, spec, rng)?;
    Ok((a, b))
}
