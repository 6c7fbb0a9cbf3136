//! Seedable random number generation and the elementary samplers used by the
//! posterior and Gibbs updates.
//!
//! Every stochastic operation in the crate takes an explicit `&mut R` handle.
//! Chains obtain independent handles through [`chain_rng`], which maps a
//! `(seed, stream)` pair onto a ChaCha8 stream; the resulting draws do not
//! depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Poisson};

use crate::error::{domain, Result};

/// Generator family used for all chains.
pub type ChainRng = ChaCha8Rng;

/// Generator for stream `stream` of base seed `seed`.
pub fn chain_rng(seed: u64, stream: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Gamma draw with `shape` and `rate` (mean `shape / rate`).
pub fn rng_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
        return Err(domain(format!("gamma({shape}, {rate}) is not a valid law")));
    }
    Ok(gamma(rng, shape, rate))
}

#[inline]
pub(crate) fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("validated gamma parameters")
        .sample(rng)
}

pub fn rng_beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(domain(format!("beta({a}, {b}) is not a valid law")));
    }
    Ok(beta(rng, a, b))
}

#[inline]
pub(crate) fn beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("validated beta parameters").sample(rng)
}

pub fn rng_poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> Result<u64> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(domain(format!("poisson({rate}) is not a valid law")));
    }
    Ok(poisson(rng, rate))
}

/// Poisson draw; a zero rate yields zero.
#[inline]
pub(crate) fn poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let x: f64 = Poisson::new(rate).expect("validated poisson rate").sample(rng);
    x as u64
}

/// Uniform draw on `[0, 1)`.
pub fn rng_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Draw an index with probability proportional to `exp(logits[i])`.
pub fn rng_categorical_from_logits<R: Rng + ?Sized>(rng: &mut R, logits: &[f64]) -> Result<usize> {
    if logits.is_empty() {
        return Err(domain("categorical over an empty set"));
    }
    if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(domain("categorical logits must be finite or -inf"));
    }
    let norm = crate::math::lse(logits.iter().copied());
    if norm == f64::NEG_INFINITY {
        return Err(domain("categorical logits are all -inf"));
    }
    Ok(categorical(rng, logits, norm))
}

/// Inverse-CDF categorical draw given the log normaliser.
pub(crate) fn categorical<R: Rng + ?Sized>(rng: &mut R, logits: &[f64], norm: f64) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l == f64::NEG_INFINITY {
            continue;
        }
        acc += (l - norm).exp();
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
