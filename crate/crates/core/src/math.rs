//! Log-space special functions shared by every model component.
//!
//! All probability arithmetic in this crate is carried out on the natural-log
//! scale; products over traits and groups underflow long before they become
//! interesting.

use crate::error::{domain, Result};

/// Natural log of a probability, guaranteed to lie in `[-inf, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogProb(f64);

impl LogProb {
    pub const ZERO: LogProb = LogProb(f64::NEG_INFINITY);
    pub const ONE: LogProb = LogProb(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value > 0.0 {
            return Err(domain(format!("{value} is not a log-probability")));
        }
        Ok(LogProb(value))
    }

    /// Clamps tiny positive round-off (`<= 1e-12`) to zero.
    pub(crate) fn clamped(value: f64) -> Self {
        debug_assert!(!value.is_nan());
        debug_assert!(value <= 1e-12, "log-probability {value} > 0");
        LogProb(value.min(0.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn prob(self) -> f64 {
        self.0.exp()
    }
}

impl From<LogProb> for f64 {
    fn from(p: LogProb) -> f64 {
        p.0
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma(x))
}

/// Unchecked `ln Γ(x)`; callers guarantee `x > 0`.
#[inline]
pub(crate) fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "ln_gamma({x})");
    libm::lgamma(x)
}

const POCHHAMMER_DIRECT_MAX: u64 = 30;

/// `ln (a)_n` where `(a)_n = a (a+1) ... (a+n-1)` is the rising factorial.
pub fn log_pochhammer(a: f64, n: u64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(domain(format!("log_pochhammer requires a > 0, got {a}")));
    }
    Ok(ln_pochhammer(a, n))
}

#[inline]
pub(crate) fn ln_pochhammer(a: f64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else if n <= POCHHAMMER_DIRECT_MAX {
        (0..n).map(|i| (a + i as f64).ln()).sum()
    } else {
        ln_gamma(a + n as f64) - ln_gamma(a)
    }
}

/// `ln B(a, b)`.
pub fn log_beta_fn(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(domain(format!("log_beta_fn requires a, b > 0, got ({a}, {b})")));
    }
    Ok(ln_beta(a, b))
}

#[inline]
pub(crate) fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `ln Σ exp(v)` by max-shift. All `-inf` inputs give `-inf`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(domain("log_sum_exp of an empty list"));
    }
    Ok(lse(values.iter().copied()))
}

pub(crate) fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln n!`
#[inline]
pub fn log_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// `ln C(n, k)`; `-inf` when `k > n`.
pub fn log_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    log_factorial(n) - log_factorial(k) - log_factorial(n - k)
}

/// Poisson log-mass `m ln(rate) - rate - ln m!`.
pub fn poisson_log_pmf(m: u64, rate: f64) -> Result<LogProb> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(domain(format!("poisson rate must be positive, got {rate}")));
    }
    Ok(LogProb::clamped(poisson_ln_pmf(m, rate)))
}

#[inline]
pub(crate) fn poisson_ln_pmf(m: u64, rate: f64) -> f64 {
    if m == 0 {
        -rate
    } else {
        m as f64 * rate.ln() - rate - log_factorial(m)
    }
}

/// Negative binomial log-mass for the number of failures `m` before `size`
/// successes, success probability `1 - odds`:
/// `Γ(size+m)/(Γ(size) m!) (1-odds)^size odds^m`.
pub(crate) fn neg_binomial_ln_pmf(m: u64, size: f64, odds: f64) -> f64 {
    let m_f = m as f64;
    ln_gamma(size + m_f) - ln_gamma(size) - log_factorial(m)
        + size * (-odds).ln_1p()
        + if m == 0 { 0.0 } else { m_f * odds.ln() }
}

/// `ln(1 - e^x)` for `x <= 0`.
#[inline]
pub(crate) fn ln_one_minus_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}
