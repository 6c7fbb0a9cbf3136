//! The exact marginal law of a grouped count matrix.
//!
//! With `N ~ Poisson(λ)` traits and group-specific parameters drawn
//! independently from `H(·; ψ)`, the probability of observing the `k`
//! columns of `A` (in one uniformly random order) is
//!
//! ```text
//! λ^k / k! · exp(-λ (1 - Π_q p0(n_q))) · Π_ℓ Π_q ∫ Π_{i ∈ q} P(a_iℓ; θ) H(dθ; ψ)
//! ```
//!
//! where `p0(n) = ∫ P(0; θ)^n H(dθ; ψ)`. Conditionally on `N` the exponential
//! factor is replaced by `C(N, k) Π_q p0(n_q)^(N-k)`.

use crate::data::GroupedCounts;
use crate::error::{domain, Error, Result};
use crate::kernel::KernelHyper;
use crate::math::{ln_one_minus_exp, log_binomial, log_factorial, lse, poisson_ln_pmf};

/// `Σ_q ln p0(n_q)`, the log probability that a given trait is unseen.
pub fn log_p0_total(group_sizes: &[usize], kernel: &KernelHyper) -> f64 {
    group_sizes.iter().map(|&n| kernel.log_p_zero(n as u64)).sum()
}

/// `Σ_ℓ Σ_q` of the per-block marginals.
pub fn log_observed_marginals(data: &GroupedCounts, kernel: &KernelHyper) -> f64 {
    data.block_stats(kernel).iter().map(|s| kernel.log_marginal(s)).sum()
}

/// The marginal log-law assembled from its parts.
#[inline]
pub fn log_petpf_from_parts(k: usize, lambda: f64, log_p0: f64, log_marginals: f64) -> f64 {
    let exponent = -lambda * (-log_p0.exp_m1());
    if k == 0 {
        return exponent;
    }
    k as f64 * lambda.ln() - log_factorial(k as u64) + exponent + log_marginals
}

fn check(data: &GroupedCounts, kernel: &KernelHyper) -> Result<()> {
    kernel.validate()?;
    data.check_kernel_support(kernel)
}

/// Marginal log-probability of `data` with `N` integrated out.
pub fn log_petpf_marginal(data: &GroupedCounts, lambda: f64, kernel: &KernelHyper) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    check(data, kernel)?;
    let v = log_petpf_from_parts(
        data.n_traits(),
        lambda,
        log_p0_total(&data.group_sizes(), kernel),
        log_observed_marginals(data, kernel),
    );
    finite(v)
}

/// Log-probability of `data` given exactly `n_total` traits in the population.
///
/// With `n_total = k` this is the likelihood of the fixed-`N` model that
/// assumes no unseen traits.
pub fn log_petpf_conditional(data: &GroupedCounts, n_total: u64, kernel: &KernelHyper) -> Result<f64> {
    let k = data.n_traits() as u64;
    if n_total < k {
        return Err(domain(format!("N = {n_total} is smaller than the {k} observed traits")));
    }
    check(data, kernel)?;
    let lp0 = log_p0_total(&data.group_sizes(), kernel);
    let zero_part = if n_total == k { 0.0 } else { (n_total - k) as f64 * lp0 };
    finite(log_binomial(n_total, k) + zero_part + log_observed_marginals(data, kernel))
}

/// `ln Σ_{N=k}^{truncation} Poisson(N; λ) · exp(log_petpf_conditional(N))`.
pub fn poisson_mixture_identity_check(
    data: &GroupedCounts,
    lambda: f64,
    kernel: &KernelHyper,
    truncation: u64,
) -> Result<f64> {
    let k = data.n_traits() as u64;
    if truncation < k {
        return Err(domain(format!("truncation {truncation} is below k = {k}")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    check(data, kernel)?;
    let lp0 = log_p0_total(&data.group_sizes(), kernel);
    let obs = log_observed_marginals(data, kernel);
    let terms: Vec<f64> = (k..=truncation)
        .map(|n| {
            let zero_part = if n == k { 0.0 } else { (n - k) as f64 * lp0 };
            poisson_ln_pmf(n, lambda) + log_binomial(n, k) + zero_part + obs
        })
        .collect();
    Ok(lse(terms.iter().copied()))
}

/// `ln(1 - Π_q p0(n_q))`, the log probability that a trait is observed.
pub fn log_p_observed(group_sizes: &[usize], kernel: &KernelHyper) -> f64 {
    ln_one_minus_exp(log_p0_total(group_sizes, kernel))
}

fn finite(v: f64) -> Result<f64> {
    if v.is_nan() || v == f64::INFINITY {
        Err(Error::Numeric(format!("log-probability evaluated to {v}")))
    } else {
        Ok(v)
    }
}
