//! Posterior of the trait-level random measure given a grouped sample.
//!
//! Conditionally on the data the measure splits into the observed-trait part
//! (one conjugate posterior per column block) and an independent unseen part:
//! `N' ~ Poisson(λ')` unseen traits with `λ' = λ Π_q p0(n_q)`, each carrying
//! parameters from `H'_q(dθ) ∝ P(0; θ)^{n_q} H(dθ; ψ)`.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::GroupedCounts;
use crate::error::{domain, Error, Result};
use crate::kernel::{KernelHyper, ThetaDraw};
use crate::math::{ln_gamma, lse, neg_binomial_ln_pmf, poisson_ln_pmf, LogProb};
use crate::partition::PitmanYor;
use crate::petpf::{log_p0_total, log_petpf_marginal};
use crate::rng;

/// `Gamma(shape, rate)` hyperprior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        let g = GammaPrior { shape, rate };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape > 0.0 && self.rate > 0.0 && self.shape.is_finite() && self.rate.is_finite() {
            Ok(())
        } else {
            Err(domain(format!("gamma prior ({}, {}) must have positive parameters", self.shape, self.rate)))
        }
    }

    /// Prior with the given mean and variance.
    pub fn from_mean_var(mean: f64, var: f64) -> Result<Self> {
        if !(mean > 0.0 && var > 0.0) {
            return Err(domain(format!("mean {mean} and variance {var} must be positive")));
        }
        Self::new(mean * mean / var, mean / var)
    }

    /// Default prior on `λ` for a sample with `k` observed traits:
    /// mean `1.5 k`, variance `10 × mean`.
    pub fn elicit_lambda(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config(
                "the default lambda prior needs at least one observed trait".into(),
            ));
        }
        let mean = 1.5 * k as f64;
        Self::from_mean_var(mean, 10.0 * mean)
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln() - self.rate * x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng::gamma(rng, self.shape, self.rate)
    }
}

/// Model hyperparameters outside the kernel.
///
/// `lambda` is the fixed Poisson rate when `lambda_prior` is `None`, and the
/// chain's starting value otherwise. `psi_prior`, when present, holds one
/// gamma prior per free kernel component (see
/// [`KernelHyper::free_param_names`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHyper {
    pub lambda: f64,
    pub lambda_prior: Option<GammaPrior>,
    pub psi_prior: Option<Vec<GammaPrior>>,
    pub py: PitmanYor,
}

impl ModelHyper {
    pub fn fixed(lambda: f64) -> Self {
        ModelHyper { lambda, lambda_prior: None, psi_prior: None, py: PitmanYor::default() }
    }

    pub fn validate(&self, kernel: &KernelHyper) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(domain(format!("lambda must be positive, got {}", self.lambda)));
        }
        if let Some(p) = &self.lambda_prior {
            p.validate()?;
        }
        if let Some(ps) = &self.psi_prior {
            if ps.len() != kernel.free_param_names().len() {
                return Err(Error::Config(format!(
                    "{} kernel needs {} psi priors ({}), got {}",
                    kernel.family(),
                    kernel.free_param_names().len(),
                    kernel.free_param_names().join(", "),
                    ps.len()
                )));
            }
            for p in ps {
                p.validate()?;
            }
        }
        kernel.validate()?;
        self.py.validate()
    }
}

/// `λ' = λ Π_q p0(n_q)`, the posterior mean number of unseen traits when
/// `λ` is fixed.
pub fn lambda_prime(data: &GroupedCounts, lambda: f64, kernel: &KernelHyper) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    kernel.validate()?;
    Ok(lambda * log_p0_total(&data.group_sizes(), kernel).exp())
}

/// Law of the number of unseen traits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnseenLaw {
    Poisson { rate: f64 },
    /// Failures before `size` successes with success probability `1 - odds`.
    NegativeBinomial { size: f64, odds: f64 },
}

/// Posterior law of `N'` given the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorUnseen {
    /// `Π_q p0(n_q)`.
    pub p0: f64,
    /// Posterior mean of `N'`; equals `λ p0` when `λ` is fixed.
    pub lambda_prime: f64,
    pub law: UnseenLaw,
    /// Posterior law of `λ` when it carries a gamma prior.
    pub lambda_posterior: Option<GammaPrior>,
}

impl PosteriorUnseen {
    pub fn log_pmf(&self, m: u64) -> LogProb {
        LogProb::clamped(match self.law {
            UnseenLaw::Poisson { rate } if rate == 0.0 => {
                if m == 0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            UnseenLaw::Poisson { rate } => poisson_ln_pmf(m, rate),
            UnseenLaw::NegativeBinomial { size, odds } => neg_binomial_ln_pmf(m, size, odds),
        })
    }

    /// `P(N' = 0..=m_max)`.
    pub fn pmf(&self, m_max: u64) -> Vec<f64> {
        (0..=m_max).map(|m| self.log_pmf(m).prob()).collect()
    }

    pub fn mean(&self) -> f64 {
        match self.law {
            UnseenLaw::Poisson { rate } => rate,
            UnseenLaw::NegativeBinomial { size, odds } => size * odds / (1.0 - odds),
        }
    }

    pub fn variance(&self) -> f64 {
        match self.law {
            UnseenLaw::Poisson { rate } => rate,
            UnseenLaw::NegativeBinomial { size, odds } => size * odds / (1.0 - odds).powi(2),
        }
    }

    /// Smallest `m` with `P(N' <= m) >= prob`.
    pub fn quantile(&self, prob: f64) -> u64 {
        let mut acc = 0.0;
        let mut m = 0;
        loop {
            acc += self.log_pmf(m).prob();
            if acc >= prob || m > 10_000_000 {
                return m;
            }
            m += 1;
        }
    }

    /// Exact draw: gamma-Poisson composition under a `λ` prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match (self.law, self.lambda_posterior) {
            (UnseenLaw::Poisson { rate }, _) => rng::poisson(rng, rate),
            (UnseenLaw::NegativeBinomial { .. }, Some(post)) => {
                let lambda = post.sample(rng);
                rng::poisson(rng, lambda * self.p0)
            }
            (UnseenLaw::NegativeBinomial { size, odds }, None) => {
                let lambda = rng::gamma(rng, size, (1.0 - odds) / odds);
                rng::poisson(rng, lambda)
            }
        }
    }
}

/// Posterior law of `N'` given `p0` and the number of observed traits.
pub fn unseen_from_p0(p0: f64, k: usize, hyper: &ModelHyper) -> PosteriorUnseen {
    match hyper.lambda_prior {
        None => PosteriorUnseen {
            p0,
            lambda_prime: hyper.lambda * p0,
            law: UnseenLaw::Poisson { rate: hyper.lambda * p0 },
            lambda_posterior: None,
        },
        Some(prior) => {
            let post = GammaPrior { shape: prior.shape + k as f64, rate: prior.rate + 1.0 - p0 };
            let law = UnseenLaw::NegativeBinomial { size: post.shape, odds: p0 / (prior.rate + 1.0) };
            PosteriorUnseen { p0, lambda_prime: post.mean() * p0, law, lambda_posterior: Some(post) }
        }
    }
}

pub fn unseen_count_posterior(data: &GroupedCounts, hyper: &ModelHyper, kernel: &KernelHyper) -> Result<PosteriorUnseen> {
    hyper.validate(kernel)?;
    let p0 = log_p0_total(&data.group_sizes(), kernel).exp();
    Ok(unseen_from_p0(p0, data.n_traits(), hyper))
}

/// One exact draw of `λ | data ~ Gamma(α_λ + k, β_λ + 1 - p0)`.
pub fn update_lambda_gibbs<R: Rng + ?Sized>(k: usize, p0: f64, prior: &GammaPrior, rng: &mut R) -> Result<f64> {
    if !(p0 > 0.0 && p0 <= 1.0) {
        return Err(domain(format!("p0 must lie in (0, 1], got {p0}")));
    }
    prior.validate()?;
    Ok(rng::gamma(rng, prior.shape + k as f64, prior.rate + 1.0 - p0))
}

/// Componentwise log-normal random-walk Metropolis–Hastings on the free
/// kernel components. `loglik` evaluates the log-likelihood at a proposal;
/// `current_loglik` must be its value at `kernel`. Returns the new kernel,
/// its log-likelihood and one acceptance flag per component.
pub fn mh_psi_step<R, F>(
    kernel: &KernelHyper,
    priors: &[GammaPrior],
    scales: &[f64],
    current_loglik: f64,
    mut loglik: F,
    rng: &mut R,
) -> Result<(KernelHyper, f64, Vec<bool>)>
where
    R: Rng + ?Sized,
    F: FnMut(&KernelHyper) -> Result<f64>,
{
    let names = kernel.free_param_names();
    if priors.len() != names.len() || scales.len() != names.len() {
        return Err(Error::Config(format!(
            "{} kernel needs {} priors and proposal scales",
            kernel.family(),
            names.len()
        )));
    }
    let mut current = *kernel;
    let mut ll = current_loglik;
    let mut flags = Vec::with_capacity(names.len());
    for j in 0..names.len() {
        let mut values = current.free_params();
        let x = values[j];
        let z: f64 = StandardNormal.sample(rng);
        let proposal = x * (scales[j] * z).exp();
        let u: f64 = rng.random();
        if !(proposal > 0.0 && proposal.is_finite()) {
            flags.push(false);
            continue;
        }
        values[j] = proposal;
        let candidate = current.with_free_params(&values)?;
        let ll_new = loglik(&candidate)?;
        let log_accept = ll_new - ll + priors[j].log_pdf(proposal) - priors[j].log_pdf(x) + proposal.ln() - x.ln();
        let accept = !log_accept.is_nan() && u.ln() < log_accept;
        if accept {
            current = candidate;
            ll = ll_new;
        }
        flags.push(accept);
    }
    Ok((current, ll, flags))
}

/// One MH sweep over ψ targeting `π(data; λ, ψ) × prior(ψ)` with known groups.
pub fn update_psi_mh<R: Rng + ?Sized>(
    data: &GroupedCounts,
    hyper: &ModelHyper,
    kernel: &KernelHyper,
    proposal_scale: f64,
    rng: &mut R,
) -> Result<(KernelHyper, Vec<bool>)> {
    let priors = hyper
        .psi_prior
        .as_ref()
        .ok_or_else(|| Error::Config("psi is fixed; no prior to sample from".into()))?;
    if !(proposal_scale > 0.0) {
        return Err(domain(format!("proposal scale must be positive, got {proposal_scale}")));
    }
    let scales = vec![proposal_scale; priors.len()];
    let ll = log_petpf_marginal(data, hyper.lambda, kernel)?;
    let (k, _, flags) =
        mh_psi_step(kernel, priors, &scales, ll, |cand| log_petpf_marginal(data, hyper.lambda, cand), rng)?;
    Ok((k, flags))
}

/// Proposal scales tuned towards a target acceptance rate in batches.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleAdapter {
    pub scales: Vec<f64>,
    accepted: Vec<u32>,
    in_batch: u32,
    batches: u32,
}

impl ScaleAdapter {
    pub const TARGET: f64 = 0.44;
    pub const BATCH: u32 = 50;

    pub fn new(n: usize, scale: f64) -> Self {
        ScaleAdapter { scales: vec![scale; n], accepted: vec![0; n], in_batch: 0, batches: 0 }
    }

    /// Records one sweep's flags; rescales after each full batch.
    pub fn record(&mut self, flags: &[bool]) {
        for (a, &f) in self.accepted.iter_mut().zip(flags) {
            *a += f as u32;
        }
        self.in_batch += 1;
        if self.in_batch == Self::BATCH {
            self.batches += 1;
            let delta = (1.0 / (self.batches as f64).sqrt()).min(0.5);
            for (s, a) in self.scales.iter_mut().zip(&mut self.accepted) {
                let rate = *a as f64 / Self::BATCH as f64;
                *s *= if rate > Self::TARGET { delta.exp() } else { (-delta).exp() };
                *a = 0;
            }
            self.in_batch = 0;
        }
    }
}

/// One joint draw of the posterior random measure.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMeasures {
    /// `λ` used for the unseen part (drawn when it has a prior).
    pub lambda: f64,
    /// `θ*` indexed `[l * d + q]`.
    pub theta_star: Vec<ThetaDraw>,
    pub n_prime: usize,
    /// `θ'` indexed `[j * d + q]`.
    pub theta_prime: Vec<ThetaDraw>,
    pub unseen_labels: Vec<String>,
}

fn unseen_labels(observed: &[String], count: usize) -> Vec<String> {
    let taken: HashSet<&str> = observed.iter().map(String::as_str).collect();
    let mut out = Vec::with_capacity(count);
    let mut next = 1usize;
    while out.len() < count {
        let label = format!("unseen_{next}");
        next += 1;
        if !taken.contains(label.as_str()) {
            out.push(label);
        }
    }
    out
}

pub fn sample_posterior_measures<R: Rng + ?Sized>(
    data: &GroupedCounts,
    hyper: &ModelHyper,
    kernel: &KernelHyper,
    rng: &mut R,
) -> Result<PosteriorMeasures> {
    hyper.validate(kernel)?;
    data.check_kernel_support(kernel)?;
    let sizes = data.group_sizes();
    let p0 = log_p0_total(&sizes, kernel).exp();
    let theta_star = data.block_stats(kernel).iter().map(|s| kernel.sample_posterior_theta(s, rng)).collect();
    let lambda = match &hyper.lambda_prior {
        Some(prior) => update_lambda_gibbs(data.n_traits(), p0, prior, rng)?,
        None => hyper.lambda,
    };
    let n_prime = rng::poisson(rng, lambda * p0) as usize;
    let mut theta_prime = Vec::with_capacity(n_prime * sizes.len());
    for _ in 0..n_prime {
        for &n in &sizes {
            theta_prime.push(kernel.sample_unseen_theta(n as u64, rng));
        }
    }
    Ok(PosteriorMeasures {
        lambda,
        theta_star,
        n_prime,
        theta_prime,
        unseen_labels: unseen_labels(data.trait_labels(), n_prime),
    })
}

/// A new subject for every group, over the observed traits followed by the
/// `N'` materialized unseen traits.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraw {
    pub labels: Vec<String>,
    /// One row per group, `k + N'` entries each.
    pub rows: Vec<Vec<u32>>,
    pub n_observed: usize,
}

impl PredictiveDraw {
    /// Number of unseen traits displayed by the new subject of group `q`.
    pub fn new_traits_displayed(&self, q: usize) -> usize {
        self.rows[q][self.n_observed..].iter().filter(|&&a| a > 0).count()
    }
}

pub fn sample_predictive<R: Rng + ?Sized>(
    data: &GroupedCounts,
    hyper: &ModelHyper,
    kernel: &KernelHyper,
    rng: &mut R,
) -> Result<PredictiveDraw> {
    let m = sample_posterior_measures(data, hyper, kernel, rng)?;
    let d = data.n_groups();
    let k = data.n_traits();
    let rows = (0..d)
        .map(|q| {
            let observed = (0..k).map(|l| m.theta_star[l * d + q].sample_count(rng));
            let observed: Vec<u32> = observed.collect();
            let unseen = (0..m.n_prime).map(|j| m.theta_prime[j * d + q].sample_count(rng));
            observed.into_iter().chain(unseen.collect::<Vec<_>>()).collect()
        })
        .collect();
    let labels = data.trait_labels().iter().cloned().chain(m.unseen_labels).collect();
    Ok(PredictiveDraw { labels, rows, n_observed: k })
}

/// Monte Carlo estimate of the posterior expected co-attendance matrix
/// `E[Σ_ℓ Ã_iℓ Ã_i'ℓ | data]` for replicated subjects, with each subject
/// placed in its cluster under `partition`. The diagonal is the expected
/// number of traits displayed.
pub fn posterior_adjacency_expectation<R: Rng + ?Sized>(
    data: &GroupedCounts,
    hyper: &ModelHyper,
    kernel: &KernelHyper,
    partition: &[usize],
    draws: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if !matches!(kernel, KernelHyper::BetaBernoulli { .. }) {
        return Err(domain("adjacency expectation requires the Bernoulli kernel"));
    }
    if draws == 0 {
        return Err(domain("at least one draw is required"));
    }
    let d = partition.iter().copied().max().map_or(1, |m| m + 1);
    let grouped = data.with_groups(partition, d)?;
    let mut pair = vec![0.0; d * d];
    let mut degree = vec![0.0; d];
    let mut accumulate = |thetas: &[ThetaDraw]| {
        for block in thetas.chunks(d) {
            for q in 0..d {
                let a = block[q].primary();
                degree[q] += a;
                for r in 0..d {
                    pair[q * d + r] += a * block[r].primary();
                }
            }
        }
    };
    for _ in 0..draws {
        let m = sample_posterior_measures(&grouped, hyper, kernel, rng)?;
        accumulate(&m.theta_star);
        accumulate(&m.theta_prime);
    }
    let n = data.n_subjects();
    let scale = 1.0 / draws as f64;
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let (q, r) = (partition[i], partition[j]);
                    if i == j {
                        degree[q] * scale
                    } else {
                        pair[q * d + r] * scale
                    }
                })
                .collect()
        })
        .collect())
}

/// `ln Σ_m P(N' = m)` over the first `m_max + 1` values; used to check mass.
pub fn log_total_mass(post: &PosteriorUnseen, m_max: u64) -> f64 {
    lse((0..=m_max).map(|m| post.log_pmf(m).value()))
}
