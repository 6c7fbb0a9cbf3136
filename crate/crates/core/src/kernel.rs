//! Conjugate trait-count families `P(·; θ)` with mixing laws `H(·; ψ)`.
//!
//! Each family exposes the same small set of closed-form integrals: the
//! marginal of one column block, the probability of an all-zero block, the
//! one-entry predictive used by the Gibbs sampler, and the conjugate
//! posterior / unseen-trait samplers. Everything above this module is
//! family-agnostic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::math::{ln_beta, ln_gamma, ln_pochhammer, log_factorial, LogProb};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    Bernoulli,
    Poisson,
    Zisnb,
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelFamily::Bernoulli => "bernoulli",
            KernelFamily::Poisson => "poisson",
            KernelFamily::Zisnb => "zisnb",
        })
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(KernelFamily::Bernoulli),
            "poisson" => Ok(KernelFamily::Poisson),
            "zisnb" => Ok(KernelFamily::Zisnb),
            other => Err(Error::Config(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Hyperparameters `ψ` of the mixing law, one variant per family.
///
/// Beta-Bernoulli is stored as the two beta shapes `(a, b)`; the
/// `(α, β)` convention with `α < 0 < α + β` maps to `a = -α`, `b = α + β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelHyper {
    BetaBernoulli { a: f64, b: f64 },
    GammaPoisson { shape: f64, rate: f64 },
    /// Zero-inflated shifted negative binomial. `c` is held fixed; `w` and
    /// `p` have independent `Beta(a_w, b_w)` and `Beta(a_p, b_p)` laws.
    Zisnb { c: f64, a_w: f64, b_w: f64, a_p: f64, b_p: f64 },
}

/// Trait-level parameter `θ` for one (trait, group) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaDraw {
    Bernoulli(f64),
    Poisson(f64),
    Zisnb { c: f64, w: f64, p: f64 },
}

/// Sufficient statistics of one column restricted to one group.
///
/// `log_base` collects the ψ-free per-entry factors (`-ln a!` for Poisson,
/// the negative-binomial binomial coefficients for ZI-SNB) and therefore
/// depends on the kernel's fixed `c`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ColumnStats {
    pub n: u64,
    pub total: u64,
    pub occupied: u64,
    pub log_base: f64,
}

impl ColumnStats {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn of(kernel: &KernelHyper, counts: &[u32]) -> Self {
        let mut s = Self::empty();
        for &a in counts {
            s.push(kernel, a);
        }
        s
    }

    /// Stats of `n` all-zero entries.
    pub fn zeros(n: u64) -> Self {
        ColumnStats { n, ..Self::default() }
    }

    #[inline]
    pub fn push(&mut self, kernel: &KernelHyper, a: u32) {
        self.n += 1;
        self.total += a as u64;
        if a > 0 {
            self.occupied += 1;
            self.log_base += kernel.log_base(a);
        }
    }

    #[inline]
    pub fn pop(&mut self, kernel: &KernelHyper, a: u32) {
        debug_assert!(self.n > 0 && self.total >= a as u64);
        self.n -= 1;
        self.total -= a as u64;
        if a > 0 {
            self.occupied -= 1;
            self.log_base -= kernel.log_base(a);
        }
        if self.occupied == 0 {
            self.log_base = 0.0;
        }
    }

    /// Integer parts equal, `log_base` within `tol`.
    pub fn approx_eq(&self, other: &ColumnStats, tol: f64) -> bool {
        self.n == other.n
            && self.total == other.total
            && self.occupied == other.occupied
            && (self.log_base - other.log_base).abs() <= tol
    }
}

/// The counts `a_{iℓq}` of one trait within one group.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnCounts {
    counts: Vec<u32>,
    total: u64,
}

impl ColumnCounts {
    pub fn new(counts: Vec<u32>) -> Self {
        let total = counts.iter().map(|&a| a as u64).sum();
        ColumnCounts { counts, total }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.counts.len() as u64
    }

    /// Frequency `m = Σ a`.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn occupied(&self) -> u64 {
        self.counts.iter().filter(|&&a| a > 0).count() as u64
    }

    pub fn stats(&self, kernel: &KernelHyper) -> ColumnStats {
        ColumnStats::of(kernel, &self.counts)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("{name} must be positive and finite, got {v}")))
    }
}

impl KernelHyper {
    pub fn beta_bernoulli(a: f64, b: f64) -> Result<Self> {
        let k = KernelHyper::BetaBernoulli { a, b };
        k.validate()?;
        Ok(k)
    }

    /// Beta-Bernoulli from the `(α, β)` convention, `α < 0`, `β > -α`.
    pub fn beta_bernoulli_from_alpha_beta(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha < 0.0 && beta > -alpha) {
            return Err(domain(format!(
                "(alpha, beta) = ({alpha}, {beta}) requires alpha < 0 and beta > -alpha"
            )));
        }
        Self::beta_bernoulli(-alpha, alpha + beta)
    }

    pub fn gamma_poisson(shape: f64, rate: f64) -> Result<Self> {
        let k = KernelHyper::GammaPoisson { shape, rate };
        k.validate()?;
        Ok(k)
    }

    pub fn zisnb(c: f64, a_w: f64, b_w: f64, a_p: f64, b_p: f64) -> Result<Self> {
        let k = KernelHyper::Zisnb { c, a_w, b_w, a_p, b_p };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelHyper::BetaBernoulli { a, b } => {
                positive("a", a)?;
                positive("b", b)
            }
            KernelHyper::GammaPoisson { shape, rate } => {
                positive("shape", shape)?;
                positive("rate", rate)
            }
            KernelHyper::Zisnb { c, a_w, b_w, a_p, b_p } => {
                positive("c", c)?;
                positive("a_w", a_w)?;
                positive("b_w", b_w)?;
                positive("a_p", a_p)?;
                positive("b_p", b_p)
            }
        }
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            KernelHyper::BetaBernoulli { .. } => KernelFamily::Bernoulli,
            KernelHyper::GammaPoisson { .. } => KernelFamily::Poisson,
            KernelHyper::Zisnb { .. } => KernelFamily::Zisnb,
        }
    }

    /// Names of the components updated by Metropolis–Hastings.
    pub fn free_param_names(&self) -> &'static [&'static str] {
        match self {
            KernelHyper::BetaBernoulli { .. } => &["a", "b"],
            KernelHyper::GammaPoisson { .. } => &["shape", "rate"],
            KernelHyper::Zisnb { .. } => &["a_w", "b_w", "a_p", "b_p"],
        }
    }

    pub fn free_params(&self) -> Vec<f64> {
        match *self {
            KernelHyper::BetaBernoulli { a, b } => vec![a, b],
            KernelHyper::GammaPoisson { shape, rate } => vec![shape, rate],
            KernelHyper::Zisnb { a_w, b_w, a_p, b_p, .. } => vec![a_w, b_w, a_p, b_p],
        }
    }

    /// Copy with the free components replaced; `c` is carried over.
    pub fn with_free_params(&self, values: &[f64]) -> Result<Self> {
        let k = match (*self, values) {
            (KernelHyper::BetaBernoulli { .. }, &[a, b]) => KernelHyper::BetaBernoulli { a, b },
            (KernelHyper::GammaPoisson { .. }, &[shape, rate]) => {
                KernelHyper::GammaPoisson { shape, rate }
            }
            (KernelHyper::Zisnb { c, .. }, &[a_w, b_w, a_p, b_p]) => {
                KernelHyper::Zisnb { c, a_w, b_w, a_p, b_p }
            }
            _ => {
                return Err(domain(format!(
                    "{} kernel takes {} free parameters, got {}",
                    self.family(),
                    self.free_param_names().len(),
                    values.len()
                )))
            }
        };
        k.validate()?;
        Ok(k)
    }

    pub fn check_support(&self, a: u32) -> Result<()> {
        if matches!(self, KernelHyper::BetaBernoulli { .. }) && a > 1 {
            return Err(Error::InvalidData(format!(
                "count {a} outside the support {{0, 1}} of the Bernoulli kernel"
            )));
        }
        Ok(())
    }

    /// ψ-free log factor contributed by a single positive entry.
    #[inline]
    pub fn log_base(&self, a: u32) -> f64 {
        match *self {
            KernelHyper::BetaBernoulli { .. } => 0.0,
            KernelHyper::GammaPoisson { .. } => -log_factorial(a as u64),
            KernelHyper::Zisnb { c, .. } => {
                if a > 1 {
                    // ln C(a + c - 2, a - 1)
                    let a = a as f64;
                    ln_gamma(a + c - 1.0) - ln_gamma(a) - ln_gamma(c)
                } else {
                    0.0
                }
            }
        }
    }

    /// `ln ∫ Π_i P(a_i; θ) H(dθ; ψ)` from sufficient statistics.
    pub fn log_marginal(&self, s: &ColumnStats) -> f64 {
        if s.n == 0 {
            return 0.0;
        }
        let n = s.n as f64;
        match *self {
            KernelHyper::BetaBernoulli { a, b } => {
                let m = s.total as f64;
                ln_beta(a + m, b + n - m) - ln_beta(a, b)
            }
            KernelHyper::GammaPoisson { shape, rate } => {
                let m = s.total as f64;
                shape * rate.ln() + ln_gamma(shape + m) - ln_gamma(shape)
                    - (shape + m) * (rate + n).ln()
                    + s.log_base
            }
            KernelHyper::Zisnb { c, a_w, b_w, a_p, b_p } => {
                let occ = s.occupied as f64;
                let tot = s.total as f64;
                s.log_base + ln_beta(a_p + c * occ, b_p + tot - occ) - ln_beta(a_p, b_p)
                    + ln_beta(a_w + occ, b_w + n - occ)
                    - ln_beta(a_w, b_w)
            }
        }
    }

    /// Marginal of one column block; validates ψ and the support.
    pub fn log_marginal_column(&self, col: &ColumnCounts) -> Result<f64> {
        self.validate()?;
        for &a in col.counts() {
            self.check_support(a)?;
        }
        Ok(self.log_marginal(&col.stats(self)))
    }

    /// `ln ∫ P(0; θ)^n H(dθ; ψ)`, the log probability that a trait is absent
    /// from all `n` subjects of a group.
    pub fn log_p_zero(&self, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        match *self {
            KernelHyper::BetaBernoulli { a, b } => ln_pochhammer(b, n) - ln_pochhammer(a + b, n),
            KernelHyper::GammaPoisson { shape, rate } => -shape * (n as f64 / rate).ln_1p(),
            KernelHyper::Zisnb { a_w, b_w, .. } => {
                ln_pochhammer(b_w, n) - ln_pochhammer(a_w + b_w, n)
            }
        }
    }

    /// `ln_p0(0..=n_max)` as a lookup table.
    pub fn log_p_zero_table(&self, n_max: usize) -> Vec<f64> {
        (0..=n_max as u64).map(|n| self.log_p_zero(n)).collect()
    }

    /// Log predictive of one more entry `a` given the block's stats:
    /// `log_marginal(s + a) - log_marginal(s)` in closed form.
    #[inline]
    pub fn log_predictive(&self, s: &ColumnStats, a: u32) -> f64 {
        let n = s.n as f64;
        match *self {
            KernelHyper::BetaBernoulli { a: sa, b: sb } => {
                let m = s.total as f64;
                let num = if a == 0 { sb + n - m } else { sa + m };
                (num / (sa + sb + n)).ln()
            }
            KernelHyper::GammaPoisson { shape, rate } => {
                let am = shape + s.total as f64;
                if a == 0 {
                    -am * (1.0 / (rate + n)).ln_1p()
                } else {
                    let x = a as f64;
                    ln_pochhammer(am, a as u64) + am * (rate + n).ln()
                        - (am + x) * (rate + n + 1.0).ln()
                        - log_factorial(a as u64)
                }
            }
            KernelHyper::Zisnb { c, a_w, b_w, a_p, b_p } => {
                let occ = s.occupied as f64;
                if a == 0 {
                    ((b_w + n - occ) / (a_w + b_w + n)).ln()
                } else {
                    let pa = a_p + c * occ;
                    let pb = b_p + s.total as f64 - occ;
                    ((a_w + occ) / (a_w + b_w + n)).ln() + ln_beta(pa + c, pb + a as f64 - 1.0)
                        - ln_beta(pa, pb)
                        + self.log_base(a)
                }
            }
        }
    }

    /// Draw from the block posterior `H_ℓq(dθ) ∝ Π_i P(a_i; θ) H(dθ; ψ)`.
    pub fn sample_posterior_theta<R: Rng + ?Sized>(&self, s: &ColumnStats, rng: &mut R) -> ThetaDraw {
        let n = s.n as f64;
        match *self {
            KernelHyper::BetaBernoulli { a, b } => {
                let m = s.total as f64;
                ThetaDraw::Bernoulli(rng::beta(rng, a + m, b + n - m))
            }
            KernelHyper::GammaPoisson { shape, rate } => {
                ThetaDraw::Poisson(rng::gamma(rng, shape + s.total as f64, rate + n))
            }
            KernelHyper::Zisnb { c, a_w, b_w, a_p, b_p } => {
                let occ = s.occupied as f64;
                let w = rng::beta(rng, a_w + occ, b_w + n - occ);
                let p = rng::beta(rng, a_p + c * occ, b_p + s.total as f64 - occ);
                ThetaDraw::Zisnb { c, w, p }
            }
        }
    }

    pub fn sample_prior_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> ThetaDraw {
        self.sample_posterior_theta(&ColumnStats::empty(), rng)
    }

    /// Draw from `H'_q(dθ) ∝ P(0; θ)^n H(dθ; ψ)`, the law of an unseen trait's
    /// parameter in a group of size `n`.
    pub fn sample_unseen_theta<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> ThetaDraw {
        self.sample_posterior_theta(&ColumnStats::zeros(n), rng)
    }

    pub fn log_pmf(&self, theta: &ThetaDraw, a: u32) -> Result<LogProb> {
        let matches = matches!(
            (self, theta),
            (KernelHyper::BetaBernoulli { .. }, ThetaDraw::Bernoulli(_))
                | (KernelHyper::GammaPoisson { .. }, ThetaDraw::Poisson(_))
                | (KernelHyper::Zisnb { .. }, ThetaDraw::Zisnb { .. })
        );
        if !matches {
            return Err(domain(format!("θ {theta:?} does not belong to the {} kernel", self.family())));
        }
        theta.log_pmf(a)
    }
}

impl ThetaDraw {
    pub fn log_pmf(&self, a: u32) -> Result<LogProb> {
        let v = match *self {
            ThetaDraw::Bernoulli(p) => match a {
                0 => (-p).ln_1p(),
                1 => p.ln(),
                _ => {
                    return Err(Error::InvalidData(format!(
                        "count {a} outside the Bernoulli support"
                    )))
                }
            },
            ThetaDraw::Poisson(rate) => {
                if a == 0 {
                    -rate
                } else {
                    a as f64 * rate.ln() - rate - log_factorial(a as u64)
                }
            }
            ThetaDraw::Zisnb { c, w, p } => {
                if a == 0 {
                    (-w).ln_1p()
                } else {
                    let x = a as f64;
                    let tail = if a == 1 { 0.0 } else { (x - 1.0) * (-p).ln_1p() };
                    w.ln() + ln_gamma(x + c - 1.0) - ln_gamma(x) - ln_gamma(c) + c * p.ln() + tail
                }
            }
        };
        Ok(LogProb::clamped(v))
    }

    pub fn sample_count<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            ThetaDraw::Bernoulli(p) => (rng.random::<f64>() < p) as u32,
            ThetaDraw::Poisson(rate) => rng::poisson(rng, rate) as u32,
            ThetaDraw::Zisnb { c, w, p } => {
                if rng.random::<f64>() >= w {
                    return 0;
                }
                // NB(c, p) failures as a gamma-Poisson mixture.
                let extra = if p >= 1.0 {
                    0
                } else {
                    let mix = rng::gamma(rng, c, p / (1.0 - p));
                    rng::poisson(rng, mix)
                };
                1 + extra as u32
            }
        }
    }

    /// Scalar summary: the Bernoulli/Poisson parameter, or `w` for ZI-SNB.
    pub fn primary(&self) -> f64 {
        match *self {
            ThetaDraw::Bernoulli(p) => p,
            ThetaDraw::Poisson(r) => r,
            ThetaDraw::Zisnb { w, .. } => w,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chain_rng;

    fn kernels() -> Vec<KernelHyper> {
        vec![
            KernelHyper::beta_bernoulli(0.5, 0.5).unwrap(),
            KernelHyper::beta_bernoulli(2.3, 7.1).unwrap(),
            KernelHyper::gamma_poisson(1.0, 1.0).unwrap(),
            KernelHyper::gamma_poisson(0.4, 2.5).unwrap(),
            KernelHyper::zisnb(2.0, 0.7, 3.0, 1.5, 0.8).unwrap(),
            KernelHyper::zisnb(0.6, 2.0, 1.0, 0.9, 4.0).unwrap(),
        ]
    }

    fn sample_counts(k: &KernelHyper, seed: u64) -> Vec<u32> {
        let mut rng = chain_rng(seed, 9);
        let n = (seed % 6) as usize;
        (0..n)
            .map(|i| match k {
                KernelHyper::BetaBernoulli { .. } => (i as u64 + seed) as u32 % 2,
                _ => ((i as u64 * 7 + seed) % 5) as u32 * (rng.random::<f64>() < 0.7) as u32,
            })
            .collect()
    }

    #[test]
    fn marginal_examples() {
        let bb = KernelHyper::beta_bernoulli(0.5, 0.5).unwrap();
        let got = bb.log_marginal_column(&ColumnCounts::new(vec![1])).unwrap();
        assert!((got - 0.5f64.ln()).abs() < 1e-14);
        let gp = KernelHyper::gamma_poisson(1.0, 1.0).unwrap();
        let got = gp.log_marginal_column(&ColumnCounts::new(vec![0])).unwrap();
        assert!((got - 0.5f64.ln()).abs() < 1e-14);
        for k in kernels() {
            assert_eq!(k.log_marginal_column(&ColumnCounts::new(vec![])).unwrap(), 0.0);
        }
    }

    #[test]
    fn p_zero_examples() {
        let bb = KernelHyper::beta_bernoulli(0.5, 0.5).unwrap();
        assert!((bb.log_p_zero(1) - 0.5f64.ln()).abs() < 1e-14);
        let gp = KernelHyper::gamma_poisson(1.0, 1.0).unwrap();
        assert!((gp.log_p_zero(1) - 0.5f64.ln()).abs() < 1e-14);
        for k in kernels() {
            assert_eq!(k.log_p_zero(0), 0.0);
        }
    }

    #[test]
    fn p_zero_equals_marginal_of_zero_column() {
        for k in kernels() {
            for n in 0..40u64 {
                let zeros = ColumnCounts::new(vec![0; n as usize]);
                let m = k.log_marginal_column(&zeros).unwrap();
                assert!((k.log_p_zero(n) - m).abs() < 1e-10, "{k:?} n={n}");
            }
        }
    }

    #[test]
    fn p_zero_strictly_decreasing() {
        for k in kernels() {
            let t = k.log_p_zero_table(30);
            assert!(t.windows(2).all(|w| w[1] < w[0]), "{k:?}");
        }
    }

    #[test]
    fn predictive_is_marginal_difference() {
        for k in kernels() {
            for seed in 0..30 {
                let counts = sample_counts(&k, seed);
                let s = ColumnStats::of(&k, &counts);
                let max_a = if k.family() == KernelFamily::Bernoulli { 1 } else { 6 };
                for a in 0..=max_a {
                    let mut t = s;
                    t.push(&k, a);
                    let diff = k.log_marginal(&t) - k.log_marginal(&s);
                    let pred = k.log_predictive(&s, a);
                    assert!((diff - pred).abs() < 1e-10, "{k:?} {counts:?} + {a}: {diff} vs {pred}");
                }
            }
        }
    }

    #[test]
    fn predictive_sums_to_one_over_support() {
        for k in kernels() {
            // ZI-SNB predictives have polynomial tails of order a_p; thicken p's prior.
            let k = match k {
                KernelHyper::Zisnb { c, a_w, b_w, a_p, b_p } => {
                    KernelHyper::Zisnb { c, a_w, b_w, a_p: a_p + 6.0, b_p }
                }
                other => other,
            };
            let s = ColumnStats::of(&k, &sample_counts(&k, 4));
            let upper = if k.family() == KernelFamily::Bernoulli { 1 } else { 5_000 };
            let total: f64 = (0..=upper).map(|a| k.log_predictive(&s, a).exp()).sum();
            assert!((total - 1.0).abs() < 1e-9, "{k:?}: {total}");
        }
    }

    #[test]
    fn push_pop_round_trip() {
        let k = KernelHyper::zisnb(2.5, 1.0, 1.0, 1.0, 1.0).unwrap();
        let mut s = ColumnStats::of(&k, &[0, 3, 1, 7]);
        s.pop(&k, 7);
        assert!(s.approx_eq(&ColumnStats::of(&k, &[0, 3, 1]), 1e-12));
        s.pop(&k, 3);
        s.pop(&k, 1);
        assert_eq!(s, ColumnStats::zeros(1));
    }

    #[test]
    fn pmf_examples() {
        assert!((ThetaDraw::Bernoulli(0.3).log_pmf(1).unwrap().value() - 0.3f64.ln()).abs() < 1e-15);
        assert_eq!(ThetaDraw::Poisson(2.0).log_pmf(0).unwrap().value(), -2.0);
        let z = ThetaDraw::Zisnb { c: 3.0, w: 0.5, p: 0.2 };
        assert!((z.log_pmf(0).unwrap().value() - 0.5f64.ln()).abs() < 1e-15);
        assert!(ThetaDraw::Bernoulli(0.3).log_pmf(2).is_err());
        let bb = KernelHyper::beta_bernoulli(1.0, 1.0).unwrap();
        assert!(bb.log_pmf(&ThetaDraw::Poisson(1.0), 0).is_err());
    }

    #[test]
    fn zisnb_pmf_normalises() {
        let z = ThetaDraw::Zisnb { c: 2.5, w: 0.4, p: 0.3 };
        let total: f64 = (0..2000).map(|a| z.log_pmf(a).unwrap().prob()).sum();
        assert!((total - 1.0).abs() < 1e-10);
        let edge = ThetaDraw::Zisnb { c: 2.5, w: 0.4, p: 1.0 };
        assert!((edge.log_pmf(1).unwrap().prob() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(KernelHyper::beta_bernoulli(0.0, 1.0).is_err());
        assert!(KernelHyper::gamma_poisson(1.0, -1.0).is_err());
        assert!(KernelHyper::zisnb(0.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(KernelHyper::beta_bernoulli_from_alpha_beta(0.5, 1.0).is_err());
        let k = KernelHyper::beta_bernoulli_from_alpha_beta(-0.2, 10.2).unwrap();
        assert_eq!(k, KernelHyper::BetaBernoulli { a: 0.2, b: 10.0 });
        let bb = KernelHyper::beta_bernoulli(1.0, 1.0).unwrap();
        assert!(bb.log_marginal_column(&ColumnCounts::new(vec![2])).is_err());
    }

    #[test]
    fn free_params_round_trip() {
        for k in kernels() {
            let p = k.free_params();
            assert_eq!(p.len(), k.free_param_names().len());
            assert_eq!(k.with_free_params(&p).unwrap(), k);
        }
        let k = kernels()[0];
        assert!(k.with_free_params(&[1.0]).is_err());
        assert!(k.with_free_params(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn posterior_theta_moments() {
        let mut rng = chain_rng(21, 0);
        let draws = 100_000;
        let bb = KernelHyper::beta_bernoulli(1.0, 1.0).unwrap();
        let s = ColumnStats::of(&bb, &[1, 1, 1]);
        let mean = (0..draws).map(|_| bb.sample_posterior_theta(&s, &mut rng).primary()).sum::<f64>()
            / draws as f64;
        assert!((mean - 0.8).abs() < 0.005, "mean={mean}");

        let bb = KernelHyper::beta_bernoulli(0.5, 10.0).unwrap();
        let s = ColumnStats::of(&bb, &[0; 20]);
        let mean = (0..draws).map(|_| bb.sample_posterior_theta(&s, &mut rng).primary()).sum::<f64>()
            / draws as f64;
        // Beta(0.5, 30): sd ≈ 0.0179, MC error ≈ 5.7e-5.
        assert!((mean - 0.5 / 30.5).abs() < 3e-4, "mean={mean}");

        let gp = KernelHyper::gamma_poisson(2.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..draws)
            .map(|_| gp.sample_posterior_theta(&ColumnStats::empty(), &mut rng).primary())
            .collect();
        let mean = xs.iter().sum::<f64>() / draws as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        assert!((mean - 2.0).abs() < 0.02, "mean={mean}");
        assert!((var - 2.0).abs() < 0.06, "var={var}");
    }

    #[test]
    fn unseen_theta_moments() {
        let mut rng = chain_rng(22, 0);
        let draws = 100_000;
        let gp = KernelHyper::gamma_poisson(1.0, 1.0).unwrap();
        let mean = (0..draws).map(|_| gp.sample_unseen_theta(1, &mut rng).primary()).sum::<f64>()
            / draws as f64;
        assert!((mean - 0.5).abs() < 0.006, "mean={mean}");
        let bb = KernelHyper::beta_bernoulli(0.5, 0.5).unwrap();
        let mean = (0..draws).map(|_| bb.sample_unseen_theta(2, &mut rng).primary()).sum::<f64>()
            / draws as f64;
        assert!((mean - 0.5 / 3.0).abs() < 0.003, "mean={mean}");
        // n = 0 is the prior: uniform for Beta(1, 1).
        let bb = KernelHyper::beta_bernoulli(1.0, 1.0).unwrap();
        let below = (0..draws)
            .filter(|_| bb.sample_unseen_theta(0, &mut rng).primary() < 0.25)
            .count() as f64
            / draws as f64;
        assert!((below - 0.25).abs() < 0.005);
    }

    #[test]
    fn conjugacy_by_monte_carlo() {
        // E_{θ | counts}[P(a; θ)] equals the closed-form predictive.
        let mut rng = chain_rng(23, 0);
        let draws = 40_000;
        for k in kernels() {
            let counts = sample_counts(&k, 5);
            let s = ColumnStats::of(&k, &counts);
            for a in [0u32, 1, 2] {
                if k.check_support(a).is_err() {
                    continue;
                }
                let vals: Vec<f64> = (0..draws)
                    .map(|_| k.sample_posterior_theta(&s, &mut rng).log_pmf(a).unwrap().prob())
                    .collect();
                let mean = vals.iter().sum::<f64>() / draws as f64;
                let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
                let se = sd / (draws as f64).sqrt();
                let want = k.log_predictive(&s, a).exp();
                assert!((mean - want).abs() < 3.0 * se + 1e-12, "{k:?} a={a}: {mean} vs {want} (se {se})");
            }
        }
    }

    #[test]
    fn sample_count_matches_pmf() {
        let mut rng = chain_rng(24, 0);
        let draws = 100_000;
        for theta in [
            ThetaDraw::Bernoulli(0.3),
            ThetaDraw::Poisson(2.2),
            ThetaDraw::Zisnb { c: 1.7, w: 0.6, p: 0.4 },
        ] {
            let mut hist = [0usize; 8];
            for _ in 0..draws {
                let a = theta.sample_count(&mut rng) as usize;
                hist[a.min(7)] += 1;
            }
            for (a, &h) in hist.iter().enumerate().take(7) {
                if theta.log_pmf(a as u32).is_err() {
                    assert_eq!(h, 0);
                    continue;
                }
                let p = theta.log_pmf(a as u32).unwrap().prob();
                let se = (p * (1.0 - p) / draws as f64).sqrt();
                let f = h as f64 / draws as f64;
                assert!((f - p).abs() < 4.0 * se + 1e-9, "{theta:?} a={a}: {f} vs {p}");
            }
        }
    }
}
