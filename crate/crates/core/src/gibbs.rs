//! Marginal Gibbs sampler for unknown groups.
//!
//! Subjects are reassigned one at a time with probabilities proportional to
//! the Pitman–Yor prediction rule times the marginal law of the whole matrix
//! under the candidate partition. Only the target cluster's column marginals
//! and the global unseen-trait exponent change between candidates, so the
//! sampler keeps per-(cluster, column) sufficient statistics and evaluates
//! each candidate with one predictive term per positive entry of the moving
//! subject.
//!
//! The same state drives the naive fixed-`N` variant (no unseen traits, so
//! no exponent term) and the known-groups model (partition frozen, only the
//! hyperparameters move).

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GroupedCounts;
use crate::error::{Error, Result};
use crate::kernel::{ColumnStats, KernelHyper};
use crate::math::lse;
use crate::partition::canonical_labels;
use crate::petpf::log_petpf_from_parts;
use crate::posterior::{mh_psi_step, update_lambda_gibbs, ModelHyper, ScaleAdapter};
use crate::rng::{self, chain_rng, ChainRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// Pitman–Yor mixture with the full marginal likelihood.
    UnknownGroups,
    /// Pitman–Yor mixture assuming every trait was observed (`N = k`).
    NaiveFixedN,
    /// Partition fixed to the data's groups.
    KnownGroups,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    OneCluster,
    Singletons,
    /// Uniform random labels over this many clusters.
    Random(usize),
    Labels(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub variant: ModelVariant,
    /// Tune ψ proposal scales during burn-in.
    pub adapt: bool,
    pub proposal_scale: f64,
    /// Visit subjects in a fresh random order each sweep.
    pub random_scan: bool,
    pub init: Init,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 10_000,
            burn_in: 1_000,
            thin: 2,
            seed: 1,
            chains: 1,
            variant: ModelVariant::UnknownGroups,
            adapt: true,
            proposal_scale: 0.3,
            random_scan: false,
            init: Init::OneCluster,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.iterations > 0 && self.iterations <= self.burn_in {
            return Err(Error::Config(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.chains == 0 {
            return Err(Error::Config("at least one chain is required".into()));
        }
        if !(self.proposal_scale > 0.0) {
            return Err(Error::Config("proposal_scale must be positive".into()));
        }
        Ok(())
    }
}

/// One retained state of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraw {
    pub iteration: usize,
    /// Canonical (first-occurrence) cluster labels.
    pub labels: Vec<usize>,
    pub lambda: f64,
    pub psi: KernelHyper,
    /// Draw of the unseen-trait count given the current state.
    pub n_prime: u64,
    /// Log-likelihood of the data under the state: the marginal law, or for
    /// the naive variant the law conditional on `N = k`.
    pub log_petpf: f64,
    /// ψ acceptance flags from this iteration's MH sweep.
    pub accepted: Vec<bool>,
}

impl ChainDraw {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chain: usize,
    pub variant: ModelVariant,
    pub draws: Vec<ChainDraw>,
    /// Post-burn-in acceptance rate per ψ component; empty when ψ is fixed.
    pub acceptance: Vec<f64>,
    pub proposal_scales: Vec<f64>,
}

/// Sampler state: a partition with cached per-cluster statistics.
///
/// Clusters live in slots; emptied slots are recycled. Candidate clusters are
/// always visited in ascending slot order.
#[derive(Debug, Clone)]
pub struct GibbsState<'a> {
    data: &'a GroupedCounts,
    variant: ModelVariant,
    kernel: KernelHyper,
    lambda: f64,
    hyper: ModelHyper,
    k: usize,
    assign: Vec<usize>,
    sizes: Vec<usize>,
    /// `[slot * k + l]`
    stats: Vec<ColumnStats>,
    /// `log_predictive(stats, 0)` per `[slot * k + l]`.
    pred_zero: Vec<f64>,
    pred_zero_sum: Vec<f64>,
    /// Positive entries `(column, count)` per subject.
    nonzero: Vec<Vec<(usize, u32)>>,
    /// Log predictive of each subject alone in a new cluster.
    new_cluster: Vec<f64>,
    /// `ln p0(n)` for `n = 0..=n_subjects`.
    lp0: Vec<f64>,
    free_slots: Vec<usize>,
}

impl<'a> GibbsState<'a> {
    /// State at `labels`; for [`ModelVariant::KnownGroups`] pass the data's
    /// groups.
    pub fn new(
        data: &'a GroupedCounts,
        hyper: &ModelHyper,
        kernel: &KernelHyper,
        variant: ModelVariant,
        labels: &[usize],
    ) -> Result<Self> {
        hyper.validate(kernel)?;
        data.check_kernel_support(kernel)?;
        let n = data.n_subjects();
        if labels.len() != n {
            return Err(Error::InvalidData(format!("{} labels for {n} subjects", labels.len())));
        }
        let k = data.n_traits();
        let n_slots = labels.iter().copied().max().map_or(0, |m| m + 1);
        let nonzero = (0..n)
            .map(|i| {
                data.row(i).iter().enumerate().filter(|(_, &a)| a > 0).map(|(l, &a)| (l, a)).collect()
            })
            .collect();
        let mut state = GibbsState {
            data,
            variant,
            kernel: *kernel,
            lambda: hyper.lambda,
            hyper: hyper.clone(),
            k,
            assign: labels.to_vec(),
            sizes: vec![0; n_slots],
            stats: vec![ColumnStats::empty(); n_slots * k],
            pred_zero: vec![0.0; n_slots * k],
            pred_zero_sum: vec![0.0; n_slots],
            nonzero,
            new_cluster: vec![0.0; n],
            lp0: Vec::new(),
            free_slots: Vec::new(),
        };
        for i in 0..n {
            let s = labels[i];
            state.sizes[s] += 1;
            for l in 0..k {
                state.stats[s * k + l].push(kernel, data.get(i, l));
            }
        }
        if variant != ModelVariant::KnownGroups {
            state.free_slots = (0..n_slots).rev().filter(|&s| state.sizes[s] == 0).collect();
        }
        state.refresh_kernel_caches();
        Ok(state)
    }

    fn refresh_kernel_caches(&mut self) {
        self.lp0 = self.kernel.log_p_zero_table(self.data.n_subjects() + 1);
        for s in 0..self.sizes.len() {
            self.refresh_slot(s);
        }
        let empty = ColumnStats::empty();
        for i in 0..self.nonzero.len() {
            self.new_cluster[i] = self.nonzero[i]
                .iter()
                .map(|&(_, a)| self.kernel.log_predictive(&empty, a) - self.kernel.log_predictive(&empty, 0))
                .sum::<f64>()
                + self.k as f64 * self.kernel.log_predictive(&empty, 0);
        }
    }

    fn refresh_slot(&mut self, s: usize) {
        let k = self.k;
        let mut sum = 0.0;
        for l in 0..k {
            let v = self.kernel.log_predictive(&self.stats[s * k + l], 0);
            self.pred_zero[s * k + l] = v;
            sum += v;
        }
        self.pred_zero_sum[s] = sum;
    }

    fn remove(&mut self, i: usize) -> usize {
        let s = self.assign[i];
        let k = self.k;
        let row = self.data.row(i);
        for l in 0..k {
            self.stats[s * k + l].pop(&self.kernel, row[l]);
        }
        self.sizes[s] -= 1;
        if self.sizes[s] == 0 && self.variant != ModelVariant::KnownGroups {
            self.free_slots.push(s);
        }
        self.refresh_slot(s);
        s
    }

    fn insert(&mut self, i: usize, s: usize) {
        let k = self.k;
        let row = self.data.row(i);
        for l in 0..k {
            self.stats[s * k + l].push(&self.kernel, row[l]);
        }
        self.sizes[s] += 1;
        self.assign[i] = s;
        self.refresh_slot(s);
    }

    fn new_slot(&mut self) -> usize {
        if let Some(s) = self.free_slots.pop() {
            return s;
        }
        let s = self.sizes.len();
        self.sizes.push(0);
        self.stats.extend(std::iter::repeat_n(ColumnStats::empty(), self.k));
        self.pred_zero.extend(std::iter::repeat_n(0.0, self.k));
        self.pred_zero_sum.push(0.0);
        self.refresh_slot(s);
        s
    }

    fn log_p0_sum(&self) -> f64 {
        self.sizes.iter().map(|&n| self.lp0[n]).sum()
    }

    /// Active cluster slots with subject `i` removed, plus their logits and
    /// the new-cluster logit (last entry). Expects `i` to be unassigned.
    fn logits_without(&self, i: usize) -> (Vec<usize>, Vec<f64>) {
        let k = self.k;
        let py = &self.hyper.py;
        let with_exponent = self.variant == ModelVariant::UnknownGroups;
        let base_lp0 = self.log_p0_sum();
        let exponent = |delta: f64| -self.lambda * (-(base_lp0 + delta).exp_m1());
        let mut slots = Vec::new();
        let mut logits = Vec::new();
        for (s, &size) in self.sizes.iter().enumerate() {
            if size == 0 {
                continue;
            }
            let mut v = py.log_join_weight(size) + self.pred_zero_sum[s];
            for &(l, a) in &self.nonzero[i] {
                v += self.kernel.log_predictive(&self.stats[s * k + l], a) - self.pred_zero[s * k + l];
            }
            if with_exponent {
                v += exponent(self.lp0[size + 1] - self.lp0[size]);
            }
            slots.push(s);
            logits.push(v);
        }
        let mut v = py.log_new_weight(slots.len()) + self.new_cluster[i];
        if with_exponent {
            v += exponent(self.lp0[1]);
        }
        logits.push(v);
        (slots, logits)
    }

    /// Normalized log allocation probabilities for subject `i` over the
    /// other subjects' clusters (given as canonical labels of the reduced
    /// partition, in slot order) and a new cluster (last entry). The state is
    /// left unchanged.
    pub fn allocation_log_probs(&mut self, i: usize) -> (Vec<Vec<usize>>, Vec<f64>) {
        let s = self.remove(i);
        let (slots, logits) = self.logits_without(i);
        let norm = lse(logits.iter().copied());
        let mut candidates = Vec::with_capacity(slots.len() + 1);
        for &t in &slots {
            let mut labels = self.assign.clone();
            labels[i] = t;
            candidates.push(canonical_labels(&labels));
        }
        let mut labels = self.assign.clone();
        labels[i] = usize::MAX;
        candidates.push(canonical_labels(&labels));
        // Undo the removal.
        if self.sizes[s] == 0 && self.variant != ModelVariant::KnownGroups {
            let pos = self.free_slots.iter().rposition(|&f| f == s).expect("slot was freed");
            self.free_slots.remove(pos);
        }
        self.insert(i, s);
        (candidates, logits.iter().map(|v| v - norm).collect())
    }

    /// One Gibbs update of subject `i`.
    pub fn reassign<R: Rng + ?Sized>(&mut self, i: usize, rng: &mut R) {
        self.remove(i);
        let (slots, logits) = self.logits_without(i);
        let norm = lse(logits.iter().copied());
        let pick = rng::categorical(rng, &logits, norm);
        let target = if pick < slots.len() { slots[pick] } else { self.new_slot() };
        self.insert(i, target);
    }

    pub fn sweep<R: Rng + ?Sized>(&mut self, random_scan: bool, rng: &mut R) {
        let n = self.data.n_subjects();
        if random_scan {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            for i in order {
                self.reassign(i, rng);
            }
        } else {
            for i in 0..n {
                self.reassign(i, rng);
            }
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        canonical_labels(&self.assign)
    }

    pub fn n_clusters(&self) -> usize {
        self.sizes.iter().filter(|&&n| n > 0).count()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kernel(&self) -> &KernelHyper {
        &self.kernel
    }

    pub fn p0(&self) -> f64 {
        self.log_p0_sum().exp()
    }

    fn log_likelihood_with(&self, kernel: &KernelHyper) -> f64 {
        let k = self.k;
        let mut marg = 0.0;
        let mut lp0 = 0.0;
        for (s, &size) in self.sizes.iter().enumerate() {
            if size == 0 {
                continue;
            }
            lp0 += kernel.log_p_zero(size as u64);
            marg += self.stats[s * k..(s + 1) * k].iter().map(|st| kernel.log_marginal(st)).sum::<f64>();
        }
        match self.variant {
            ModelVariant::NaiveFixedN => marg,
            _ => log_petpf_from_parts(k, self.lambda, lp0, marg),
        }
    }

    /// Log-likelihood of the data under the current state.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood_with(&self.kernel)
    }

    /// Gibbs draw of `λ` given the partition (no-op when `λ` is fixed or for
    /// the naive variant, whose likelihood does not involve `λ`).
    pub fn update_lambda<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if let (Some(prior), false) = (self.hyper.lambda_prior, self.variant == ModelVariant::NaiveFixedN) {
            self.lambda = update_lambda_gibbs(self.k, self.p0(), &prior, rng)?;
        }
        Ok(())
    }

    /// One MH sweep over ψ; returns acceptance flags (empty when ψ is fixed).
    pub fn update_psi<R: Rng + ?Sized>(&mut self, scales: &[f64], rng: &mut R) -> Result<Vec<bool>> {
        let Some(priors) = self.hyper.psi_prior.clone() else {
            return Ok(Vec::new());
        };
        let current = self.log_likelihood();
        let (kernel, _, flags) =
            mh_psi_step(&self.kernel, &priors, scales, current, |cand| Ok(self.log_likelihood_with(cand)), rng)?;
        if kernel != self.kernel {
            self.kernel = kernel;
            self.refresh_kernel_caches();
        }
        Ok(flags)
    }

    /// Draw of the unseen count given the current state (zero for the naive
    /// variant).
    pub fn sample_n_prime<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self.variant {
            ModelVariant::NaiveFixedN => 0,
            _ => rng::poisson(rng, self.lambda * self.p0()),
        }
    }

    /// Recomputes the cached statistics from scratch and compares.
    pub fn check_consistency(&self) -> Result<()> {
        let k = self.k;
        let mut sizes = vec![0; self.sizes.len()];
        let mut stats = vec![ColumnStats::empty(); self.stats.len()];
        for i in 0..self.data.n_subjects() {
            let s = self.assign[i];
            sizes[s] += 1;
            for l in 0..k {
                stats[s * k + l].push(&self.kernel, self.data.get(i, l));
            }
        }
        if sizes != self.sizes {
            return Err(Error::Numeric("cluster sizes drifted from the assignment".into()));
        }
        for (a, b) in stats.iter().zip(&self.stats) {
            if !a.approx_eq(b, 1e-8) {
                return Err(Error::Numeric(format!("cached statistics {b:?} differ from {a:?}")));
            }
        }
        Ok(())
    }
}

/// Log-likelihood a [`ChainDraw`] should carry, recomputed from its labels.
pub fn recompute_log_petpf(
    data: &GroupedCounts,
    draw: &ChainDraw,
    variant: ModelVariant,
) -> Result<f64> {
    let d = draw.n_clusters().max(1);
    let grouped = data.with_groups(&draw.labels, d)?;
    match variant {
        ModelVariant::NaiveFixedN => {
            crate::petpf::log_petpf_conditional(&grouped, data.n_traits() as u64, &draw.psi)
        }
        _ => crate::petpf::log_petpf_marginal(&grouped, draw.lambda, &draw.psi),
    }
}

fn initial_labels<R: Rng + ?Sized>(data: &GroupedCounts, config: &McmcConfig, rng: &mut R) -> Result<Vec<usize>> {
    let n = data.n_subjects();
    if config.variant == ModelVariant::KnownGroups {
        return Ok(data.group_of().to_vec());
    }
    Ok(match &config.init {
        Init::OneCluster => vec![0; n],
        Init::Singletons => (0..n).collect(),
        Init::Random(d) => {
            if *d == 0 {
                return Err(Error::Config("random init needs at least one cluster".into()));
            }
            canonical_labels(&(0..n).map(|_| rng.random_range(0..*d)).collect::<Vec<_>>())
        }
        Init::Labels(l) => {
            if l.len() != n {
                return Err(Error::Config(format!("init labels have length {}, expected {n}", l.len())));
            }
            canonical_labels(l)
        }
    })
}

/// Runs one chain with its own generator stream `chain`.
pub fn run_chain(
    data: &GroupedCounts,
    hyper: &ModelHyper,
    kernel: &KernelHyper,
    config: &McmcConfig,
    chain: usize,
) -> Result<ChainOutput> {
    config.validate()?;
    let mut rng: ChainRng = chain_rng(config.seed, chain as u64);
    let labels = initial_labels(data, config, &mut rng)?;
    let mut state = GibbsState::new(data, hyper, kernel, config.variant, &labels)?;
    let n_psi = kernel.free_param_names().len();
    let mut adapter = ScaleAdapter::new(n_psi, config.proposal_scale);
    let mut accepted = vec![0usize; n_psi];
    let mut post_burn = 0usize;
    let mut draws = Vec::new();
    for t in 1..=config.iterations {
        if config.variant != ModelVariant::KnownGroups {
            state.sweep(config.random_scan, &mut rng);
        }
        state.update_lambda(&mut rng)?;
        let flags = state.update_psi(&adapter.scales.clone(), &mut rng)?;
        let n_prime = state.sample_n_prime(&mut rng);
        if cfg!(debug_assertions) {
            state.check_consistency()?;
        }
        if t <= config.burn_in {
            if config.adapt && !flags.is_empty() {
                adapter.record(&flags);
            }
            continue;
        }
        post_burn += 1;
        for (a, &f) in accepted.iter_mut().zip(&flags) {
            *a += f as usize;
        }
        if (t - config.burn_in) % config.thin == 0 {
            let log_petpf = state.log_likelihood();
            if !log_petpf.is_finite() {
                return Err(Error::Numeric(format!("log-likelihood {log_petpf} at iteration {t}")));
            }
            draws.push(ChainDraw {
                iteration: t,
                labels: state.labels(),
                lambda: state.lambda(),
                psi: *state.kernel(),
                n_prime,
                log_petpf,
                accepted: flags,
            });
        }
    }
    let acceptance = if hyper.psi_prior.is_none() {
        Vec::new()
    } else {
        accepted.iter().map(|&a| a as f64 / post_burn.max(1) as f64).collect()
    };
    Ok(ChainOutput { chain, variant: config.variant, draws, acceptance, proposal_scales: adapter.scales })
}

/// Runs `config.chains` independent chains on a pool of `threads` workers
/// (all cores when `None`). Results do not depend on the thread count.
pub fn run_chains(
    data: &GroupedCounts,
    hyper: &ModelHyper,
    kernel: &KernelHyper,
    config: &McmcConfig,
    threads: Option<usize>,
) -> Result<Vec<ChainOutput>> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..config.chains)
            .into_par_iter()
            .map(|c| run_chain(data, hyper, kernel, config, c))
            .collect()
    })
}
