//! Forward simulation from the model and from fixed-probability scenarios.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::GroupedCounts;
use crate::error::{domain, Error, Result};
use crate::kernel::{KernelHyper, ThetaDraw};
use crate::rng;

/// Latent quantities behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTruth {
    /// Total number of traits in the population.
    pub n_total: usize,
    /// `θ` indexed `[j * d + q]` over all `n_total` traits.
    pub theta: Vec<ThetaDraw>,
    /// Latent index of each observed column, ascending.
    pub observed: Vec<usize>,
}

impl ModelTruth {
    pub fn n_unseen(&self) -> usize {
        self.n_total - self.observed.len()
    }
}

fn subject_layout(group_sizes: &[usize]) -> (Vec<String>, Vec<usize>, Vec<String>) {
    let ids = (1..=group_sizes.iter().sum::<usize>()).map(|i| format!("s{i}")).collect();
    let group_of = group_sizes.iter().enumerate().flat_map(|(q, &n)| std::iter::repeat_n(q, n)).collect();
    let groups = (1..=group_sizes.len()).map(|q| format!("g{q}")).collect();
    (ids, group_of, groups)
}

/// Keeps the columns with a positive entry; labels are `t{latent index + 1}`.
fn observed_matrix(
    latent: &[Vec<u32>],
    n_total: usize,
    group_sizes: &[usize],
) -> Result<(GroupedCounts, Vec<usize>)> {
    let observed: Vec<usize> = (0..n_total).filter(|&j| latent.iter().any(|row| row[j] > 0)).collect();
    let rows = latent.iter().map(|row| observed.iter().map(|&j| row[j]).collect()).collect();
    let (ids, group_of, groups) = subject_layout(group_sizes);
    let labels = observed.iter().map(|&j| format!("t{}", j + 1)).collect();
    Ok((GroupedCounts::new(ids, labels, rows, group_of, groups)?, observed))
}

/// Simulates `n_total` traits with iid `θ ~ H(ψ)` per (trait, group).
/// Subjects are ordered group by group.
pub fn simulate_fixed_n<R: Rng + ?Sized>(
    group_sizes: &[usize],
    n_total: usize,
    kernel: &KernelHyper,
    rng: &mut R,
) -> Result<(GroupedCounts, ModelTruth)> {
    kernel.validate()?;
    if group_sizes.is_empty() {
        return Err(domain("at least one group is required"));
    }
    let d = group_sizes.len();
    let theta: Vec<ThetaDraw> = (0..n_total * d).map(|_| kernel.sample_prior_theta(rng)).collect();
    let mut latent = Vec::with_capacity(group_sizes.iter().sum());
    for (q, &n) in group_sizes.iter().enumerate() {
        for _ in 0..n {
            latent.push((0..n_total).map(|j| theta[j * d + q].sample_count(rng)).collect::<Vec<u32>>());
        }
    }
    let (data, observed) = observed_matrix(&latent, n_total, group_sizes)?;
    Ok((data, ModelTruth { n_total, theta, observed }))
}

/// Simulates from the generative model with `N ~ Poisson(λ)`.
pub fn simulate_from_model<R: Rng + ?Sized>(
    group_sizes: &[usize],
    lambda: f64,
    kernel: &KernelHyper,
    rng: &mut R,
) -> Result<(GroupedCounts, ModelTruth)> {
    if !(lambda > 0.0) {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    let n_total = rng::rng_poisson(rng, lambda)?;
    simulate_fixed_n(group_sizes, n_total as usize, kernel, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub size: usize,
    pub prob: f64,
}

/// Traits attended with probability `prob` by every group in `groups`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedBlock {
    /// Zero-based group indices.
    pub groups: Vec<usize>,
    pub size: usize,
    pub prob: f64,
}

/// Fixed-probability binary scenario.
///
/// Trait indices are laid out as: the `exclusive` blocks of group 1, of
/// group 2, ..., then the `shared` blocks; the rest are unreserved. For each
/// group, the `random` blocks are filled with traits drawn uniformly from
/// those not reserved for that group (other groups' reserved traits
/// included), and every remaining trait gets `background_prob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub n_traits: usize,
    pub group_sizes: Vec<usize>,
    pub exclusive: Vec<Block>,
    #[serde(default)]
    pub shared: Vec<SharedBlock>,
    pub random: Vec<Block>,
    pub background_prob: f64,
}

/// Result of a scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTruth {
    pub n_total: usize,
    /// True group of each subject.
    pub partition: Vec<usize>,
    /// Attendance probability `[q * n_total + j]`.
    pub probs: Vec<f64>,
    pub observed: Vec<usize>,
}

impl ScenarioTruth {
    pub fn n_unseen(&self) -> usize {
        self.n_total - self.observed.len()
    }
}

fn check_prob(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(domain(format!("probability {p} outside (0, 1]")))
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.group_sizes.len();
        if d == 0 || self.group_sizes.contains(&0) {
            return Err(Error::Config("group sizes must be positive".into()));
        }
        let blocks = self.exclusive.iter().chain(&self.random);
        for b in blocks {
            check_prob(b.prob)?;
        }
        check_prob(self.background_prob)?;
        let excl: usize = self.exclusive.iter().map(|b| b.size).sum();
        let shared: usize = self.shared.iter().map(|b| b.size).sum();
        for s in &self.shared {
            check_prob(s.prob)?;
            if s.groups.iter().any(|&g| g >= d) {
                return Err(Error::Config(format!("shared block refers to a group beyond {d}")));
            }
        }
        if excl * d + shared > self.n_traits {
            return Err(Error::Config(format!(
                "{} reserved traits exceed the {} available",
                excl * d + shared,
                self.n_traits
            )));
        }
        let random: usize = self.random.iter().map(|b| b.size).sum();
        for g in 0..d {
            let own: usize = excl + self.shared.iter().filter(|s| s.groups.contains(&g)).map(|s| s.size).sum::<usize>();
            if own + random > self.n_traits {
                return Err(Error::Config(format!(
                    "group {} needs {} traits but only {} exist",
                    g + 1,
                    own + random,
                    self.n_traits
                )));
            }
        }
        Ok(())
    }

    /// Draws the per-group attendance probabilities `[q * n_traits + j]`.
    pub fn layout<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.n_traits;
        let d = self.group_sizes.len();
        let excl: usize = self.exclusive.iter().map(|b| b.size).sum();
        let mut probs = vec![f64::NAN; d * n];
        let mut reserved_for = vec![usize::MAX; n];
        let mut next = 0;
        for g in 0..d {
            for b in &self.exclusive {
                for j in next..next + b.size {
                    probs[g * n + j] = b.prob;
                    reserved_for[j] = g;
                }
                next += b.size;
            }
        }
        debug_assert_eq!(next, excl * d);
        let mut shared_of = vec![None; n];
        for (s_idx, s) in self.shared.iter().enumerate() {
            for j in next..next + s.size {
                shared_of[j] = Some(s_idx);
                for &g in &s.groups {
                    probs[g * n + j] = s.prob;
                }
            }
            next += s.size;
        }
        for g in 0..d {
            let mut pool: Vec<usize> = (0..n)
                .filter(|&j| {
                    reserved_for[j] != g && !shared_of[j].is_some_and(|s| self.shared[s].groups.contains(&g))
                })
                .collect();
            pool.shuffle(rng);
            let mut it = pool.into_iter();
            for b in &self.random {
                for j in it.by_ref().take(b.size) {
                    probs[g * n + j] = b.prob;
                }
            }
            for j in it {
                probs[g * n + j] = self.background_prob;
            }
        }
        debug_assert!(probs.iter().all(|p| !p.is_nan()));
        Ok(probs)
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(GroupedCounts, ScenarioTruth)> {
        let probs = self.layout(rng)?;
        let n = self.n_traits;
        let mut latent = Vec::new();
        let mut partition = Vec::new();
        for (q, &size) in self.group_sizes.iter().enumerate() {
            for _ in 0..size {
                latent.push((0..n).map(|j| (rng.random::<f64>() < probs[q * n + j]) as u32).collect::<Vec<u32>>());
                partition.push(q);
            }
        }
        let (data, observed) = observed_matrix(&latent, n, &self.group_sizes)?;
        Ok((data, ScenarioTruth { n_total: n, partition, probs, observed }))
    }

    /// Scenario with 15 high-probability core traits per group.
    pub fn scenario1() -> Self {
        ScenarioSpec {
            name: "scenario1".into(),
            n_traits: 500,
            group_sizes: vec![20, 25, 15, 15, 5],
            exclusive: vec![Block { size: 15, prob: 0.3 }],
            shared: vec![],
            random: vec![
                Block { size: 10, prob: 0.3 },
                Block { size: 50, prob: 0.05 },
                Block { size: 125, prob: 0.01 },
            ],
            background_prob: 0.002,
        }
    }

    /// Scenario with 50 high-probability traits per group plus two blocks of
    /// 20 shared by groups (1, 2) and (1, 4).
    pub fn scenario2() -> Self {
        ScenarioSpec {
            name: "scenario2".into(),
            n_traits: 500,
            group_sizes: vec![20, 25, 15, 15, 5],
            exclusive: vec![Block { size: 50, prob: 0.4 }],
            shared: vec![
                SharedBlock { groups: vec![0, 1], size: 20, prob: 0.4 },
                SharedBlock { groups: vec![0, 3], size: 20, prob: 0.4 },
            ],
            random: vec![Block { size: 50, prob: 0.05 }, Block { size: 150, prob: 0.01 }],
            background_prob: 0.002,
        }
    }

    /// `scenario1` with 100 traits and 40 subjects, blocks shrunk by 5.
    pub fn scenario1_scaled() -> Self {
        ScenarioSpec {
            name: "scenario1-scaled".into(),
            n_traits: 100,
            group_sizes: vec![10, 13, 7, 7, 3],
            exclusive: vec![Block { size: 3, prob: 0.3 }],
            shared: vec![],
            random: vec![
                Block { size: 2, prob: 0.3 },
                Block { size: 10, prob: 0.05 },
                Block { size: 25, prob: 0.01 },
            ],
            background_prob: 0.002,
        }
    }

    /// `scenario2` with 100 traits and 40 subjects, blocks shrunk by 5.
    pub fn scenario2_scaled() -> Self {
        ScenarioSpec {
            name: "scenario2-scaled".into(),
            n_traits: 100,
            group_sizes: vec![10, 13, 7, 7, 3],
            exclusive: vec![Block { size: 10, prob: 0.4 }],
            shared: vec![
                SharedBlock { groups: vec![0, 1], size: 4, prob: 0.4 },
                SharedBlock { groups: vec![0, 3], size: 4, prob: 0.4 },
            ],
            random: vec![Block { size: 10, prob: 0.05 }, Block { size: 30, prob: 0.01 }],
            background_prob: 0.002,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "scenario1" => Ok(Self::scenario1()),
            "scenario2" => Ok(Self::scenario2()),
            "scenario1-scaled" => Ok(Self::scenario1_scaled()),
            "scenario2-scaled" => Ok(Self::scenario2_scaled()),
            other => Err(Error::Config(format!("unknown scenario preset '{other}'"))),
        }
    }
}

/// Probability that trait `j` is observed in the sample, for every `j`.
pub fn retention_probabilities(probs: &[f64], group_sizes: &[usize]) -> Vec<f64> {
    let d = group_sizes.len();
    let n = probs.len() / d;
    (0..n)
        .map(|j| {
            let log_unseen: f64 =
                group_sizes.iter().enumerate().map(|(q, &s)| s as f64 * (-probs[q * n + j]).ln_1p()).sum();
            -log_unseen.exp_m1()
        })
        .collect()
}

/// Exact law of a sum of independent Bernoulli variables.
pub fn poisson_binomial_pmf(probs: &[f64]) -> Vec<f64> {
    let mut pmf = vec![1.0];
    for &p in probs {
        let mut next = vec![0.0; pmf.len() + 1];
        for (k, &v) in pmf.iter().enumerate() {
            next[k] += v * (1.0 - p);
            next[k + 1] += v * p;
        }
        pmf = next;
    }
    pmf
}

/// Group sizes `(100, 60, 40, 20, 20)` of the uneven-groups binary
/// experiment (500 traits, `θ ~ Beta(0.1, 10)`).
pub fn uneven_groups_sizes() -> Vec<usize> {
    vec![100, 60, 40, 20, 20]
}

/// The uneven-groups layout at 40% size, used with 200 traits.
pub fn uneven_groups_reduced_sizes() -> Vec<usize> {
    vec![40, 24, 16, 8, 8]
}

/// `Beta(0.1, 10)` trait probabilities.
pub fn uneven_groups_kernel() -> KernelHyper {
    KernelHyper::BetaBernoulli { a: 0.1, b: 10.0 }
}

/// `W = A Aᵀ` for binary data.
pub fn adjacency_from_counts(data: &GroupedCounts) -> Result<Vec<Vec<u64>>> {
    if !data.is_binary() {
        return Err(Error::InvalidData("adjacency requires binary data".into()));
    }
    let n = data.n_subjects();
    let mut w = vec![vec![0u64; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = data.row(i).iter().zip(data.row(j)).map(|(&a, &b)| (a * b) as u64).sum();
            w[i][j] = v;
            w[j][i] = v;
        }
    }
    Ok(w)
}
