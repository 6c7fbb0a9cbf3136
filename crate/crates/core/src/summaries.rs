//! Post-processing of chain draws.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::data::GroupedCounts;
use crate::error::{domain, Error, Result};
use crate::gibbs::{ChainDraw, ModelVariant};
use crate::kernel::ColumnStats;
use crate::math::{log_factorial, lse};
use crate::posterior::{posterior_adjacency_expectation, ModelHyper};

fn check_same_len(p1: &[usize], p2: &[usize]) -> Result<()> {
    if p1.len() != p2.len() {
        return Err(domain(format!("partitions of {} and {} subjects", p1.len(), p2.len())));
    }
    Ok(())
}

fn dense(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let out: Vec<usize> = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Contingency table of two label vectors, `[a * d2 + b]`.
fn contingency(p1: &[usize], p2: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (a, d1) = dense(p1);
    let (b, d2) = dense(p2);
    let mut table = vec![0usize; d1 * d2];
    let mut rows = vec![0usize; d1];
    let mut cols = vec![0usize; d2];
    for (&x, &y) in a.iter().zip(&b) {
        table[x * d2 + y] += 1;
        rows[x] += 1;
        cols[y] += 1;
    }
    (table, rows, cols)
}

fn entropy_term(count: usize, n: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        let p = count as f64 / n;
        -p * p.ln()
    }
}

/// Variation of information `H(p1) + H(p2) - 2 I(p1, p2)` in nats.
pub fn variation_of_information(p1: &[usize], p2: &[usize]) -> Result<f64> {
    check_same_len(p1, p2)?;
    if p1.is_empty() {
        return Ok(0.0);
    }
    let n = p1.len() as f64;
    let (table, rows, cols) = contingency(p1, p2);
    let h1: f64 = rows.iter().map(|&c| entropy_term(c, n)).sum();
    let h2: f64 = cols.iter().map(|&c| entropy_term(c, n)).sum();
    let h12: f64 = table.iter().map(|&c| entropy_term(c, n)).sum();
    // VI = 2 H(1,2) - H(1) - H(2).
    Ok((2.0 * h12 - h1 - h2).max(0.0))
}

/// Adjusted Rand index (Hubert–Arabie).
pub fn adjusted_rand_index(p1: &[usize], p2: &[usize]) -> Result<f64> {
    check_same_len(p1, p2)?;
    let pairs = |c: usize| (c * c.saturating_sub(1)) as f64 / 2.0;
    let (table, rows, cols) = contingency(p1, p2);
    let index: f64 = table.iter().map(|&c| pairs(c)).sum();
    let a: f64 = rows.iter().map(|&c| pairs(c)).sum();
    let b: f64 = cols.iter().map(|&c| pairs(c)).sum();
    let total = pairs(p1.len());
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = a * b / total;
    let max = 0.5 * (a + b);
    if (max - expected).abs() < 1e-12 {
        // Both partitions trivial (all singletons or one block).
        return Ok(if (index - expected).abs() < 1e-12 { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Co-clustering frequencies across draws.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_partitions(draws: &[Vec<usize>]) -> Result<Self> {
        let first = draws.first().ok_or_else(|| domain("no draws"))?;
        let n = first.len();
        let mut counts = vec![0u64; n * n];
        for labels in draws {
            if labels.len() != n {
                return Err(domain("draws cover different numbers of subjects"));
            }
            for i in 0..n {
                for j in i..n {
                    if labels[i] == labels[j] {
                        counts[i * n + j] += 1;
                    }
                }
            }
        }
        let t = draws.len() as f64;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = counts[i * n + j] as f64 / t;
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Ok(SimilarityMatrix { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Similarity-only approximation of the expected VI of `labels`, obtained
    /// by moving the expectation inside every logarithm. It bounds the
    /// cross term from below but the posterior's own entropy term from
    /// above, so it is not a bound in general.
    pub fn vi_lower_bound(&self, labels: &[usize]) -> f64 {
        let n = self.n;
        (0..n)
            .map(|i| {
                let row = self.row(i);
                let mut same = 0.0f64;
                let mut same_sim = 0.0;
                let mut sim = 0.0;
                for j in 0..n {
                    sim += row[j];
                    if labels[i] == labels[j] {
                        same += 1.0;
                        same_sim += row[j];
                    }
                }
                same.ln() - 2.0 * same_sim.ln() + sim.ln()
            })
            .sum::<f64>()
            / n as f64
    }
}

/// Point estimate of the partition under VI loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MinVi {
    /// Canonical labels of the winning partition.
    pub labels: Vec<usize>,
    /// Index of its first occurrence among the draws.
    pub draw_index: usize,
    /// Exact posterior expected VI against all draws.
    pub expected_vi: f64,
    /// Similarity-only approximation for the winner
    /// ([`SimilarityMatrix::vi_lower_bound`]).
    pub lower_bound: f64,
}

/// Sampled partition minimizing the posterior expected VI.
///
/// Candidates are the distinct sampled partitions; each is scored by its
/// exact expected VI against the empirical posterior. Ties go to the
/// earliest draw.
pub fn min_vi_partition(draws: &[Vec<usize>], similarity: &SimilarityMatrix) -> Result<MinVi> {
    if draws.is_empty() {
        return Err(domain("min_vi_partition needs at least one draw"));
    }
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut unique: Vec<(Vec<usize>, usize, f64)> = Vec::new();
    for (t, d) in draws.iter().enumerate() {
        let c = crate::partition::canonical_labels(d);
        match index.get(&c) {
            Some(&u) => unique[u].2 += 1.0,
            None => {
                index.insert(c.clone(), unique.len());
                unique.push((c, t, 1.0));
            }
        }
    }
    let total = draws.len() as f64;
    let scores: Vec<f64> = unique
        .par_iter()
        .map(|(c, _, _)| {
            unique
                .iter()
                .map(|(other, _, w)| w * variation_of_information(c, other).expect("same length"))
                .sum::<f64>()
                / total
        })
        .collect();
    let mut best = 0;
    for u in 1..unique.len() {
        if scores[u] < scores[best] {
            best = u;
        }
    }
    let (labels, draw_index, _) = unique.swap_remove(best);
    let lower_bound = similarity.vi_lower_bound(&labels);
    Ok(MinVi { labels, draw_index, expected_vi: scores[best], lower_bound })
}

/// Empirical pmfs and traces of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Histograms {
    /// `(value, probability)` in ascending value order.
    pub cluster_count_pmf: Vec<(usize, f64)>,
    pub unseen_count_pmf: Vec<(u64, f64)>,
    pub lambda_trace: Vec<f64>,
    pub psi_trace: Vec<Vec<f64>>,
}

fn pmf<T: Ord + Copy>(values: impl Iterator<Item = T>) -> Vec<(T, f64)> {
    let mut counts = std::collections::BTreeMap::new();
    let mut total = 0usize;
    for v in values {
        *counts.entry(v).or_insert(0usize) += 1;
        total += 1;
    }
    counts.into_iter().map(|(v, c)| (v, c as f64 / total as f64)).collect()
}

pub fn histogram_summaries(draws: &[ChainDraw]) -> Result<Histograms> {
    if draws.is_empty() {
        return Err(domain("no draws to summarize"));
    }
    Ok(Histograms {
        cluster_count_pmf: pmf(draws.iter().map(|d| d.n_clusters())),
        unseen_count_pmf: pmf(draws.iter().map(|d| d.n_prime)),
        lambda_trace: draws.iter().map(|d| d.lambda).collect(),
        psi_trace: draws.iter().map(|d| d.psi.free_params()).collect(),
    })
}

/// Mode of a pmf (smallest value among ties).
pub fn pmf_mode<T: Copy>(pmf: &[(T, f64)]) -> Option<T> {
    let mut best: Option<(T, f64)> = None;
    for &(v, p) in pmf {
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((v, p));
        }
    }
    best.map(|(v, _)| v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waic {
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
    /// `ln mean_t exp(ℓ_ti)` per subject.
    pub pointwise_lppd: Vec<f64>,
    /// Sample variance over draws of `ℓ_ti` per subject.
    pub pointwise_var: Vec<f64>,
}

/// Log pointwise likelihoods `ℓ_ti` for one draw.
///
/// `ℓ_ti` is the log ratio of the data's likelihood to that of the data with
/// subject `i` removed (columns left without a positive entry dropped), both
/// under the draw's partition, `λ` and `ψ`; subject `i` keeps its cluster.
pub fn pointwise_log_likelihood(data: &GroupedCounts, draw: &ChainDraw, variant: ModelVariant) -> Result<Vec<f64>> {
    let n = data.n_subjects();
    if draw.labels.len() != n {
        return Err(Error::InvalidData(format!("draw has {} labels for {n} subjects", draw.labels.len())));
    }
    let kernel = &draw.psi;
    let k = data.n_traits();
    let d = draw.n_clusters();
    let labels = &draw.labels;
    let mut sizes = vec![0usize; d];
    let mut stats = vec![ColumnStats::empty(); d * k];
    let mut positive = vec![0usize; k];
    for i in 0..n {
        let c = labels[i];
        sizes[c] += 1;
        for (l, &a) in data.row(i).iter().enumerate() {
            stats[c * k + l].push(kernel, a);
            positive[l] += (a > 0) as usize;
        }
    }
    let lp0: Vec<f64> = sizes.iter().map(|&s| kernel.log_p_zero(s as u64)).collect();
    let lp0_total: f64 = lp0.iter().sum();
    let with_unseen = variant != ModelVariant::NaiveFixedN;
    let lambda = draw.lambda;
    Ok((0..n)
        .map(|i| {
            let c = labels[i];
            let row = data.row(i);
            let mut dropped = 0usize;
            let mut v = 0.0;
            for (l, &a) in row.iter().enumerate() {
                let s = &stats[c * k + l];
                if a > 0 && positive[l] == 1 {
                    // Column vanishes without i: all of its blocks leave.
                    dropped += 1;
                    v += kernel.log_marginal(s) + (lp0_total - lp0[c]);
                } else {
                    let mut reduced = *s;
                    reduced.pop(kernel, a);
                    v += kernel.log_predictive(&reduced, a);
                }
            }
            if with_unseen {
                let lp0_reduced = lp0_total - lp0[c] + kernel.log_p_zero(sizes[c] as u64 - 1);
                let k_reduced = k - dropped;
                v += dropped as f64 * lambda.ln() - log_factorial(k as u64) + log_factorial(k_reduced as u64)
                    + lambda * (lp0_total.exp() - lp0_reduced.exp());
            }
            v
        })
        .collect())
}

/// WAIC `-2 (lppd - p_waic)` from the pointwise likelihoods of all draws.
pub fn waic(data: &GroupedCounts, draws: &[ChainDraw], variant: ModelVariant) -> Result<Waic> {
    if draws.len() < 2 {
        return Err(domain("WAIC needs at least two draws"));
    }
    let per_draw: Vec<Vec<f64>> = draws
        .par_iter()
        .map(|d| pointwise_log_likelihood(data, d, variant))
        .collect::<Result<_>>()?;
    waic_from_pointwise(&per_draw)
}

/// WAIC from a `draws × subjects` matrix of log pointwise likelihoods.
pub fn waic_from_pointwise(per_draw: &[Vec<f64>]) -> Result<Waic> {
    let t = per_draw.len();
    if t < 2 {
        return Err(domain("WAIC needs at least two draws"));
    }
    let n = per_draw[0].len();
    let ln_t = (t as f64).ln();
    let mut pointwise_lppd = Vec::with_capacity(n);
    let mut pointwise_var = Vec::with_capacity(n);
    for i in 0..n {
        let col = per_draw.iter().map(|r| r[i]);
        if col.clone().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite pointwise likelihood for subject {i}")));
        }
        pointwise_lppd.push(lse(col.clone()) - ln_t);
        let mean = col.clone().sum::<f64>() / t as f64;
        pointwise_var.push(col.map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1) as f64);
    }
    let lppd: f64 = pointwise_lppd.iter().sum();
    let p_waic: f64 = pointwise_var.iter().sum();
    Ok(Waic { waic: -2.0 * (lppd - p_waic), lppd, p_waic, pointwise_lppd, pointwise_var })
}

/// Posterior expected co-attendance matrix averaged over up to `n_samples`
/// evenly spaced draws, each contributing one replicate under its own
/// partition, `λ` and `ψ`. Bernoulli kernel only.
pub fn posterior_adjacency<R: rand::Rng + ?Sized>(
    data: &GroupedCounts,
    draws: &[ChainDraw],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if draws.is_empty() || n_samples == 0 {
        return Err(domain("adjacency needs at least one draw and one sample"));
    }
    let m = n_samples.min(draws.len());
    let n = data.n_subjects();
    let mut acc = vec![vec![0.0; n]; n];
    for s in 0..m {
        let draw = &draws[s * draws.len() / m];
        let hyper = ModelHyper::fixed(draw.lambda);
        let one = posterior_adjacency_expectation(data, &hyper, &draw.psi, &draw.labels, 1, rng)?;
        for (a, b) in acc.iter_mut().zip(one) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
    for row in &mut acc {
        for x in row.iter_mut() {
            *x /= m as f64;
        }
    }
    Ok(acc)
}
