//! Brute-force references for the closed forms. Everything here is computed
//! from definitions: kernel integrals by adaptive Gauss–Kronrod quadrature,
//! sample laws by enumerating latent matrices, Gibbs weights by full
//! recomputation of the joint. Nothing calls the crate's closed forms.

use std::collections::HashMap;

use statrs::function::gamma::ln_gamma;
use traitalloc::{GroupedCounts, KernelHyper};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Globally adaptive Gauss–Kronrod (7, 15) on `[a, b]`: repeatedly bisects
/// the interval with the largest error estimate until the summed estimate is
/// below `tol` (or rounding level relative to the result).
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64, String> {
    adaptive(f, a, b, tol, 0.0)
}

/// As [`integrate`] with a purely relative tolerance.
pub fn integrate_rel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> Result<f64, String> {
    adaptive(f, a, b, 0.0, rel_tol)
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, rel_tol: f64) -> Result<f64, String> {
    const MAX_INTERVALS: usize = 4000;
    let (v, e) = gk15(f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(format!("non-finite integrand on [{a}, {b}]"));
        }
        if err <= tol.max(rel_tol.max(1e-15) * total.abs()) {
            return Ok(total);
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(format!("quadrature did not converge on [{a}, {b}] (err {err:e})"));
        }
        let worst = (0..parts.len()).max_by(|&x, &y| parts[x].3.total_cmp(&parts[y].3)).unwrap();
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// `ln ∫_lo^hi exp(g(t)) dt`, rescaled by the grid maximum of `g` so the
/// integrand stays near one.
fn log_integrate<G: Fn(f64) -> f64>(g: &G, lo: f64, hi: f64, rel_tol: f64) -> Result<f64, String> {
    let shift = (0..=32)
        .map(|i| g(lo + (hi - lo) * i as f64 / 32.0))
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err("integrand vanishes on the grid".into());
    }
    let f = |t: f64| {
        let v = g(t) - shift;
        if v.is_finite() { v.exp() } else { 0.0 }
    };
    let v = integrate_rel(&f, lo, hi, rel_tol)?;
    if !(v > 0.0) {
        return Err(format!("integral {v} is not positive"));
    }
    Ok(shift + v.ln())
}

/// `ln ∫_0^1 θ^(a-1) (1-θ)^(b-1) exp(h(θ)) dθ` with the endpoint powers
/// removed by substitution: on `[0, 1/2]`, `θ = t^(1/p)` with `p = min(a, 1)`.
pub fn log_beta_integral<H: Fn(f64) -> f64>(a: f64, b: f64, h: &H, rel_tol: f64) -> Result<f64, String> {
    let half = |alpha: f64, beta: f64, flip: bool| {
        let p = alpha.min(1.0);
        let g = move |t: f64| {
            if t <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let x = t.powf(1.0 / p);
            let theta = if flip { 1.0 - x } else { x };
            // θ^(α-1) dθ = (1/p) t^((α-p)/p) dt
            -p.ln() + (alpha - p) / p * t.ln() + (beta - 1.0) * (1.0 - x).ln() + h(theta)
        };
        log_integrate(&g, 0.0, 0.5f64.powf(p), rel_tol)
    };
    let left = half(a, b, false)?;
    let right = half(b, a, true)?;
    let m = left.max(right);
    Ok(m + ((left - m).exp() + (right - m).exp()).ln())
}

/// `ln ∫_0^∞ θ^(s-1) e^(-rθ) exp(h(θ)) dθ`, truncated where the gamma factor
/// times the polynomial growth of `h` is negligible.
pub fn log_gamma_integral<H: Fn(f64) -> f64>(s: f64, r: f64, extra_power: f64, h: &H, rel_tol: f64) -> Result<f64, String> {
    let shape = s + extra_power;
    let upper = (shape + 60.0 + 12.0 * shape.sqrt()) / r;
    let p = s.min(1.0);
    let g = |t: f64| {
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let theta = t.powf(1.0 / p);
        -p.ln() + (s - p) / p * t.ln() - r * theta + h(theta)
    };
    log_integrate(&g, 0.0, upper.powf(p), rel_tol)
}

fn ln_factorial(a: u32) -> f64 {
    ln_gamma(a as f64 + 1.0)
}

/// `ln P(a; θ)` straight from each family's definition.
pub fn bernoulli_ln_pmf(a: u32, theta: f64) -> f64 {
    match a {
        0 => (1.0 - theta).ln(),
        1 => theta.ln(),
        _ => f64::NEG_INFINITY,
    }
}

pub fn poisson_ln_pmf(a: u32, theta: f64) -> f64 {
    a as f64 * theta.ln() - theta - ln_factorial(a)
}

/// Zero-inflated shifted negative binomial: `1 - w` at zero, otherwise `w`
/// times `C(a + c - 2, a - 1) p^c (1 - p)^(a - 1)`.
pub fn zisnb_ln_pmf(a: u32, c: f64, w: f64, p: f64) -> f64 {
    if a == 0 {
        return (1.0 - w).ln();
    }
    let x = a as f64 - 1.0;
    w.ln() + ln_gamma(x + c) - ln_gamma(c) - ln_gamma(x + 1.0) + c * p.ln() + x * (1.0 - p).ln()
}

/// Unnormalized `ln ∫ Π_i P(a_i; θ) H(dθ)`; divide by the empty-count value.
fn log_kernel_integral(kernel: &KernelHyper, counts: &[u32], rel_tol: f64) -> Result<f64, String> {
    match *kernel {
        KernelHyper::BetaBernoulli { a, b } => {
            let h = |t: f64| counts.iter().map(|&x| bernoulli_ln_pmf(x, t)).sum::<f64>();
            log_beta_integral(a, b, &h, rel_tol)
        }
        KernelHyper::GammaPoisson { shape, rate } => {
            let total: f64 = counts.iter().map(|&x| x as f64).sum();
            let h = |t: f64| counts.iter().map(|&x| poisson_ln_pmf(x, t)).sum::<f64>();
            log_gamma_integral(shape, rate, total, &h, rel_tol)
        }
        KernelHyper::Zisnb { c, a_w, b_w, a_p, b_p } => {
            let outer = |w: f64| {
                let inner = |p: f64| counts.iter().map(|&x| zisnb_ln_pmf(x, c, w, p)).sum::<f64>();
                log_beta_integral(a_p, b_p, &inner, rel_tol * 0.1).unwrap_or(f64::NAN)
            };
            let v = log_beta_integral(a_w, b_w, &outer, rel_tol)?;
            if v.is_nan() {
                return Err("inner quadrature failed".into());
            }
            Ok(v)
        }
    }
}

/// `ln ∫ Π_i P(a_i; θ) H(dθ; ψ)` by quadrature.
pub fn quadrature_marginal(kernel: &KernelHyper, counts: &[u32]) -> Result<f64, String> {
    let tol = match kernel {
        KernelHyper::Zisnb { .. } => 1e-10,
        _ => 1e-12,
    };
    Ok(log_kernel_integral(kernel, counts, tol)? - log_kernel_integral(kernel, &[], tol)?)
}

/// `ln p0(n)`: probability that a trait is absent from `n` subjects.
pub fn quadrature_p_zero(kernel: &KernelHyper, n: usize) -> Result<f64, String> {
    quadrature_marginal(kernel, &vec![0; n])
}

/// `Π_q p0(n_q)` by quadrature.
pub fn quadrature_p_zero_total(kernel: &KernelHyper, sizes: &[usize]) -> f64 {
    sizes.iter().map(|&n| quadrature_p_zero(kernel, n).unwrap()).sum::<f64>().exp()
}

/// Memoized quadrature marginals keyed by sorted count vectors.
#[derive(Default)]
pub struct MarginalCache {
    cache: HashMap<Vec<u32>, f64>,
}

impl MarginalCache {
    pub fn get(&mut self, kernel: &KernelHyper, counts: &[u32]) -> f64 {
        let mut key = counts.to_vec();
        key.sort_unstable();
        *self
            .cache
            .entry(key.clone())
            .or_insert_with(|| quadrature_marginal(kernel, &key).expect("quadrature"))
    }
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n as u32) - ln_factorial(k as u32) - ln_factorial((n - k) as u32)
}

/// Observed-part and zero-part of the joint under `group_of`, from quadrature.
fn blocks(data: &GroupedCounts, group_of: &[usize], d: usize, kernel: &KernelHyper, cache: &mut MarginalCache) -> (f64, f64) {
    let sizes: Vec<usize> = (0..d).map(|q| group_of.iter().filter(|&&g| g == q).count()).collect();
    let lp0: f64 = sizes.iter().map(|&n| cache.get(kernel, &vec![0; n])).sum();
    let mut obs = 0.0;
    for l in 0..data.n_traits() {
        for q in 0..d {
            let col: Vec<u32> = (0..data.n_subjects()).filter(|&i| group_of[i] == q).map(|i| data.get(i, l)).collect();
            obs += cache.get(kernel, &col);
        }
    }
    (lp0, obs)
}

/// Law of the sample given `N` total traits, by quadrature.
pub fn conditional_law(data: &GroupedCounts, n_total: u64, kernel: &KernelHyper, cache: &mut MarginalCache) -> f64 {
    let k = data.n_traits() as u64;
    assert!(n_total >= k);
    let (lp0, obs) = blocks(data, data.group_of(), data.n_groups(), kernel, cache);
    ln_choose(n_total, k) + (n_total - k) as f64 * lp0 + obs
}

fn ln_poisson(m: u64, rate: f64) -> f64 {
    m as f64 * rate.ln() - rate - ln_factorial(m as u32)
}

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln Σ_{N=k}^{truncation} Poisson(N; λ) P(data | N)` with quadrature pieces.
pub fn poisson_mixture(data: &GroupedCounts, lambda: f64, kernel: &KernelHyper, truncation: u64, cache: &mut MarginalCache) -> f64 {
    let k = data.n_traits() as u64;
    let (lp0, obs) = blocks(data, data.group_of(), data.n_groups(), kernel, cache);
    let terms: Vec<f64> = (k..=truncation)
        .map(|n| ln_poisson(n, lambda) + ln_choose(n, k) + (n - k) as f64 * lp0 + obs)
        .collect();
    lse(&terms)
}

/// `P(N' = m | data)` for `m = 0..=truncation - k`, from the Poisson prior and
/// the conditional law at each `N`, normalized over the truncation.
pub fn posterior_unseen_enumeration(data: &GroupedCounts, lambda: f64, kernel: &KernelHyper, truncation: u64) -> Vec<f64> {
    let mut cache = MarginalCache::default();
    let k = data.n_traits() as u64;
    let logs: Vec<f64> = (k..=truncation)
        .map(|n| ln_poisson(n, lambda) + conditional_law(data, n, kernel, &mut cache))
        .collect();
    let z = lse(&logs);
    logs.iter().map(|v| (v - z).exp()).collect()
}

/// One observed outcome class of the enumeration: the multiset of observed
/// columns (each column is the counts of all subjects in subject order).
#[derive(Debug, Clone)]
pub struct OutcomeClass {
    /// Sorted observed columns.
    pub columns: Vec<Vec<u32>>,
    /// Number of distinct orderings of `columns`.
    pub multiplicity: u64,
    /// Total probability of the class.
    pub prob: f64,
}

/// Enumerates all `2^(N n)` binary latent matrices for `N ≤ 3`, `n ≤ 4`,
/// grouping them by the multiset of non-zero columns.
pub fn enumerate_outcomes_binary(n_total: usize, group_sizes: &[usize], kernel: &KernelHyper) -> Result<Vec<OutcomeClass>, String> {
    let n: usize = group_sizes.iter().sum();
    if n_total > 3 || n > 4 {
        return Err(format!("enumeration bounds exceeded: N = {n_total}, n = {n}"));
    }
    let group_of: Vec<usize> = group_sizes.iter().enumerate().flat_map(|(q, &s)| std::iter::repeat_n(q, s)).collect();
    let d = group_sizes.len();
    let mut cache = MarginalCache::default();
    let column_prob = |col: u32, cache: &mut MarginalCache| -> f64 {
        (0..d)
            .map(|q| {
                let block: Vec<u32> = (0..n).filter(|&i| group_of[i] == q).map(|i| (col >> i) & 1).collect();
                cache.get(kernel, &block)
            })
            .sum::<f64>()
            .exp()
    };
    let n_cols = 1u32 << n;
    let mut classes: HashMap<Vec<u32>, f64> = HashMap::new();
    let mut total = 0.0;
    let mut latent = vec![0u32; n_total];
    loop {
        let p: f64 = latent.iter().map(|&c| column_prob(c, &mut cache)).product();
        let mut key: Vec<u32> = latent.iter().copied().filter(|&c| c != 0).collect();
        key.sort_unstable();
        *classes.entry(key).or_insert(0.0) += p;
        total += p;
        // Odometer over column codes.
        let mut j = 0;
        while j < n_total {
            latent[j] += 1;
            if latent[j] < n_cols {
                break;
            }
            latent[j] = 0;
            j += 1;
        }
        if j == n_total {
            break;
        }
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(format!("latent probabilities sum to {total}"));
    }
    Ok(classes
        .into_iter()
        .map(|(codes, prob)| {
            let mut counts: HashMap<u32, u64> = HashMap::new();
            for &c in &codes {
                *counts.entry(c).or_insert(0) += 1;
            }
            let k = codes.len() as u64;
            let mut mult = (1..=k).product::<u64>();
            for &c in counts.values() {
                mult /= (1..=c).product::<u64>();
            }
            let columns = codes.iter().map(|&c| (0..n as u32).map(|i| (c >> i) & 1).collect()).collect();
            OutcomeClass { columns, multiplicity: mult, prob }
        })
        .collect())
}

/// Builds a dataset from columns (one entry per subject).
pub fn dataset_from_columns(columns: &[Vec<u32>], group_sizes: &[usize]) -> GroupedCounts {
    let n: usize = group_sizes.iter().sum();
    let rows = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    let group_of = group_sizes.iter().enumerate().flat_map(|(q, &s)| std::iter::repeat_n(q, s)).collect();
    GroupedCounts::from_rows_grouped(rows, group_of, group_sizes.len()).expect("valid dataset")
}

/// Pitman–Yor EPPF from its product form.
pub fn log_eppf(sizes: &[usize], sigma: f64, gamma: f64) -> f64 {
    let n: usize = sizes.iter().sum();
    let d = sizes.len();
    let mut v = 0.0;
    for j in 1..d {
        v += (gamma + j as f64 * sigma).ln();
    }
    for i in 1..n {
        v -= (gamma + i as f64).ln();
    }
    for &s in sizes {
        for i in 1..s {
            v += (i as f64 - sigma).ln();
        }
    }
    v
}

fn relabel(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map: HashMap<usize, usize> = HashMap::new();
    let out = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Unnormalized log posterior of a partition: `EPPF × law of the data`
/// with the partition as groups. With `with_unseen = false` the data law is
/// taken at `N = k`.
#[allow(clippy::too_many_arguments)]
pub fn log_joint_partition(
    data: &GroupedCounts,
    labels: &[usize],
    lambda: f64,
    kernel: &KernelHyper,
    sigma: f64,
    gamma: f64,
    with_unseen: bool,
    cache: &mut MarginalCache,
) -> f64 {
    let (canon, d) = relabel(labels);
    let sizes: Vec<usize> = (0..d).map(|q| canon.iter().filter(|&&g| g == q).count()).collect();
    let (lp0, obs) = blocks(data, &canon, d, kernel, cache);
    let k = data.n_traits();
    let law = if with_unseen {
        k as f64 * lambda.ln() - ln_factorial(k as u32) - lambda * (1.0 - lp0.exp()) + obs
    } else {
        obs
    };
    log_eppf(&sizes, sigma, gamma) + law
}

/// All set partitions of `n` items as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; n];
    fn rec(i: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for l in 0..=max + 1 {
            cur[i] = l;
            rec(i + 1, max.max(l), cur, out);
        }
    }
    if n > 0 {
        rec(1, 0, &mut cur, &mut out);
    }
    out
}

/// Normalized allocation probabilities of subject `i`, by evaluating the
/// joint `EPPF × law of the data` at every candidate partition. Candidates
/// are the other subjects' clusters in first-occurrence order, then a new
/// cluster. With `with_unseen = false` the data law is taken at `N = k`.
pub fn full_recompute_gibbs_weights(
    data: &GroupedCounts,
    labels: &[usize],
    i: usize,
    lambda: f64,
    kernel: &KernelHyper,
    sigma: f64,
    gamma: f64,
    with_unseen: bool,
) -> Vec<(Vec<usize>, f64)> {
    let n = labels.len();
    let mut others: Vec<usize> = Vec::new();
    for (j, &l) in labels.iter().enumerate() {
        if j != i && !others.contains(&l) {
            others.push(l);
        }
    }
    let fresh = labels.iter().max().map_or(0, |m| m + 1);
    let mut cache = MarginalCache::default();
    let mut out = Vec::new();
    for target in others.iter().copied().chain(std::iter::once(fresh)) {
        let mut cand = labels.to_vec();
        cand[i] = target;
        let (canon, _) = relabel(&cand);
        debug_assert_eq!(canon.len(), n);
        let v = log_joint_partition(data, &canon, lambda, kernel, sigma, gamma, with_unseen, &mut cache);
        out.push((canon, v));
    }
    let z = lse(&out.iter().map(|(_, v)| *v).collect::<Vec<_>>());
    out.into_iter().map(|(c, v)| (c, v - z)).collect()
}
