#![allow(dead_code)]

pub mod oracle;

use rand::Rng;
use traitalloc::{GroupedCounts, KernelHyper};

/// Relative-or-absolute closeness.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// A random valid kernel of each family with moderate hyperparameters.
pub fn random_kernels<R: Rng>(rng: &mut R) -> [KernelHyper; 3] {
    [
        KernelHyper::beta_bernoulli(rng.random_range(0.2..3.0), rng.random_range(0.5..5.0)).unwrap(),
        KernelHyper::gamma_poisson(rng.random_range(0.3..4.0), rng.random_range(0.3..3.0)).unwrap(),
        KernelHyper::zisnb(
            rng.random_range(0.5..3.0),
            rng.random_range(0.5..3.0),
            rng.random_range(0.5..3.0),
            rng.random_range(1.5..4.0),
            rng.random_range(0.5..3.0),
        )
        .unwrap(),
    ]
}

/// Random small dataset suited to `kernel` with `n` subjects in `d` groups
/// (assigned round-robin) and up to `k_max` observed traits.
pub fn random_data<R: Rng>(rng: &mut R, kernel: &KernelHyper, n: usize, d: usize, k_max: usize) -> GroupedCounts {
    let binary = matches!(kernel, KernelHyper::BetaBernoulli { .. });
    let k = rng.random_range(1..=k_max);
    let mut rows = vec![vec![0u32; k]; n];
    for l in 0..k {
        for row in rows.iter_mut() {
            if rng.random_bool(0.4) {
                row[l] = if binary { 1 } else { rng.random_range(1..=3) };
            }
        }
        if rows.iter().all(|r| r[l] == 0) {
            let i = rng.random_range(0..n);
            rows[i][l] = 1;
        }
    }
    let group_of = (0..n).map(|i| i % d).collect();
    GroupedCounts::from_rows_grouped(rows, group_of, d).unwrap()
}
