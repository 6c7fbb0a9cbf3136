//! Random partitions of subjects: the Pitman–Yor prior and label utilities.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::math::ln_pochhammer;

/// Pitman–Yor partition parameters, `σ ∈ [0, 1)`, `γ > -σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PitmanYor {
    pub sigma: f64,
    pub gamma: f64,
}

impl Default for PitmanYor {
    /// Dirichlet process with unit concentration.
    fn default() -> Self {
        PitmanYor { sigma: 0.0, gamma: 1.0 }
    }
}

impl PitmanYor {
    pub fn new(sigma: f64, gamma: f64) -> Result<Self> {
        let py = PitmanYor { sigma, gamma };
        py.validate()?;
        Ok(py)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma) {
            return Err(domain(format!("sigma must lie in [0, 1), got {}", self.sigma)));
        }
        if !(self.gamma > -self.sigma) || !self.gamma.is_finite() {
            return Err(domain(format!(
                "gamma must exceed -sigma = {}, got {}",
                -self.sigma, self.gamma
            )));
        }
        Ok(())
    }

    /// Log weight for joining an existing block of (current) size `size`.
    #[inline]
    pub fn log_join_weight(&self, size: usize) -> f64 {
        (size as f64 - self.sigma).ln()
    }

    /// Log weight for opening a new block when `n_blocks` exist.
    #[inline]
    pub fn log_new_weight(&self, n_blocks: usize) -> f64 {
        (self.gamma + n_blocks as f64 * self.sigma).ln()
    }
}

/// Log exchangeable partition probability of a partition with block `sizes`.
pub fn log_eppf_pitman_yor(sizes: &[usize], sigma: f64, gamma: f64) -> Result<f64> {
    let py = PitmanYor::new(sigma, gamma)?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(domain("block sizes must be nonempty and positive"));
    }
    let n: usize = sizes.iter().sum();
    let d = sizes.len();
    let new_blocks: f64 = (1..d).map(|q| (py.gamma + q as f64 * py.sigma).ln()).sum();
    let within: f64 = sizes.iter().map(|&s| ln_pochhammer(1.0 - py.sigma, s as u64 - 1)).sum();
    Ok(new_blocks - ln_pochhammer(py.gamma + 1.0, n as u64 - 1) + within)
}

/// Relabels blocks `0, 1, ...` in order of first occurrence.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Number of distinct labels.
pub fn n_blocks(labels: &[usize]) -> usize {
    labels.iter().collect::<std::collections::HashSet<_>>().len()
}

/// Block sizes of canonical labels, indexed by label.
pub fn block_sizes(canonical: &[usize]) -> Vec<usize> {
    let d = canonical.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0; d];
    for &c in canonical {
        sizes[c] += 1;
    }
    sizes
}
