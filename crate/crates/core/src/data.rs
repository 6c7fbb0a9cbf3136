//! Grouped count matrices.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::kernel::{ColumnCounts, ColumnStats, KernelHyper};

/// An `n × k` count matrix with a grouping of its rows.
///
/// Every column has at least one positive entry: columns are the *observed*
/// traits. Groups are indexed `0..n_groups`; a group may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedCounts {
    subject_ids: Vec<String>,
    trait_labels: Vec<String>,
    counts: Vec<u32>,
    group_of: Vec<usize>,
    group_labels: Vec<String>,
}

fn check_unique(kind: &str, labels: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::InvalidData(format!("duplicate {kind} '{l}'")));
        }
    }
    Ok(())
}

impl GroupedCounts {
    /// Builds and validates a dataset from row-major `rows`.
    pub fn new(
        subject_ids: Vec<String>,
        trait_labels: Vec<String>,
        rows: Vec<Vec<u32>>,
        group_of: Vec<usize>,
        group_labels: Vec<String>,
    ) -> Result<Self> {
        let n = subject_ids.len();
        let k = trait_labels.len();
        if rows.len() != n {
            return Err(Error::InvalidData(format!("{} rows for {n} subjects", rows.len())));
        }
        if group_of.len() != n {
            return Err(Error::InvalidData(format!(
                "{} group assignments for {n} subjects",
                group_of.len()
            )));
        }
        if group_labels.is_empty() {
            return Err(Error::InvalidData("at least one group is required".into()));
        }
        check_unique("subject id", &subject_ids)?;
        check_unique("trait label", &trait_labels)?;
        check_unique("group label", &group_labels)?;
        if let Some(&g) = group_of.iter().find(|&&g| g >= group_labels.len()) {
            return Err(Error::InvalidData(format!(
                "group index {g} out of range for {} groups",
                group_labels.len()
            )));
        }
        let mut counts = Vec::with_capacity(n * k);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidData(format!(
                    "subject '{}' has {} entries, expected {k}",
                    subject_ids[i],
                    row.len()
                )));
            }
            counts.extend(row);
        }
        let data = GroupedCounts { subject_ids, trait_labels, counts, group_of, group_labels };
        for l in 0..k {
            if (0..n).all(|i| data.get(i, l) == 0) {
                return Err(Error::InvalidData(format!(
                    "column {} has no positive entry",
                    data.trait_labels[l]
                )));
            }
        }
        Ok(data)
    }

    /// Single-group dataset with generated ids `s1..`, `t1..`.
    pub fn from_rows(rows: Vec<Vec<u32>>) -> Result<Self> {
        let n = rows.len();
        Self::from_rows_grouped(rows, vec![0; n], 1)
    }

    /// Dataset with generated ids and groups `g1..g{n_groups}`.
    pub fn from_rows_grouped(rows: Vec<Vec<u32>>, group_of: Vec<usize>, n_groups: usize) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, |r| r.len());
        Self::new(
            (1..=n).map(|i| format!("s{i}")).collect(),
            (1..=k).map(|l| format!("t{l}")).collect(),
            rows,
            group_of,
            (1..=n_groups).map(|q| format!("g{q}")).collect(),
        )
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_traits(&self) -> usize {
        self.trait_labels.len()
    }

    pub fn n_groups(&self) -> usize {
        self.group_labels.len()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn trait_labels(&self) -> &[String] {
        &self.trait_labels
    }

    pub fn group_labels(&self) -> &[String] {
        &self.group_labels
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    #[inline]
    pub fn get(&self, i: usize, l: usize) -> u32 {
        self.counts[i * self.n_traits() + l]
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let k = self.n_traits();
        &self.counts[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        (0..self.n_subjects()).map(|i| self.row(i))
    }

    pub fn column(&self, l: usize) -> Vec<u32> {
        (0..self.n_subjects()).map(|i| self.get(i, l)).collect()
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn is_binary(&self) -> bool {
        self.counts.iter().all(|&a| a <= 1)
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups()];
        for &g in &self.group_of {
            sizes[g] += 1;
        }
        sizes
    }

    /// Column `l` restricted to the subjects of group `q`, in row order.
    pub fn column_in_group(&self, l: usize, q: usize) -> ColumnCounts {
        ColumnCounts::new(
            (0..self.n_subjects())
                .filter(|&i| self.group_of[i] == q)
                .map(|i| self.get(i, l))
                .collect(),
        )
    }

    /// Sufficient statistics indexed `[l * n_groups + q]`.
    pub fn block_stats(&self, kernel: &KernelHyper) -> Vec<ColumnStats> {
        let d = self.n_groups();
        let mut stats = vec![ColumnStats::empty(); self.n_traits() * d];
        for i in 0..self.n_subjects() {
            let q = self.group_of[i];
            for (l, &a) in self.row(i).iter().enumerate() {
                stats[l * d + q].push(kernel, a);
            }
        }
        stats
    }

    pub fn check_kernel_support(&self, kernel: &KernelHyper) -> Result<()> {
        for (idx, &a) in self.counts.iter().enumerate() {
            if kernel.check_support(a).is_err() {
                let k = self.n_traits();
                return Err(Error::InvalidData(format!(
                    "entry ({}, {}) = {a} is outside the support of the {} kernel",
                    self.subject_ids[idx / k],
                    self.trait_labels[idx % k],
                    kernel.family()
                )));
            }
        }
        Ok(())
    }

    /// Same matrix grouped by `labels` (e.g. a candidate partition).
    pub fn with_groups(&self, labels: &[usize], n_groups: usize) -> Result<Self> {
        if labels.len() != self.n_subjects() {
            return Err(Error::InvalidData(format!(
                "{} labels for {} subjects",
                labels.len(),
                self.n_subjects()
            )));
        }
        if let Some(&g) = labels.iter().find(|&&g| g >= n_groups) {
            return Err(Error::InvalidData(format!("label {g} out of range for {n_groups} groups")));
        }
        if n_groups == 0 {
            return Err(Error::InvalidData("at least one group is required".into()));
        }
        Ok(GroupedCounts {
            group_of: labels.to_vec(),
            group_labels: (1..=n_groups).map(|q| format!("c{q}")).collect(),
            ..self.clone()
        })
    }

    /// All subjects in one group.
    pub fn homogeneous(&self) -> Self {
        self.with_groups(&vec![0; self.n_subjects()], 1).expect("one group is always valid")
    }

    /// Drops subject `i` and any columns left without a positive entry.
    /// Group indices are unchanged, so `i`'s group may become empty.
    pub fn without_subject(&self, i: usize) -> Self {
        let n = self.n_subjects();
        let keep_cols: Vec<usize> = (0..self.n_traits())
            .filter(|&l| (0..n).any(|j| j != i && self.get(j, l) > 0))
            .collect();
        let rows: Vec<Vec<u32>> = (0..n)
            .filter(|&j| j != i)
            .map(|j| keep_cols.iter().map(|&l| self.get(j, l)).collect())
            .collect();
        let mut counts = Vec::with_capacity(rows.len() * keep_cols.len());
        rows.into_iter().for_each(|r| counts.extend(r));
        GroupedCounts {
            subject_ids: (0..n).filter(|&j| j != i).map(|j| self.subject_ids[j].clone()).collect(),
            trait_labels: keep_cols.iter().map(|&l| self.trait_labels[l].clone()).collect(),
            counts,
            group_of: (0..n).filter(|&j| j != i).map(|j| self.group_of[j]).collect(),
            group_labels: self.group_labels.clone(),
        }
    }

    /// Columns reordered by `perm` (new column `l` is old column `perm[l]`).
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        let k = self.n_traits();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidData("not a permutation of the columns".into()));
        }
        let rows = (0..self.n_subjects())
            .map(|i| perm.iter().map(|&l| self.get(i, l)).collect())
            .collect();
        Self::new(
            self.subject_ids.clone(),
            perm.iter().map(|&l| self.trait_labels[l].clone()).collect(),
            rows,
            self.group_of.clone(),
            self.group_labels.clone(),
        )
    }

    /// Rows reordered by `perm` (new row `i` is old row `perm[i]`).
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_subjects();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidData("not a permutation of the rows".into()));
        }
        Self::new(
            perm.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            self.trait_labels.clone(),
            perm.iter().map(|&i| self.row(i).to_vec()).collect(),
            perm.iter().map(|&i| self.group_of[i]).collect(),
            self.group_labels.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GroupedCounts {
        GroupedCounts::from_rows_grouped(
            vec![vec![1, 0, 2], vec![0, 0, 1], vec![3, 1, 0]],
            vec![0, 1, 0],
            2,
        )
        .unwrap()
    }

    #[test]
    fn basic_accessors() {
        let d = sample();
        assert_eq!((d.n_subjects(), d.n_traits(), d.n_groups()), (3, 3, 2));
        assert_eq!(d.group_sizes(), vec![2, 1]);
        assert_eq!(d.column(0), vec![1, 0, 3]);
        assert_eq!(d.column_in_group(2, 0).counts(), &[2, 0]);
        assert_eq!(d.max_count(), 3);
        assert!(!d.is_binary());
    }

    #[test]
    fn identity_loads() {
        let d = GroupedCounts::from_rows(vec![vec![1, 0], vec![0, 1]]).unwrap();
        assert_eq!((d.n_traits(), d.n_subjects()), (2, 2));
    }

    #[test]
    fn rejects_zero_column_and_duplicates() {
        let err = GroupedCounts::from_rows(vec![vec![1, 0], vec![1, 0]]).unwrap_err();
        assert!(err.to_string().contains("column t2 has no positive entry"), "{err}");
        let err = GroupedCounts::new(
            vec!["a".into(), "a".into()],
            vec!["x".into()],
            vec![vec![1], vec![0]],
            vec![0, 0],
            vec!["g".into()],
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate subject id"));
        assert!(GroupedCounts::from_rows_grouped(vec![vec![1]], vec![2], 2).is_err());
        assert!(GroupedCounts::from_rows(vec![vec![1, 1], vec![1]]).is_err());
    }

    #[test]
    fn empty_matrix_is_valid() {
        let d = GroupedCounts::from_rows(vec![vec![], vec![]]).unwrap();
        assert_eq!(d.n_traits(), 0);
        assert_eq!(d.n_subjects(), 2);
        let d = GroupedCounts::from_rows(vec![]).unwrap();
        assert_eq!(d.n_subjects(), 0);
    }

    #[test]
    fn block_stats_match_columns() {
        let d = sample();
        let k = KernelHyper::gamma_poisson(1.0, 1.0).unwrap();
        let stats = d.block_stats(&k);
        for l in 0..d.n_traits() {
            for q in 0..d.n_groups() {
                let want = d.column_in_group(l, q).stats(&k);
                assert!(stats[l * 2 + q].approx_eq(&want, 1e-12));
            }
        }
    }

    #[test]
    fn without_subject_drops_orphan_columns() {
        let d = sample();
        let r = d.without_subject(2);
        assert_eq!(r.trait_labels(), &["t1".to_string(), "t3".to_string()]);
        assert_eq!(r.row(0), &[1, 2]);
        assert_eq!(r.group_sizes(), vec![1, 1]);
        let r = d.without_subject(1);
        assert_eq!(r.group_sizes(), vec![2, 0]);
        assert_eq!(r.n_traits(), 3);
    }

    #[test]
    fn regrouping_and_permutations() {
        let d = sample();
        let h = d.homogeneous();
        assert_eq!(h.group_sizes(), vec![3]);
        assert!(d.with_groups(&[0, 1], 2).is_err());
        let p = d.permute_columns(&[2, 0, 1]).unwrap();
        assert_eq!(p.row(2), &[0, 3, 1]);
        assert!(d.permute_columns(&[0, 0, 1]).is_err());
        let p = d.permute_rows(&[1, 2, 0]).unwrap();
        assert_eq!(p.group_of(), &[1, 0, 0]);
        assert_eq!(p.row(0), &[0, 0, 1]);
    }

    #[test]
    fn kernel_support() {
        let d = sample();
        let bb = KernelHyper::beta_bernoulli(1.0, 1.0).unwrap();
        assert!(d.check_kernel_support(&bb).is_err());
        let gp = KernelHyper::gamma_poisson(1.0, 1.0).unwrap();
        assert!(d.check_kernel_support(&gp).is_ok());
    }
}
