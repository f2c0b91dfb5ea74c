use serde::{Deserialize, Serialize};

use crate::clustering::Partition;
use crate::error::{Error, Result};

/// Which loading coefficients are free. Row 0 is the constant instrument,
/// row `i + 1` characteristic `i`; column `j` is factor `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestrictionMask {
    rows: usize,
    cols: usize,
    free: Vec<bool>,
    names: Vec<String>,
}

impl RestrictionMask {
    /// Row-major `free` flags.
    pub fn new(rows: usize, cols: usize, free: Vec<bool>, names: Vec<String>) -> Result<Self> {
        if rows == 0 || cols == 0 || free.len() != rows * cols || names.len() != cols {
            return Err(Error::Validation(format!("mask needs {rows}x{cols} flags and {cols} names")));
        }
        let mask = Self { rows, cols, free, names };
        if let Some(j) = (0..cols).find(|&j| (0..rows).all(|i| !mask.is_free(i, j))) {
            return Err(Error::Validation(format!("factor {j} has no free loadings")));
        }
        Ok(mask)
    }

    /// Plain IPCA: every loading free.
    pub fn unrestricted(n_chars: usize, n_factors: usize) -> Self {
        let names = (1..=n_factors).map(|j| format!("F{j}")).collect();
        Self { rows: n_chars + 1, cols: n_factors, free: vec![true; (n_chars + 1) * n_factors], names }
    }

    /// One factor per cluster, loading on the cluster's characteristics and
    /// the constant; `include_zc` appends a factor loading on the constant
    /// only.
    pub fn from_partition(partition: &Partition, include_zc: bool) -> Self {
        let n = partition.len();
        let k = partition.k();
        let cols = k + usize::from(include_zc);
        let mut free = vec![false; (n + 1) * cols];
        free[..cols].fill(true);
        for (i, &c) in partition.assignment().iter().enumerate() {
            free[(i + 1) * cols + c] = true;
        }
        let mut names: Vec<String> = (0..k).map(|c| partition.label(c)).collect();
        if include_zc {
            names.push("ZC".into());
        }
        Self { rows: n + 1, cols, free, names }
    }

    /// Single factor with only the constant loading.
    pub fn zc_only(n_chars: usize) -> Self {
        let mut free = vec![false; n_chars + 1];
        free[0] = true;
        Self { rows: n_chars + 1, cols: 1, free, names: vec!["ZC".into()] }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_factors(&self) -> usize {
        self.cols
    }

    pub fn is_free(&self, row: usize, col: usize) -> bool {
        self.free[row * self.cols + col]
    }

    pub fn is_unrestricted(&self) -> bool {
        self.free.iter().all(|&f| f)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Free `(row, col)` positions in row-major order.
    pub fn free_positions(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|i| (0..self.cols).map(move |j| (i, j)))
            .filter(|&(i, j)| self.is_free(i, j))
            .collect()
    }

    /// Free rows of one column.
    pub fn free_rows(&self, col: usize) -> Vec<usize> {
        (0..self.rows).filter(|&i| self.is_free(i, col)).collect()
    }

    /// Index of the constant-only factor, if any.
    pub fn zc_column(&self) -> Option<usize> {
        (0..self.cols).find(|&j| self.free_rows(j) == [0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn illustrative_two_cluster_mask() {
        let p = Partition::new(vec![0, 0, 1, 1], None)
            .unwrap()
            .with_labels(vec!["mom".into(), "val".into()])
            .unwrap();
        let m = RestrictionMask::from_partition(&p, true);
        assert_eq!((m.n_rows(), m.n_factors()), (5, 3));
        let expected = [
            [true, true, true],
            [true, false, false],
            [true, false, false],
            [false, true, false],
            [false, true, false],
        ];
        for (i, row) in expected.iter().enumerate() {
            for (j, &f) in row.iter().enumerate() {
                assert_eq!(m.is_free(i, j), f, "({i}, {j})");
            }
        }
        assert_eq!(m.names(), &["mom", "val", "ZC"]);
        assert_eq!(m.zc_column(), Some(2));
    }

    #[test]
    fn single_cluster_without_zc_is_ipca() {
        let m = RestrictionMask::from_partition(&Partition::single(6), false);
        assert!(m.is_unrestricted());
        assert_eq!(m.free, RestrictionMask::unrestricted(6, 1).free);
    }

    #[test]
    fn zc_only_mask() {
        let m = RestrictionMask::zc_only(4);
        assert_eq!(m.n_factors(), 1);
        assert_eq!(m.free_rows(0), vec![0]);
    }

    #[test]
    fn empty_column_rejected() {
        assert!(RestrictionMask::new(2, 2, vec![true, false, true, false], vec!["a".into(), "b".into()]).is_err());
    }
}
