//! Split-and-merge clustering of characteristics.
//!
//! A kNN similarity graph is bisected spectrally into `m` basic sub-clusters
//! (inside the prior clusters in constrained mode), which are then merged
//! greedily by relative inter-cluster similarity. The merge trace decides the
//! final number of clusters unless one is given.

mod graph;
mod grid;
mod merge;
mod partition;
mod select;
mod split;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use graph::{knn_sparsify, SparseGraph};
pub use grid::{grid_search, GridCell, GridResult, GridSpec};
pub use merge::{merge_ris, ris, MergeStep, MergeTrace};
pub use partition::{adjusted_rand_index, random_partition, Partition};
pub use select::{select_k, MAX_RELAXATIONS};
pub use split::{bisect, split_subclusters};

use crate::error::{Error, Result};

pub const DEFAULT_F: f64 = 1e3;
pub const DEFAULT_ETA: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub knn: usize,
    pub m: usize,
    /// Final cluster count; chosen from the merge trace when absent.
    pub k: Option<usize>,
    pub f: f64,
    pub eta: f64,
}

impl HyperParams {
    pub fn new(knn: usize, m: usize) -> Self {
        Self { knn, m, k: None, f: DEFAULT_F, eta: DEFAULT_ETA }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.knn == 0 {
            return Err(Error::Precondition("knn must be at least 1".into()));
        }
        if self.m == 0 || self.m > n {
            return Err(Error::Precondition(format!("need 1 <= m <= {n}, got {}", self.m)));
        }
        if let Some(k) = self.k {
            if k == 0 || k > self.m {
                return Err(Error::Precondition(format!("need 1 <= K <= m, got K = {k}")));
            }
        }
        if !(self.f > 1.0) || !(self.eta > 1.0) {
            return Err(Error::Precondition("f and eta must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub partition: Partition,
    /// Full trace from `m` clusters down to one.
    pub trace: MergeTrace,
    pub k: usize,
}

/// Runs split, merge and K selection on a similarity matrix.
///
/// `knn` above `I - 1` keeps the complete graph. With `constrained`, every
/// output cluster is a union of sub-clusters that each lie in one cluster of
/// `prior`.
pub fn cluster(s: &DMatrix<f64>, prior: &Partition, params: &HyperParams, constrained: bool) -> Result<ClusterResult> {
    let n = s.nrows();
    params.validate(n)?;
    let graph = knn_sparsify(s, params.knn.min(n.saturating_sub(1)).max(1))?;
    let subs = split_subclusters(&graph, prior, params.m, constrained)?;
    let (_, trace) = merge_ris(&subs, &graph, 1)?;
    let k = match params.k {
        Some(k) => k,
        None => select_k(&trace, params.f, params.eta)?,
    };
    let (partition, _) = merge_ris(&subs, &graph, k)?;
    Ok(ClusterResult { partition, trace, k })
}

/// Names each cluster after the prior cluster holding most of its members,
/// with a numeric suffix when several clusters share a name.
pub fn label_by_prior(partition: &Partition, prior: &Partition) -> Result<Partition> {
    let clusters = partition.clusters();
    let base: Vec<String> = clusters
        .iter()
        .map(|members| {
            let mut counts = vec![0usize; prior.k()];
            for &v in members {
                counts[prior.assignment()[v]] += 1;
            }
            let best = (0..prior.k()).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap_or(0);
            prior.label(best)
        })
        .collect();
    let labels = base
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let total = base.iter().filter(|n| *n == name).count();
            if total == 1 {
                name.clone()
            } else {
                let idx = base[..=c].iter().filter(|n| *n == name).count();
                format!("{name}{idx}")
            }
        })
        .collect();
    partition.clone().with_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric(n: usize, f: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { f(i.min(j), i.max(j)) })
    }

    #[test]
    fn recovers_planted_blocks_with_given_k() {
        let size = 4;
        let s = symmetric(12, |i, j| {
            let jitter = 0.001 * ((i * 31 + j * 17) % 7) as f64;
            if i / size == j / size { 0.8 + jitter } else { 0.3 + jitter }
        });
        let mut params = HyperParams::new(5, 6);
        params.k = Some(3);
        let res = cluster(&s, &Partition::single(12), &params, false).unwrap();
        let truth = Partition::new((0..12).map(|v| v / size).collect(), None).unwrap();
        assert_eq!(adjusted_rand_index(&res.partition, &truth), 1.0);
        assert_eq!(res.trace.steps.len(), 5);
    }

    #[test]
    fn constrained_clusters_respect_prior() {
        let s = symmetric(10, |i, j| 0.2 + 0.07 * ((i * 3 + j * 5) % 9) as f64);
        let prior = Partition::new(vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1], None).unwrap();
        let params = HyperParams::new(3, 6);
        let res = cluster(&s, &prior, &params, true).unwrap();
        for members in &res.trace.basic_subclusters {
            assert!(members.iter().all(|&v| prior.assignment()[v] == prior.assignment()[members[0]]));
        }
        assert!(res.k >= 1 && res.k <= 6);
    }

    #[test]
    fn labels_follow_majority_prior() {
        let prior = Partition::new(vec![0, 0, 1, 1], None).unwrap().with_labels(vec!["Val".into(), "Mom".into()]).unwrap();
        let p = Partition::new(vec![0, 1, 2, 2], None).unwrap();
        let l = label_by_prior(&p, &prior).unwrap();
        assert_eq!(l.labels().unwrap(), &["Val1".to_string(), "Val2".into(), "Mom".into()]);
    }
}
