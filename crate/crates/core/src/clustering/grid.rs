use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cluster, HyperParams, Partition, DEFAULT_ETA, DEFAULT_F};
use crate::error::{Error, Result};

/// Hyperparameter grid. Selected `K` is capped at `k_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub knn: Vec<usize>,
    pub m: Vec<usize>,
    pub f: f64,
    pub eta: f64,
    pub k_max: usize,
    pub constrained: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            knn: (10..=90).step_by(5).collect(),
            m: vec![16, 19, 24, 31],
            f: DEFAULT_F,
            eta: DEFAULT_ETA,
            k_max: 15,
            constrained: true,
        }
    }
}

/// Outcome of one `(m, knn)` cell. Failed cells score `-inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub m: usize,
    pub knn: usize,
    pub k: Option<usize>,
    pub score: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub params: HyperParams,
    pub partition: Partition,
    pub score: f64,
    pub cells: Vec<GridCell>,
}

/// Clusters every `(m, knn)` cell, scores the partition with `objective`, and
/// returns the best cell. Ties go to smaller `m`, then smaller `knn`. Cells
/// run in parallel.
pub fn grid_search<F>(s: &DMatrix<f64>, prior: &Partition, spec: &GridSpec, objective: F) -> Result<GridResult>
where
    F: Fn(&Partition) -> Result<f64> + Sync,
{
    if spec.knn.is_empty() || spec.m.is_empty() {
        return Err(Error::Precondition("hyperparameter grids must be nonempty".into()));
    }
    if spec.k_max == 0 {
        return Err(Error::Precondition("k_max must be at least 1".into()));
    }
    let mut pairs: Vec<(usize, usize)> =
        spec.m.iter().flat_map(|&m| spec.knn.iter().map(move |&knn| (m, knn))).collect();
    pairs.sort_unstable();
    pairs.dedup();

    let outcomes: Vec<(GridCell, Option<Partition>)> = pairs
        .par_iter()
        .map(|&(m, knn)| {
            let params = HyperParams { knn, m, k: None, f: spec.f, eta: spec.eta };
            let run = || -> Result<(usize, Partition, f64)> {
                let res = cluster(s, prior, &params, spec.constrained)?;
                let (k, partition) = if res.k > spec.k_max {
                    let capped = HyperParams { k: Some(spec.k_max), ..params };
                    (spec.k_max, cluster(s, prior, &capped, spec.constrained)?.partition)
                } else {
                    (res.k, res.partition)
                };
                let score = objective(&partition)?;
                if score.is_nan() {
                    return Err(Error::Domain("objective returned NaN".into()));
                }
                Ok((k, partition, score))
            };
            match run() {
                Ok((k, partition, score)) => {
                    (GridCell { m, knn, k: Some(k), score, error: None }, Some(partition))
                }
                Err(e) => {
                    log::warn!("grid cell m = {m}, knn = {knn} failed: {e}");
                    let cell = GridCell { m, knn, k: None, score: f64::NEG_INFINITY, error: Some(e.to_string()) };
                    (cell, None)
                }
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, (cell, partition)) in outcomes.iter().enumerate() {
        if partition.is_some() && best.is_none_or(|b| cell.score > outcomes[b].0.score) {
            best = Some(i);
        }
    }
    let Some(b) = best else {
        return Err(Error::Domain("every grid cell failed".into()));
    };
    let (cell, partition) = &outcomes[b];
    let params = HyperParams { knn: cell.knn, m: cell.m, k: cell.k, f: spec.f, eta: spec.eta };
    Ok(GridResult {
        params,
        partition: partition.clone().expect("best cell has a partition"),
        score: cell.score,
        cells: outcomes.into_iter().map(|(c, _)| c).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim() -> DMatrix<f64> {
        DMatrix::from_fn(12, 12, |i, j| {
            if i == j {
                1.0
            } else if i / 4 == j / 4 {
                0.8
            } else {
                0.3 + 0.01 * ((i + j) % 3) as f64
            }
        })
    }

    fn spec(knn: Vec<usize>, m: Vec<usize>) -> GridSpec {
        GridSpec { knn, m, constrained: false, ..GridSpec::default() }
    }

    #[test]
    fn single_cell_is_returned() {
        let r = grid_search(&sim(), &Partition::single(12), &spec(vec![4], vec![6]), |_| Ok(0.3)).unwrap();
        assert_eq!((r.params.m, r.params.knn), (6, 4));
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.score, 0.3);
    }

    #[test]
    fn best_cell_and_tie_break() {
        // objective prefers partitions with exactly 3 clusters; all else ties
        let obj = |p: &Partition| Ok(if p.k() == 3 { 1.0 } else { 0.0 });
        let r = grid_search(&sim(), &Partition::single(12), &spec(vec![3, 5], vec![6, 8]), obj).unwrap();
        assert_eq!(r.cells.len(), 4);
        let best_score = r.cells.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
        let first = r.cells.iter().find(|c| c.score == best_score).unwrap();
        assert_eq!((r.params.m, r.params.knn), (first.m, first.knn));
        let constant = grid_search(&sim(), &Partition::single(12), &spec(vec![5, 3], vec![8, 6]), |_| Ok(1.0)).unwrap();
        assert_eq!((constant.params.m, constant.params.knn), (6, 3));
    }

    #[test]
    fn failed_cells_score_negative_infinity() {
        let r = grid_search(&sim(), &Partition::single(12), &spec(vec![3], vec![6, 20]), |_| Ok(0.5)).unwrap();
        let bad = r.cells.iter().find(|c| c.m == 20).unwrap();
        assert_eq!(bad.score, f64::NEG_INFINITY);
        assert!(bad.error.is_some());
        assert_eq!(r.params.m, 6);
    }
}
