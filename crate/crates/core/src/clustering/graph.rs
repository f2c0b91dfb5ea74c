use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Undirected weighted graph on characteristics. Absent edges have weight 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    weights: DMatrix<f64>,
}

impl SparseGraph {
    /// Takes a symmetric nonnegative weight matrix; the diagonal is ignored.
    pub fn from_weights(mut weights: DMatrix<f64>) -> Result<Self> {
        if !weights.is_square() {
            return Err(Error::Validation("graph weight matrix must be square".into()));
        }
        let n = weights.nrows();
        for i in 0..n {
            for j in 0..n {
                let w = weights[(i, j)];
                if !(w >= 0.0) || !w.is_finite() || w != weights[(j, i)] {
                    return Err(Error::Validation(format!("invalid edge weight at ({i}, {j})")));
                }
            }
        }
        weights.fill_diagonal(0.0);
        Ok(Self { weights })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.weights[(i, j)] > 0.0
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Edges `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.has_edge(i, j))
            .map(|(i, j)| (i, j, self.weights[(i, j)]))
            .collect()
    }
}

/// Keeps an edge when either endpoint has the other among its `knn` most
/// similar characteristics (ties broken by lower index). `knn >= I - 1`
/// retains the complete graph.
pub fn knn_sparsify(s: &DMatrix<f64>, knn: usize) -> Result<SparseGraph> {
    if knn == 0 {
        return Err(Error::Precondition("knn must be at least 1".into()));
    }
    if !s.is_square() {
        return Err(Error::Validation("similarity matrix must be square".into()));
    }
    let n = s.nrows();
    let mut keep = DMatrix::from_element(n, n, false);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| s[(i, b)].total_cmp(&s[(i, a)]).then(a.cmp(&b)));
        for &j in others.iter().take(knn) {
            keep[(i, j)] = true;
            keep[(j, i)] = true;
        }
    }
    let weights = DMatrix::from_fn(n, n, |i, j| if keep[(i, j)] { s[(i, j)] } else { 0.0 });
    SparseGraph::from_weights(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(n: usize, f: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { f(i.min(j), i.max(j)) })
    }

    #[test]
    fn complete_when_knn_covers_all() {
        let s = sim(5, |i, j| 0.4 + 0.01 * (i + j) as f64);
        let g = knn_sparsify(&s, 4).unwrap();
        assert_eq!(g.edges().len(), 10);
    }

    #[test]
    fn union_symmetrization() {
        // s12 > s13 > s23 (1-based): vertex 1 picks 2, vertex 2 picks 1,
        // vertex 3 picks 1, so edges {(1,2), (1,3)}.
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, 0.8, 0.9, 1.0, 0.7, 0.8, 0.7, 1.0]);
        let g = knn_sparsify(&s, 1).unwrap();
        let e: Vec<(usize, usize)> = g.edges().iter().map(|&(i, j, _)| (i, j)).collect();
        assert_eq!(e, vec![(0, 1), (0, 2)]);
        assert_eq!(g.weight(0, 2), 0.8);
    }

    #[test]
    fn zero_knn_rejected() {
        let s = DMatrix::identity(3, 3);
        assert!(matches!(knn_sparsify(&s, 0), Err(Error::Precondition(_))));
    }
}
