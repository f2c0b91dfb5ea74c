use nalgebra::DMatrix;

use super::graph::SparseGraph;
use super::partition::Partition;
use crate::error::{Error, Result};

/// Repeatedly bisects the largest live sub-cluster until exactly `m`
/// sub-clusters exist.
///
/// In constrained mode splitting starts from the clusters of `prior`, so each
/// output sub-cluster lies inside one prior cluster; otherwise it starts from
/// a single cluster holding every vertex. Sub-clusters are returned ordered by
/// their smallest member, members ascending.
pub fn split_subclusters(
    graph: &SparseGraph,
    prior: &Partition,
    m: usize,
    constrained: bool,
) -> Result<Vec<Vec<usize>>> {
    let n = graph.n();
    if prior.len() != n {
        return Err(Error::Precondition(format!(
            "prior covers {} characteristics, graph has {n}",
            prior.len()
        )));
    }
    if m == 0 || m > n {
        return Err(Error::Precondition(format!("need 1 <= m <= I, got m = {m}, I = {n}")));
    }
    let mut live: Vec<Vec<usize>> = if constrained {
        if m < prior.k() {
            return Err(Error::Precondition(format!(
                "m = {m} is below the {} prior clusters",
                prior.k()
            )));
        }
        prior.clusters()
    } else {
        vec![(0..n).collect()]
    };
    while live.len() < m {
        let target = live
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
            .map(|(i, _)| i)
            .expect("live is never empty");
        if live[target].len() < 2 {
            return Err(Error::InfeasibleSplit { have: live.len(), want: m });
        }
        let cluster = live.swap_remove(target);
        let (a, b) = bisect(graph, &cluster);
        live.push(a);
        live.push(b);
    }
    live.sort_by_key(|c| c[0]);
    Ok(live)
}

/// Splits `members` (ascending, at least two) into two nonempty ascending
/// parts.
///
/// Disconnected induced subgraphs are split along components, balancing part
/// sizes. Connected ones use the sign pattern of the second eigenvector of the
/// normalized Laplacian `I - D^{-1/2} A D^{-1/2}`, mapped back through
/// `D^{-1/2}`; an empty side falls back to splitting at the median of that
/// vector.
pub fn bisect(graph: &SparseGraph, members: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = members.len();
    debug_assert!(n >= 2);
    if n == 2 {
        return (vec![members[0]], vec![members[1]]);
    }
    let adj = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { graph.weight(members[i], members[j]) });

    let components = components(&adj);
    if components.len() > 1 {
        let mut comps = components;
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        let (mut left, mut right): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
        for comp in comps {
            if left.len() <= right.len() {
                left.extend(comp);
            } else {
                right.extend(comp);
            }
        }
        return finish(members, left, right);
    }

    let deg: Vec<f64> = (0..n).map(|i| adj.row(i).sum()).collect();
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let lap = DMatrix::from_fn(n, n, |i, j| {
        let off = adj[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        if i == j { 1.0 - off } else { -off }
    });
    let eig = lap.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let fiedler = eig.eigenvectors.column(order[1]);
    let y: Vec<f64> = (0..n).map(|i| fiedler[i] * inv_sqrt[i]).collect();

    let (left, right): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| y[i] >= 0.0);
    if !left.is_empty() && !right.is_empty() {
        return finish(members, left, right);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let right = idx.split_off(n / 2);
    finish(members, idx, right)
}

fn finish(members: &[usize], left: Vec<usize>, right: Vec<usize>) -> (Vec<usize>, Vec<usize>) {
    let map = |part: Vec<usize>| {
        let mut v: Vec<usize> = part.into_iter().map(|i| members[i]).collect();
        v.sort_unstable();
        v
    };
    let (a, b) = (map(left), map(right));
    if a[0] < b[0] { (a, b) } else { (b, a) }
}

/// Connected components of a local adjacency matrix, each ascending, ordered
/// by smallest member.
fn components(adj: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = adj.nrows();
    let mut comp = vec![usize::MAX; n];
    let mut out = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut stack = vec![start];
        let mut members = Vec::new();
        comp[start] = id;
        while let Some(v) = stack.pop() {
            members.push(v);
            for u in 0..n {
                if comp[u] == usize::MAX && adj[(v, u)] > 0.0 {
                    comp[u] = id;
                    stack.push(u);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}
