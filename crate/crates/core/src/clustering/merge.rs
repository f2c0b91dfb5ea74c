use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::graph::SparseGraph;
use super::partition::Partition;
use crate::error::{Error, Result};

/// One greedy merge: clusters `a < b` were joined (the result keeps id `a`),
/// leaving `k` clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub a: usize,
    pub b: usize,
    #[serde(serialize_with = "ser_ris", deserialize_with = "de_ris")]
    pub max_ris: f64,
    pub k: usize,
}

/// Merge history. Cluster ids index `basic_subclusters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeTrace {
    pub basic_subclusters: Vec<Vec<usize>>,
    pub steps: Vec<MergeStep>,
}

impl MergeTrace {
    pub fn m(&self) -> usize {
        self.basic_subclusters.len()
    }

    /// Max RIS of the step that left `k` clusters.
    pub fn max_ris_at(&self, k: usize) -> Option<f64> {
        self.steps.iter().find(|s| s.k == k).map(|s| s.max_ris)
    }

    pub fn to_json<W: std::io::Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn from_json<R: std::io::Read>(reader: R) -> Result<Self> {
        let trace: Self = serde_json::from_reader(reader)?;
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.basic_subclusters {
            if c.is_empty() {
                return Err(Error::Validation("empty basic sub-cluster".into()));
            }
            for &v in c {
                if !seen.insert(v) {
                    return Err(Error::Validation(format!("vertex {v} in two sub-clusters")));
                }
            }
        }
        let mut alive = vec![true; m];
        for (i, s) in self.steps.iter().enumerate() {
            if s.k + i + 1 != m {
                return Err(Error::Validation(format!("step {i} leaves {} clusters, expected {}", s.k, m - i - 1)));
            }
            if s.a >= s.b || s.b >= m || !alive[s.a] || !alive[s.b] {
                return Err(Error::Validation(format!("step {i} merges invalid pair ({}, {})", s.a, s.b)));
            }
            if s.max_ris.is_nan() || s.max_ris < 0.0 {
                return Err(Error::Validation(format!("step {i} has invalid RIS")));
            }
            alive[s.b] = false;
        }
        Ok(())
    }
}

fn ser_ris<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_ris<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Ris {
        Num(f64),
        Str(String),
    }
    match Ris::deserialize(d)? {
        Ris::Num(v) => Ok(v),
        Ris::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Ris::Str(s) => Err(serde::de::Error::custom(format!("invalid RIS value {s:?}"))),
    }
}

/// Sum of edge weights between two sets, always traversed from the set with
/// the smaller minimum so that the result is exactly symmetric.
fn cross_sum(graph: &SparseGraph, ci: &[usize], cj: &[usize]) -> f64 {
    let (outer, inner) = if ci.iter().min() <= cj.iter().min() { (ci, cj) } else { (cj, ci) };
    let mut sorted_inner = inner.to_vec();
    sorted_inner.sort_unstable();
    let mut sorted_outer = outer.to_vec();
    sorted_outer.sort_unstable();
    sorted_outer.iter().flat_map(|&i| sorted_inner.iter().map(move |&j| graph.weight(i, j))).sum()
}

fn intra(graph: &SparseGraph, c: &[usize]) -> f64 {
    let n = c.len();
    if n < 2 {
        return 0.0;
    }
    let mut v = c.to_vec();
    v.sort_unstable();
    let mut total = 0.0;
    for (p, &i) in v.iter().enumerate() {
        for &j in &v[p + 1..] {
            total += graph.weight(i, j);
        }
    }
    total / (n * (n - 1) / 2) as f64
}

fn ris_unchecked(graph: &SparseGraph, ci: &[usize], cj: &[usize], intra_i: f64, intra_j: f64) -> f64 {
    let (ni, nj) = (ci.len() as f64, cj.len() as f64);
    let inter = cross_sum(graph, ci, cj) / (ni * nj);
    let denom = (ni * intra_i + nj * intra_j) / (ni + nj);
    if denom > 0.0 {
        inter / denom
    } else if inter > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Relative inter-cluster similarity: average cross-edge weight divided by the
/// size-weighted average within-cluster edge weight. Absent edges count as 0.
/// Two clusters with no internal edges give `+inf` if connected, else 0.
pub fn ris(graph: &SparseGraph, ci: &[usize], cj: &[usize]) -> Result<f64> {
    if ci.is_empty() || cj.is_empty() {
        return Err(Error::Precondition("RIS needs nonempty clusters".into()));
    }
    if ci.iter().chain(cj).any(|&v| v >= graph.n()) {
        return Err(Error::Precondition("RIS cluster member out of range".into()));
    }
    if ci.iter().any(|v| cj.contains(v)) {
        return Err(Error::Precondition("RIS clusters overlap".into()));
    }
    Ok(ris_unchecked(graph, ci, cj, intra(graph, ci), intra(graph, cj)))
}

/// Greedily merges the pair of live clusters with the largest RIS until
/// `k_target` remain. Ties go to the lexicographically smallest id pair.
///
/// The returned partition numbers clusters by their smallest member.
pub fn merge_ris(subclusters: &[Vec<usize>], graph: &SparseGraph, k_target: usize) -> Result<(Partition, MergeTrace)> {
    let m = subclusters.len();
    if k_target == 0 || k_target > m {
        return Err(Error::Precondition(format!("need 1 <= K <= m, got K = {k_target}, m = {m}")));
    }
    Partition::from_clusters(subclusters, graph.n())?;
    let mut live: Vec<Option<Vec<usize>>> = subclusters
        .iter()
        .map(|c| {
            let mut v = c.clone();
            v.sort_unstable();
            Some(v)
        })
        .collect();
    let mut intras: Vec<f64> = live.iter().map(|c| intra(graph, c.as_deref().unwrap())).collect();
    let mut steps = Vec::with_capacity(m - k_target);
    for k in (k_target..m).rev() {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..m {
            let Some(ca) = &live[a] else { continue };
            for b in a + 1..m {
                let Some(cb) = &live[b] else { continue };
                let r = ris_unchecked(graph, ca, cb, intras[a], intras[b]);
                if best.is_none_or(|(_, _, v)| r > v) {
                    best = Some((a, b, r));
                }
            }
        }
        let (a, b, max_ris) = best.expect("at least two live clusters");
        let mut merged = live[a].take().unwrap();
        merged.extend(live[b].take().unwrap());
        merged.sort_unstable();
        intras[a] = intra(graph, &merged);
        live[a] = Some(merged);
        steps.push(MergeStep { a, b, max_ris, k });
    }
    let mut clusters: Vec<Vec<usize>> = live.into_iter().flatten().collect();
    clusters.sort_by_key(|c| c[0]);
    let partition = Partition::from_clusters(&clusters, graph.n())?;
    Ok((partition, MergeTrace { basic_subclusters: subclusters.to_vec(), steps }))
}
