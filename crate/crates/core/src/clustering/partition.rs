use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Assignment of `I` characteristics to `K` nonempty clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    k: usize,
    labels: Option<Vec<String>>,
}

impl Partition {
    pub fn new(assignment: Vec<usize>, labels: Option<Vec<String>>) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::Validation("partition is empty".into()));
        }
        let k = assignment.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; k];
        for &a in &assignment {
            seen[a] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!("cluster {missing} is empty")));
        }
        if let Some(l) = &labels {
            if l.len() != k {
                return Err(Error::Validation(format!("{} labels for {k} clusters", l.len())));
            }
        }
        Ok(Self { assignment, k, labels })
    }

    /// Builds a partition from member lists; cluster `c` gets id `c`.
    pub fn from_clusters(clusters: &[Vec<usize>], n: usize) -> Result<Self> {
        let mut assignment = vec![usize::MAX; n];
        for (c, members) in clusters.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Validation(format!("cluster {c} is empty")));
            }
            for &v in members {
                if v >= n || assignment[v] != usize::MAX {
                    return Err(Error::Validation(format!("vertex {v} out of range or assigned twice")));
                }
                assignment[v] = c;
            }
        }
        if assignment.contains(&usize::MAX) {
            return Err(Error::Validation("clusters do not cover every vertex".into()));
        }
        Self::new(assignment, None)
    }

    pub fn single(n: usize) -> Self {
        Self { assignment: vec![0; n], k: 1, labels: None }
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.k {
            return Err(Error::Validation(format!("{} labels for {} clusters", labels.len(), self.k)));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn label(&self, c: usize) -> String {
        self.labels
            .as_ref()
            .map(|l| l[c].clone())
            .unwrap_or_else(|| format!("C{}", c + 1))
    }

    /// Member lists ordered by cluster id, members ascending.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (v, &c) in self.assignment.iter().enumerate() {
            out[c].push(v);
        }
        out
    }

    /// Relabels clusters in order of their smallest member. Labels follow
    /// their clusters.
    pub fn canonical(&self) -> Self {
        let mut map = vec![usize::MAX; self.k];
        let mut next = 0;
        for &c in &self.assignment {
            if map[c] == usize::MAX {
                map[c] = next;
                next += 1;
            }
        }
        let labels = self.labels.as_ref().map(|l| {
            let mut out = vec![String::new(); self.k];
            for (old, &new) in map.iter().enumerate() {
                out[new] = l[old].clone();
            }
            out
        });
        Self {
            assignment: self.assignment.iter().map(|&c| map[c]).collect(),
            k: self.k,
            labels,
        }
    }

    /// Whether every cluster of `self` lies inside a single cluster of `outer`.
    pub fn refines(&self, outer: &Partition) -> bool {
        self.clusters().iter().all(|members| {
            let c = outer.assignment[members[0]];
            members.iter().all(|&v| outer.assignment[v] == c)
        })
    }

    /// CSV `characteristic,cluster,label`.
    pub fn write_csv<W: Write>(&self, writer: W, names: &[String]) -> Result<()> {
        if names.len() != self.len() {
            return Err(Error::Validation("name count does not match partition size".into()));
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["characteristic", "cluster", "label"])?;
        for (name, &c) in names.iter().zip(&self.assignment) {
            w.write_record([name.as_str(), &c.to_string(), &self.label(c)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `characteristic,cluster[,label]` rows for the given characteristic
    /// names. Integer cluster tokens keep their numeric order; any other
    /// tokens are numbered by first appearance.
    pub fn read_csv<R: Read>(reader: R, names: &[String]) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || headers[0].trim() != "characteristic" || headers[1].trim() != "cluster" {
            return Err(Error::Validation("partition header must be characteristic,cluster[,label]".into()));
        }
        let has_label = headers.len() >= 3;
        let mut rows: BTreeMap<usize, (String, Option<String>)> = BTreeMap::new();
        for (k, record) in rdr.records().enumerate() {
            let row = k + 1;
            let record = record.map_err(|e| Error::Parse { row, message: e.to_string() })?;
            if record.len() < 2 {
                return Err(Error::Parse { row, message: "wrong field count".into() });
            }
            let name = record[0].trim();
            let idx = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Parse { row, message: format!("unknown characteristic '{name}'") })?;
            let token = record[1].trim().to_string();
            if token.is_empty() {
                return Err(Error::Parse { row, message: "empty cluster".into() });
            }
            let label = has_label.then(|| record.get(2).unwrap_or("").trim().to_string());
            if rows.insert(idx, (token, label)).is_some() {
                return Err(Error::Parse { row, message: format!("characteristic '{name}' listed twice") });
            }
        }
        if rows.len() != names.len() {
            let missing: Vec<&str> = names
                .iter()
                .enumerate()
                .filter(|(i, _)| !rows.contains_key(i))
                .map(|(_, n)| n.as_str())
                .collect();
            return Err(Error::Validation(format!("characteristics without a cluster: {missing:?}")));
        }
        let tokens: Vec<&String> = rows.values().map(|(t, _)| t).collect();
        let numeric: Option<Vec<u64>> = tokens.iter().map(|t| t.parse::<u64>().ok()).collect();
        let ids: Vec<String> = match &numeric {
            Some(nums) => {
                let mut uniq: Vec<u64> = nums.clone();
                uniq.sort_unstable();
                uniq.dedup();
                uniq.iter().map(|u| u.to_string()).collect()
            }
            None => {
                let mut order: Vec<String> = Vec::new();
                for t in &tokens {
                    if !order.contains(t) {
                        order.push((*t).clone());
                    }
                }
                order
            }
        };
        let id_of = |t: &str| -> usize {
            match &numeric {
                Some(_) => ids.iter().position(|u| u == &t.parse::<u64>().unwrap().to_string()).unwrap(),
                None => ids.iter().position(|u| u == t).unwrap(),
            }
        };
        let assignment: Vec<usize> = rows.values().map(|(t, _)| id_of(t)).collect();
        let labels = if has_label {
            let mut labels: Vec<Option<String>> = vec![None; ids.len()];
            for (c, (_, l)) in assignment.iter().zip(rows.values()) {
                let l = l.clone().unwrap_or_default();
                match &labels[*c] {
                    Some(prev) if *prev != l => {
                        return Err(Error::Validation(format!("cluster {} has conflicting labels", ids[*c])));
                    }
                    _ => labels[*c] = Some(l),
                }
            }
            Some(labels.into_iter().map(|l| l.unwrap_or_default()).collect())
        } else if numeric.is_none() {
            Some(ids.clone())
        } else {
            None
        };
        Self::new(assignment, labels)
    }
}

/// Uniformly random partition of `n` items into exactly `k` nonempty
/// clusters, reproducible from `seed`.
///
/// Draws from the uniform distribution over set partitions using the
/// Stirling recurrence `S(n,k) = k S(n-1,k) + S(n-1,k-1)` in log space.
pub fn random_partition(n: usize, k: usize, seed: u64) -> Result<Partition> {
    if k == 0 || k > n {
        return Err(Error::Precondition(format!("need 1 <= K <= I, got K = {k}, I = {n}")));
    }
    let neg_inf = f64::NEG_INFINITY;
    // ln_s[i][j] = ln S(i, j)
    let mut ln_s = vec![vec![neg_inf; k + 1]; n + 1];
    ln_s[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=k.min(i) {
            let a = (j as f64).ln() + ln_s[i - 1][j];
            let b = ln_s[i - 1][j - 1];
            let hi = a.max(b);
            ln_s[i][j] = if hi == neg_inf { neg_inf } else { hi + ((a - hi).exp() + (b - hi).exp()).ln() };
        }
    }

    enum Step {
        New,
        Join(usize),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(n);
    let mut blocks = k;
    for i in (1..=n).rev() {
        let p_new = (ln_s[i - 1][blocks - 1] - ln_s[i][blocks]).exp();
        if rng.random::<f64>() < p_new {
            steps.push(Step::New);
            blocks -= 1;
        } else {
            steps.push(Step::Join(rng.random_range(0..blocks)));
        }
    }
    debug_assert_eq!(blocks, 0);
    let mut assignment = Vec::with_capacity(n);
    let mut created = 0;
    for step in steps.into_iter().rev() {
        match step {
            Step::New => {
                assignment.push(created);
                created += 1;
            }
            Step::Join(c) => assignment.push(c),
        }
    }
    Partition::new(assignment, None)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &Partition, b: &Partition) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions cover different item counts");
    let n = a.len() as f64;
    let mut table = vec![vec![0u64; b.k()]; a.k()];
    for (&x, &y) in a.assignment().iter().zip(b.assignment()) {
        table[x][y] += 1;
    }
    let comb2 = |v: f64| v * (v - 1.0) / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&v| comb2(v as f64)).sum();
    let sum_rows: f64 = table.iter().map(|r| comb2(r.iter().sum::<u64>() as f64)).sum();
    let sum_cols: f64 = (0..b.k()).map(|j| comb2(table.iter().map(|r| r[j]).sum::<u64>() as f64)).sum();
    let expected = sum_rows * sum_cols / comb2(n);
    let max = (sum_rows + sum_cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (sum_cells - expected) / (max - expected)
}
