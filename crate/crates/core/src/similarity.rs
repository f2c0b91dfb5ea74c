//! Characteristic similarity from weighted cross-sectional rank correlations.
//!
//! `rho_ij` is the time-series mean of the monthly weighted correlation of
//! ranks, `s_ij = exp(-(1 - |rho_ij|))` and the distance used for embedding is
//! `d_ij = 1/s_ij - 1`.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{RankPanel, WeightSeries};

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub names: Vec<String>,
    pub s: DMatrix<f64>,
    pub rho: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub names: Vec<String>,
    pub d: DMatrix<f64>,
}

/// `exp(-(1 - |rho|))`.
pub fn similarity_from_correlation(rho: f64) -> f64 {
    (-(1.0 - rho.abs())).exp()
}

/// Per month, each characteristic's rank column centered on its weighted mean,
/// scaled by `sqrt(w)` and normalized to unit length. `None` where the weighted
/// variance vanishes (e.g. a characteristic missing for the whole month).
struct NormalizedRanks {
    months: Vec<Vec<Option<Vec<f64>>>>,
}

impl NormalizedRanks {
    fn new(ranks: &RankPanel, weights: &WeightSeries) -> Result<Self> {
        if ranks.ranks.len() != weights.w.len() {
            return Err(Error::Validation("rank panel and weights cover different months".into()));
        }
        let months = ranks
            .ranks
            .par_iter()
            .zip(weights.w.par_iter())
            .map(|(x, w)| {
                if x.nrows() != w.len() {
                    return Err(Error::Validation("rank rows and weights differ in length".into()));
                }
                Ok((0..x.ncols())
                    .map(|c| {
                        let col = x.column(c);
                        let mean: f64 = col.iter().zip(w.iter()).map(|(v, wi)| v * wi).sum();
                        let u: Vec<f64> = col
                            .iter()
                            .zip(w.iter())
                            .map(|(v, wi)| wi.sqrt() * (v - mean))
                            .collect();
                        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let scale = col.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                        (norm > 1e-12 * scale.max(1.0)).then(|| u.into_iter().map(|v| v / norm).collect())
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { months })
    }

    fn correlation(&self, i: usize, j: usize) -> Result<f64> {
        if i == j {
            return Ok(1.0);
        }
        let (mut total, mut count) = (0.0, 0usize);
        for month in &self.months {
            if let (Some(a), Some(b)) = (&month[i], &month[j]) {
                let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                total += c.clamp(-1.0, 1.0);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::UndefinedCorrelation { i, j });
        }
        Ok(total / count as f64)
    }
}

/// Time-series mean of the monthly weighted rank correlation between
/// characteristics `i` and `j`. Months in which either column has zero
/// weighted variance are skipped.
pub fn rank_correlation(ranks: &RankPanel, i: usize, j: usize, weights: &WeightSeries) -> Result<f64> {
    let n = ranks.char_names.len();
    if i >= n || j >= n {
        return Err(Error::Precondition(format!("characteristic index out of range (I = {n})")));
    }
    NormalizedRanks::new(ranks, weights)?.correlation(i, j)
}

pub fn similarity_matrix(ranks: &RankPanel, weights: &WeightSeries) -> Result<SimilarityMatrix> {
    let n = ranks.char_names.len();
    let norm = NormalizedRanks::new(ranks, weights)?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| norm.correlation(i, j))
        .collect::<Result<Vec<_>>>()?;
    let mut rho = DMatrix::identity(n, n);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        rho[(i, j)] = v;
        rho[(j, i)] = v;
    }
    let s = rho.map(similarity_from_correlation);
    Ok(SimilarityMatrix { names: ranks.char_names.clone(), s, rho })
}

impl SimilarityMatrix {
    /// Builds `S` from a correlation matrix.
    pub fn from_correlation(names: Vec<String>, rho: DMatrix<f64>) -> Result<Self> {
        let n = names.len();
        if rho.nrows() != n || rho.ncols() != n {
            return Err(Error::Validation("correlation matrix shape does not match names".into()));
        }
        for i in 0..n {
            for j in 0..n {
                let v = rho[(i, j)];
                if !(-1.0..=1.0).contains(&v) || v != rho[(j, i)] {
                    return Err(Error::Validation(format!("invalid correlation at ({i}, {j})")));
                }
            }
            if rho[(i, i)] != 1.0 {
                return Err(Error::Validation(format!("correlation diagonal at {i} is not 1")));
            }
        }
        let s = rho.map(similarity_from_correlation);
        Ok(Self { names, s, rho })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        let doc = SimilarityDoc {
            names: self.names.clone(),
            similarity: rows_of(&self.s),
            rho: rows_of(&self.rho),
        };
        serde_json::to_writer_pretty(writer, &doc)?;
        Ok(())
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let doc: SimilarityDoc = serde_json::from_reader(reader)?;
        let rho = matrix_from_rows(&doc.rho, doc.names.len())?;
        let out = Self::from_correlation(doc.names, rho)?;
        let s = matrix_from_rows(&doc.similarity, out.len())?;
        if (&s - &out.s).amax() > 1e-12 {
            return Err(Error::Validation("similarity entries inconsistent with rho".into()));
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct SimilarityDoc {
    names: Vec<String>,
    similarity: Vec<Vec<f64>>,
    rho: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Validation(format!("expected a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn to_distance(s: &SimilarityMatrix) -> Result<DistanceMatrix> {
    if let Some(v) = s.s.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("similarity {v} is not positive")));
    }
    let mut d = s.s.map(|v| 1.0 / v - 1.0);
    d.fill_diagonal(0.0);
    Ok(DistanceMatrix { names: s.names.clone(), d })
}

impl DistanceMatrix {
    /// Inverse of [`to_distance`]: `s = 1 / (1 + d)`.
    pub fn to_similarity(&self) -> DMatrix<f64> {
        self.d.map(|v| 1.0 / (1.0 + v))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if self.d.nrows() != n || self.d.ncols() != n {
            return Err(Error::Validation("distance matrix shape does not match names".into()));
        }
        for i in 0..n {
            if self.d[(i, i)] != 0.0 {
                return Err(Error::Validation(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = self.d[(i, j)];
                if !(v >= 0.0) || !v.is_finite() || v != self.d[(j, i)] {
                    return Err(Error::Validation(format!("invalid distance at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

/// Dense CSV with a header row and a leading name column.
pub fn write_matrix_csv<W: Write>(writer: W, names: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, name) in names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n = names.len();
    let mut m = DMatrix::zeros(n, n);
    let mut count = 0;
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        if k >= n || record.len() != n + 1 || record[0] != names[k] {
            return Err(Error::Parse { row, message: "row does not match header".into() });
        }
        for j in 0..n {
            m[(k, j)] = record[j + 1]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse { row, message: e.to_string() })?;
        }
        count += 1;
    }
    if count != n {
        return Err(Error::Validation(format!("expected {n} rows, found {count}")));
    }
    Ok((names, m))
}
