//! Two-dimensional metric MDS of a distance matrix by stress majorization.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdsOptions {
    /// Relative stress decrease below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Seeds the coordinates that classical scaling cannot provide.
    pub seed: u64,
}

impl Default for MdsOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub names: Vec<String>,
    /// `I x 2`.
    pub coords: DMatrix<f64>,
    /// `sqrt(Σ (d - d̂)² / Σ d²)` over pairs.
    pub stress: f64,
    pub iterations: usize,
    /// Stress of the start and after every update.
    pub stress_path: Vec<f64>,
}

/// Stress of `coords` against the target distances.
pub fn stress(d: &DMatrix<f64>, coords: &DMatrix<f64>) -> f64 {
    let n = d.nrows();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let fit = (coords.row(i) - coords.row(j)).norm();
            num += (d[(i, j)] - fit).powi(2);
            den += d[(i, j)].powi(2);
        }
    }
    (num / den).sqrt()
}

/// Classical scaling from the doubly centered squared distances. Axes
/// without a positive eigenvalue are filled with small seeded noise.
fn classical_scaling(d: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
    let n = d.nrows();
    let sq = d.map(|v| v * v);
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + grand));
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = 1e-3 * d.max().max(f64::MIN_POSITIVE);
    let mut x = DMatrix::zeros(n, 2);
    for axis in 0..2 {
        let k = order.get(axis).copied();
        match k.filter(|&k| eig.eigenvalues[k] > 1e-12 * top && top > 0.0) {
            Some(k) => {
                let mut v = eig.eigenvectors.column(k).into_owned();
                let lead = v.iter().copied().fold(0.0_f64, |m, e| if e.abs() > m.abs() { e } else { m });
                if lead < 0.0 {
                    v = -v;
                }
                x.set_column(axis, &(v * eig.eigenvalues[k].sqrt()));
            }
            None => {
                for i in 0..n {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[(i, axis)] = jitter * z;
                }
            }
        }
    }
    x
}

/// Guttman transform for unit weights.
fn guttman(d: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let fit = (x.row(i) - x.row(j)).norm();
                if fit > 0.0 {
                    b[(i, j)] = -d[(i, j)] / fit;
                }
            }
        }
        let off: f64 = b.row(i).sum();
        b[(i, i)] = -off;
    }
    b * x / n as f64
}

/// Embeds the distance matrix in the plane, starting from classical scaling
/// and iterating the majorization update until the relative stress decrease
/// falls below `tol`.
pub fn mds_embed(dist: &DistanceMatrix, opts: &MdsOptions) -> Result<Embedding> {
    dist.validate()?;
    let d = &dist.d;
    let n = d.nrows();
    if n < 2 || d.iter().all(|&v| v == 0.0) {
        return Err(Error::Domain("all distances are zero; nothing to embed".into()));
    }
    let mut x = classical_scaling(d, opts.seed);
    let mut current = stress(d, &x);
    let mut path = vec![current];
    let mut iterations = 0;
    while iterations < opts.max_iter && current > 1e-15 {
        let next = guttman(d, &x);
        let s = stress(d, &next);
        iterations += 1;
        if s > current {
            // only rounding can raise the majorized stress; keep the better point
            path.push(current);
            break;
        }
        let gain = (current - s) / current;
        x = next;
        current = s;
        path.push(s);
        if gain < opts.tol {
            break;
        }
    }
    Ok(Embedding { names: dist.names.clone(), coords: x, stress: current, iterations, stress_path: path })
}

impl Embedding {
    /// Rows `name,x,y[,label]`.
    pub fn write_csv<W: Write>(&self, w: W, labels: Option<&[String]>) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if labels.is_some() {
            out.write_record(["name", "x", "y", "label"])?;
        } else {
            out.write_record(["name", "x", "y"])?;
        }
        for (i, name) in self.names.iter().enumerate() {
            let mut rec = vec![name.clone(), format!("{:.12}", self.coords[(i, 0)]), format!("{:.12}", self.coords[(i, 1)])];
            if let Some(l) = labels {
                rec.push(l[i].clone());
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn from_points(pts: &[(f64, f64)]) -> DistanceMatrix {
        let n = pts.len();
        let d = DMatrix::from_fn(n, n, |i, j| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt());
        let d = (&d + d.transpose()) * 0.5;
        DistanceMatrix { names: (0..n).map(|i| format!("c{i}")).collect(), d }
    }

    fn sorted_pairs(x: &DMatrix<f64>) -> Vec<f64> {
        let n = x.nrows();
        let mut v: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| (x.row(i) - x.row(j)).norm()).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn planar_points_reach_zero_stress() {
        let pts = [(0.0, 0.0), (1.0, 0.2), (0.3, 2.0), (-1.5, 0.7), (2.2, -1.1), (0.1, -0.4)];
        let e = mds_embed(&from_points(&pts), &MdsOptions::default()).unwrap();
        assert!(e.stress < 1e-6, "{}", e.stress);
    }

    #[test]
    fn equilateral_triangle() {
        let d = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        let e = mds_embed(&DistanceMatrix { names: vec!["a".into(), "b".into(), "c".into()], d }, &MdsOptions::default()).unwrap();
        for v in sorted_pairs(&e.coords) {
            assert_close!(v, 1.0, 1e-6);
        }
    }

    #[test]
    fn unit_square() {
        let r2 = 2f64.sqrt();
        let d = DMatrix::from_row_slice(4, 4, &[0.0, 1.0, r2, 1.0, 1.0, 0.0, 1.0, r2, r2, 1.0, 0.0, 1.0, 1.0, r2, 1.0, 0.0]);
        let e = mds_embed(&DistanceMatrix { names: (0..4).map(|i| i.to_string()).collect(), d }, &MdsOptions::default()).unwrap();
        let got = sorted_pairs(&e.coords);
        let want = [1.0, 1.0, 1.0, 1.0, r2, r2];
        for (g, w) in got.iter().zip(want) {
            assert_close!(*g, w, 1e-6);
        }
    }

    #[test]
    fn all_zero_distances_rejected() {
        let d = DistanceMatrix { names: vec!["a".into(), "b".into()], d: DMatrix::zeros(2, 2) };
        assert!(mds_embed(&d, &MdsOptions::default()).is_err());
    }

    #[test]
    fn non_euclidean_distances_decrease_stress() {
        // a perturbed cycle metric does not embed in the plane exactly
        let n = 8;
        let d = DMatrix::from_fn(n, n, |i, j| {
            let k = (i as i64 - j as i64).unsigned_abs() as usize;
            k.min(n - k) as f64 + if i != j && (i + j) % 3 == 0 { 0.7 } else { 0.0 }
        });
        let e = mds_embed(&DistanceMatrix { names: (0..n).map(|i| i.to_string()).collect(), d }, &MdsOptions::default()).unwrap();
        assert!(e.stress > 1e-3);
        assert!(e.stress_path.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(e.stress <= e.stress_path[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn stress_nonincreasing_and_permutation_invariant(
            pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 4..10),
            rot in 0usize..100,
        ) {
            // points in 3-D so the planar fit is inexact
            let n = pts.len();
            let d = DMatrix::from_fn(n, n, |i, j| {
                let (a, b) = (pts[i], pts[j]);
                ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2) + (a.2 - b.2).powi(2)).sqrt()
            });
            let d = (&d + d.transpose()) * 0.5;
            prop_assume!(d.iter().any(|&v| v > 1e-6));
            let names: Vec<String> = (0..n).map(|i| i.to_string()).collect();
            let e = mds_embed(&DistanceMatrix { names: names.clone(), d: d.clone() }, &MdsOptions::default()).unwrap();
            prop_assert!(e.stress_path.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            prop_assert!((0.0..=1.0).contains(&e.stress));

            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let dp = DMatrix::from_fn(n, n, |i, j| d[(perm[i], perm[j])]);
            let ep = mds_embed(&DistanceMatrix { names, d: dp }, &MdsOptions::default()).unwrap();
            prop_assert!((e.stress - ep.stress).abs() < 1e-6, "{} vs {}", e.stress, ep.stress);
            for i in 0..n {
                for j in 0..n {
                    let a = (e.coords.row(perm[i]) - e.coords.row(perm[j])).norm();
                    let b = (ep.coords.row(i) - ep.coords.row(j)).norm();
                    prop_assert!((a - b).abs() < 1e-6, "pair ({i}, {j}): {a} vs {b}");
                }
            }
        }
    }
}
