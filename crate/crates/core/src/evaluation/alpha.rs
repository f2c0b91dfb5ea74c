use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;

/// Intercept and slopes of a factor on benchmark factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    /// Percent per month.
    pub alpha: f64,
    pub betas: Vec<f64>,
    /// Newey–West standard error of alpha, percent per month.
    pub se_alpha: f64,
    pub tstat_alpha: f64,
    pub nw_lags: usize,
    pub residuals: Vec<f64>,
}

/// `floor(4 (T/100)^{2/9})`.
pub fn default_nw_lags(t: usize) -> usize {
    (4.0 * (t as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// Regresses `y` (decimal returns) on a constant and the columns of `bench`
/// (`T x K`) by OLS, with a Bartlett-kernel HAC covariance.
pub fn alpha_regression(y: &[f64], bench: &DMatrix<f64>, nw_lags: Option<usize>) -> Result<AlphaReport> {
    let t = y.len();
    let k = bench.ncols();
    if bench.nrows() != t {
        return Err(Error::Precondition(format!("regressand has {t} months, benchmarks {}", bench.nrows())));
    }
    if t < k + 2 {
        return Err(Error::Precondition(format!("need more than {} months, got {t}", k + 1)));
    }
    let collinear = collinear_columns(bench);
    if !collinear.is_empty() {
        return Err(Error::Collinear { columns: collinear });
    }
    let lags = nw_lags.unwrap_or_else(|| default_nw_lags(t));

    // centered normal equations, so that y equal to a benchmark column gives
    // its slope as a ratio of identical sums
    let tf = t as f64;
    let y_mean = y.iter().sum::<f64>() / tf;
    let x_mean: Vec<f64> = bench.column_iter().map(|c| c.sum() / tf).collect();
    let xc = DMatrix::from_fn(t, k, |r, c| bench[(r, c)] - x_mean[c]);
    let yc = DVector::from_fn(t, |r, _| y[r] - y_mean);
    let sxx = xc.transpose() * &xc;
    let sxy = xc.transpose() * &yc;
    let betas = if k == 1 {
        DVector::from_element(1, sxy[0] / sxx[(0, 0)])
    } else {
        solve_spd(&sxx, &sxy).ok_or_else(|| Error::Collinear { columns: (0..k).collect() })?
    };
    let alpha = y_mean - x_mean.iter().zip(betas.iter()).map(|(m, b)| m * b).sum::<f64>();
    let residuals: Vec<f64> = (0..t)
        .map(|r| y[r] - alpha - (0..k).map(|c| bench[(r, c)] * betas[c]).sum::<f64>())
        .collect();

    // sandwich (X'X)^{-1} S (X'X)^{-1} with X = [1, bench]
    let x = DMatrix::from_fn(t, k + 1, |r, c| if c == 0 { 1.0 } else { bench[(r, c - 1)] });
    let s = hac_meat(&x, &residuals, lags);
    let xtx_inv = (x.transpose() * &x)
        .try_inverse()
        .ok_or_else(|| Error::Collinear { columns: (0..k).collect() })?;
    let cov = &xtx_inv * s * &xtx_inv;
    let se = cov[(0, 0)].max(0.0).sqrt();
    Ok(AlphaReport {
        alpha: 100.0 * alpha,
        betas: betas.iter().copied().collect(),
        se_alpha: 100.0 * se,
        tstat_alpha: alpha / se,
        nw_lags: lags,
        residuals,
    })
}

/// `Σ_t g_t g_t' + Σ_l (1 - l/(L+1)) Σ_t (g_t g_{t-l}' + g_{t-l} g_t')`
/// with `g_t = x_t e_t`.
pub fn hac_meat(x: &DMatrix<f64>, e: &[f64], lags: usize) -> DMatrix<f64> {
    let t = x.nrows();
    let p = x.ncols();
    let g = DMatrix::from_fn(t, p, |r, c| x[(r, c)] * e[r]);
    let mut s = g.transpose() * &g;
    for l in 1..=lags.min(t.saturating_sub(1)) {
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        let lead = g.rows(l, t - l);
        let lag = g.rows(0, t - l);
        let gamma = lead.transpose() * lag;
        s += (&gamma + gamma.transpose()) * w;
    }
    s
}

/// Columns (0-based) that are numerically in the span of the constant and
/// the preceding columns, by sequential Gram–Schmidt.
pub fn collinear_columns(bench: &DMatrix<f64>) -> Vec<usize> {
    let t = bench.nrows();
    let mut basis: Vec<DVector<f64>> = vec![DVector::from_element(t, 1.0 / (t as f64).sqrt())];
    let mut out = Vec::new();
    for c in 0..bench.ncols() {
        let orig = bench.column(c).into_owned();
        let mut v = orig.clone();
        for _ in 0..2 {
            for q in &basis {
                v -= q * q.dot(&v);
            }
        }
        let norm = v.norm();
        if !(norm > 1e-10 * orig.norm().max(f64::MIN_POSITIVE)) || !norm.is_finite() {
            out.push(c);
        } else {
            basis.push(v / norm);
        }
    }
    out
}
