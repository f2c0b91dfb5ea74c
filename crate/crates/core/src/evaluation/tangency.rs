use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::stats::sharpe;
use crate::error::{Error, Result};
use crate::linalg::{is_singular, mean_cov, solve_spd};
use crate::series::FactorSeries;

pub const DEFAULT_TANGENCY_BURN_IN: usize = 60;

/// Target monthly volatility of the scaled tangency portfolio.
pub const TARGET_VOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangencyOptions {
    /// Index of the first rebalance; estimates use the rows before it.
    pub burn_in: usize,
    /// Add `1e-8 * trace / J` to a singular covariance instead of failing.
    pub ridge: bool,
}

impl Default for TangencyOptions {
    fn default() -> Self {
        Self { burn_in: DEFAULT_TANGENCY_BURN_IN, ridge: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangencyResult {
    /// Realization months of `returns`.
    pub dates: Vec<u32>,
    pub weights_path: Vec<DVector<f64>>,
    pub returns: Vec<f64>,
    pub scaling_path: Vec<f64>,
    /// Annualized Sharpe ratio of `returns`.
    pub sharpe: f64,
    /// Rebalance months whose covariance needed the ridge.
    pub ridged_months: Vec<u32>,
}

/// Tangency weights `c Σ^{-1} μ` with `c` setting the in-sample volatility
/// of the weighted series to 1%, from the rows of `history` (`T x J`,
/// covariance with `1/T` normalization). Returns the weights, `c`, and
/// whether the ridge was needed.
pub fn tangency_weights(history: &DMatrix<f64>, ridge: bool) -> Option<(DVector<f64>, f64, bool)> {
    let (mu, mut sigma) = mean_cov(history);
    let mut used = false;
    if is_singular(&sigma) {
        if !ridge {
            return None;
        }
        let bump = 1e-8 * sigma.trace().max(f64::MIN_POSITIVE) / sigma.nrows() as f64;
        for d in 0..sigma.nrows() {
            sigma[(d, d)] += bump;
        }
        used = true;
    }
    let u = solve_spd(&sigma, &mu)?;
    let var = u.dot(&(&sigma * &u));
    if !(var > 0.0) {
        return None;
    }
    let c = TARGET_VOL / var.sqrt();
    Some((u * c, c, used))
}

/// Expanding-window tangency portfolio of the factor series. At each row
/// `t >= burn_in` the weights use rows `0..t` and earn row `t`.
pub fn tangency_backtest(factors: &FactorSeries, opts: &TangencyOptions) -> Result<TangencyResult> {
    let j = factors.n_series();
    let t_total = factors.len();
    if opts.burn_in < j + 2 {
        return Err(Error::Precondition(format!("burn-in {} must be at least J + 2 = {}", opts.burn_in, j + 2)));
    }
    if opts.burn_in >= t_total {
        return Err(Error::Precondition(format!("burn-in {} leaves no month out of {t_total}", opts.burn_in)));
    }
    let mut out = TangencyResult {
        dates: Vec::new(),
        weights_path: Vec::new(),
        returns: Vec::new(),
        scaling_path: Vec::new(),
        sharpe: 0.0,
        ridged_months: Vec::new(),
    };
    for t in opts.burn_in..t_total {
        let date = factors.dates[t];
        let history = factors.values.rows(0, t).into_owned();
        let (w, c, used) =
            tangency_weights(&history, opts.ridge).ok_or(Error::SingularCovariance { month: date })?;
        if used {
            log::warn!("ridge added to the factor covariance at {date}");
            out.ridged_months.push(date);
        }
        out.returns.push(w.dot(&factors.row(t)));
        out.weights_path.push(w);
        out.scaling_path.push(c);
        out.dates.push(date);
    }
    out.sharpe = if out.returns.len() >= 2 { sharpe(&out.returns).unwrap_or(f64::NAN) } else { f64::NAN };
    Ok(out)
}

/// Annualized Sharpe ratio of the full-sample tangency portfolio,
/// `sqrt(12 μ'Σ^{-1}μ)` with the `1/T` covariance.
pub fn insample_tangency_sharpe(values: &DMatrix<f64>) -> Result<f64> {
    let (mu, sigma) = mean_cov(values);
    let u = solve_spd(&sigma, &mu).ok_or_else(|| Error::Domain("factor covariance is singular".into()))?;
    Ok((12.0 * mu.dot(&u)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_factors_get_equal_weights() {
        // two uncorrelated columns with equal means and variances
        let x = DMatrix::from_row_slice(4, 2, &[0.02, 0.0, 0.0, 0.02, 0.0, 0.0, 0.02, 0.02]);
        let (mu, sigma) = mean_cov(&x);
        assert_eq!(mu[0], mu[1]);
        assert_eq!(sigma[(0, 1)], 0.0);
        let (w, _, _) = tangency_weights(&x, false).unwrap();
        assert_close!(w[0], w[1], 1e-15);
    }

    #[test]
    fn identity_covariance_direction() {
        // Σ = I and μ = (2, 1): Σ^{-1} μ ∝ (2, 1)
        let sigma = DMatrix::<f64>::identity(2, 2);
        let mu = DVector::from_vec(vec![2.0, 1.0]);
        let u = solve_spd(&sigma, &mu).unwrap();
        assert_close!(u[0] / u[1], 2.0, 1e-15);
    }

    #[test]
    fn scaled_history_has_one_percent_vol() {
        let x = DMatrix::from_fn(30, 3, |t, j| 0.01 * (((t * 7 + j * 3) % 11) as f64 - 4.0) / 5.0 + 0.002 * j as f64);
        let (w, _, _) = tangency_weights(&x, false).unwrap();
        let series: Vec<f64> = (0..30).map(|t| w.dot(&x.row(t).transpose())).collect();
        let mean = series.iter().sum::<f64>() / 30.0;
        let vol = (series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 30.0).sqrt();
        assert_close!(vol, 0.01, 1e-10);
    }

    #[test]
    fn single_factor_matches_its_own_sharpe() {
        let x = DMatrix::from_fn(40, 1, |t, _| 0.01 * ((t * 5 % 7) as f64 - 2.5));
        let (mu, sigma) = mean_cov(&x);
        let s = insample_tangency_sharpe(&x).unwrap();
        assert_close!(s, (mu[0] / sigma[(0, 0)].sqrt()).abs() * 12f64.sqrt(), 1e-12);
    }

    #[test]
    fn burn_in_bounds() {
        let f = FactorSeries::new((0..10).map(|t| 200001 + t).collect(), vec!["a".into(), "b".into()], DMatrix::from_fn(10, 2, |t, j| (t + j) as f64 * 0.001)).unwrap();
        assert!(tangency_backtest(&f, &TangencyOptions { burn_in: 3, ridge: false }).is_err());
        assert!(tangency_backtest(&f, &TangencyOptions { burn_in: 10, ridge: false }).is_err());
    }

    #[test]
    fn singular_covariance_names_month() {
        let dates: Vec<u32> = (0..10).map(|t| 200001 + t).collect();
        let v = DMatrix::from_fn(10, 2, |t, _| 0.01 * (t % 3) as f64);
        let f = FactorSeries::new(dates, vec!["a".into(), "b".into()], v).unwrap();
        match tangency_backtest(&f, &TangencyOptions { burn_in: 5, ridge: false }) {
            Err(Error::SingularCovariance { month }) => assert_eq!(month, 200006),
            other => panic!("{other:?}"),
        }
        let r = tangency_backtest(&f, &TangencyOptions { burn_in: 5, ridge: true }).unwrap();
        assert_eq!(r.ridged_months.len(), 5);
    }
}
