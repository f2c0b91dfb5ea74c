use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Summary of a monthly return series. Mean, SD and drawdown are in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorStats {
    pub mean: f64,
    pub sd: f64,
    /// `mean / sd * sqrt(12)`.
    pub sharpe: f64,
    /// Largest peak-to-trough loss of compounded wealth.
    pub mdd: f64,
}

/// Statistics of a decimal monthly return series.
pub fn factor_stats(returns: &[f64]) -> Result<FactorStats> {
    let (mean, sd) = mean_sd(returns)?;
    let scale = returns.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if !(sd > 1e-12 * scale) {
        return Err(Error::Domain("Sharpe ratio undefined for a series with zero variance".into()));
    }
    Ok(FactorStats {
        mean: 100.0 * mean,
        sd: 100.0 * sd,
        sharpe: annualize(mean, sd),
        mdd: 100.0 * max_drawdown(returns),
    })
}

/// Annualized Sharpe ratio from monthly mean and SD.
pub fn annualize(mean: f64, sd: f64) -> f64 {
    mean / sd * 12f64.sqrt()
}

pub fn sharpe(returns: &[f64]) -> Result<f64> {
    factor_stats(returns).map(|s| s.sharpe)
}

/// Sample mean and `n - 1` standard deviation.
pub fn mean_sd(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(Error::Precondition(format!("need at least 2 observations, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("series contains non-finite values".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Fractional maximum drawdown of wealth `prod(1 + r)` starting at 1.
pub fn max_drawdown(returns: &[f64]) -> f64 {
    let mut wealth = 1.0;
    let mut peak = 1.0_f64;
    let mut worst = 0.0_f64;
    for r in returns {
        wealth *= 1.0 + r;
        peak = peak.max(wealth);
        worst = worst.max(1.0 - wealth / peak);
    }
    worst
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn published_sharpe_from_mean_and_sd() {
        assert_close!(annualize(0.24, 1.14), 0.73, 0.005);
    }

    #[test]
    fn drawdowns() {
        assert_eq!(max_drawdown(&[0.01, 0.02, 0.005]), 0.0);
        assert!(factor_stats(&[-0.01; 5]).is_err(), "constant series has no Sharpe");
        assert_close!(100.0 * max_drawdown(&[-0.01; 5]), 100.0 * (1.0 - 0.99f64.powi(5)), 1e-12);
        assert_close!(100.0 * max_drawdown(&[-0.01; 5]), 4.90099501, 1e-8);
    }

    #[test]
    fn stats_in_percent() {
        let s = factor_stats(&[0.01, 0.03]).unwrap();
        assert_close!(s.mean, 2.0, 1e-12);
        assert_close!(s.sd, 100.0 * 2e-4f64.sqrt(), 1e-12);
        assert_close!(s.sharpe, s.mean / s.sd * 12f64.sqrt(), 1e-12);
        assert!(factor_stats(&[0.01]).is_err());
    }

    proptest! {
        #[test]
        fn new_peak_leaves_drawdown_unchanged(r in proptest::collection::vec(-0.2f64..0.2, 1..40)) {
            let before = max_drawdown(&r);
            let wealth: f64 = r.iter().map(|x| 1.0 + x).product();
            let peak = r.iter().scan(1.0, |w, x| { *w *= 1.0 + x; Some(*w) }).fold(1.0f64, f64::max);
            let jump = peak / wealth * 1.01 - 1.0;
            let mut extended = r.clone();
            extended.push(jump);
            prop_assert!((max_drawdown(&extended) - before).abs() < 1e-12);
            prop_assert!(before >= 0.0);
        }
    }
}
