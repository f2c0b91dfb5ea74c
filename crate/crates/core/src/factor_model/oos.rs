use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::fit::{factor_weights, fit_moments, moments, FitOptions, Init, MonthMoments};
use super::mask::RestrictionMask;
use crate::error::{Error, Result};
use crate::panel::EstimationPanel;
use crate::series::FactorSeries;

pub const DEFAULT_OOS_BURN_IN: usize = 180;

#[derive(Debug, Clone, PartialEq)]
pub struct OosOptions {
    /// Index of the first out-of-sample month; loadings for it are estimated
    /// on the `burn_in` preceding months.
    pub burn_in: usize,
    /// Start each refit from the previous month's loadings. Otherwise every
    /// month is fit from scratch, in parallel.
    pub warm_start: bool,
    pub keep_weights: bool,
    pub fit: FitOptions,
}

impl Default for OosOptions {
    fn default() -> Self {
        Self { burn_in: DEFAULT_OOS_BURN_IN, warm_start: true, keep_weights: false, fit: FitOptions::default() }
    }
}

/// Expanding-window factor returns. Row `t` is realized with loadings fit on
/// months before `t` and portfolio weights built from month `t`'s lagged
/// characteristics.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorReturnSeries {
    pub series: FactorSeries,
    /// `J x N_t` portfolio weights per out-of-sample month.
    pub weights: Option<Vec<DMatrix<f64>>>,
}

pub fn oos_factor_returns(
    panel: &EstimationPanel,
    mask: &RestrictionMask,
    opts: &OosOptions,
) -> Result<FactorReturnSeries> {
    let t_total = panel.n_months();
    if opts.burn_in < 2 || opts.burn_in >= t_total {
        return Err(Error::Precondition(format!(
            "burn-in {} needs 2 <= burn-in < T = {t_total}",
            opts.burn_in
        )));
    }
    if mask.n_rows() != panel.n_instruments() {
        return Err(Error::Precondition("mask does not match the panel instruments".into()));
    }
    let mom = moments(panel);
    let one = |t: usize, init: Init| -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
        let wrap = |e: Error| Error::OosMonth { month: panel.months[t].date, source: Box::new(e) };
        let fit_opts = FitOptions { init, ..opts.fit.clone() };
        let sol = fit_moments(&mom[..t], mask, &fit_opts).map_err(wrap)?;
        let w = factor_weights(&sol.gamma, &panel.months[t]).map_err(wrap)?;
        let f = &w * &panel.months[t].returns;
        Ok((sol.gamma, f, w))
    };

    let months: Vec<usize> = (opts.burn_in..t_total).collect();
    let results: Vec<(DVector<f64>, DMatrix<f64>)> = if opts.warm_start {
        let mut out = Vec::with_capacity(months.len());
        let mut init = opts.fit.init.clone();
        for &t in &months {
            let (gamma, f, w) = one(t, init)?;
            init = Init::Gamma(gamma);
            out.push((f, w));
        }
        out
    } else {
        months
            .par_iter()
            .map(|&t| one(t, opts.fit.init.clone()).map(|(_, f, w)| (f, w)))
            .collect::<Result<_>>()?
    };

    let j = mask.n_factors();
    let values = DMatrix::from_fn(results.len(), j, |r, c| results[r].0[c]);
    let dates = months.iter().map(|&t| panel.months[t].date).collect();
    let series = FactorSeries::new(dates, mask.names().to_vec(), values)?;
    let weights = opts.keep_weights.then(|| results.into_iter().map(|(_, w)| w).collect());
    Ok(FactorReturnSeries { series, weights })
}

/// Loadings fit on the months before each out-of-sample month, keyed like
/// [`oos_factor_returns`]. Used to evaluate out-of-sample fitted values.
pub fn oos_loadings(mom: &[MonthMoments], mask: &RestrictionMask, burn_in: usize, fit: &FitOptions) -> Result<Vec<DMatrix<f64>>> {
    if burn_in < 2 || burn_in >= mom.len() {
        return Err(Error::Precondition("burn-in out of range".into()));
    }
    let mut init = fit.init.clone();
    let mut out = Vec::new();
    for t in burn_in..mom.len() {
        let sol = fit_moments(&mom[..t], mask, &FitOptions { init, ..fit.clone() })
            .map_err(|e| Error::OosMonth { month: mom[t].date, source: Box::new(e) })?;
        init = Init::Gamma(sol.gamma.clone());
        out.push(sol.gamma);
    }
    Ok(out)
}
