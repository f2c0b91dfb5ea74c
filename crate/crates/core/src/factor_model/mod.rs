//! Instrumented PCA with per-factor loading restrictions.
//!
//! Returns follow `r_t = Z_t Γ f_t + e_t` where `Z_t` holds the lagged
//! instruments (constant first). A [`RestrictionMask`] pins chosen loadings
//! to zero; the unrestricted mask gives plain IPCA.

mod fit;
mod mask;
mod oos;

pub use fit::{
    factor_update, factor_weights, fit, fit_moments, moments, total_r2, FitOptions, FittedModel, Init, MonthMoments,
    Solution, Stationarity,
};
pub use mask::RestrictionMask;
pub use oos::{oos_factor_returns, oos_loadings, FactorReturnSeries, OosOptions, DEFAULT_OOS_BURN_IN};
