//! Factor statistics, tangency backtests, ordered factor selection and alpha
//! regressions.

mod alpha;
mod ordered;
mod stats;
mod tangency;

pub use alpha::{alpha_regression, collinear_columns, default_nw_lags, hac_meat, AlphaReport};
pub use ordered::{order_by_sharpe, ordered_selection, OrderedSelection};
pub use stats::{annualize, factor_stats, max_drawdown, mean_sd, sharpe, FactorStats};
pub use tangency::{
    insample_tangency_sharpe, tangency_backtest, tangency_weights, TangencyOptions, TangencyResult,
    DEFAULT_TANGENCY_BURN_IN, TARGET_VOL,
};

use crate::clustering::Partition;
use crate::error::Result;
use crate::factor_model::{oos_factor_returns, OosOptions, RestrictionMask};
use crate::panel::EstimationPanel;

/// Sharpe ratio of the out-of-sample tangency portfolio of the
/// cluster-restricted model (with market factor) built on `partition`. This
/// is the default hyperparameter objective on a training panel.
pub fn partition_tangency_sharpe(
    panel: &EstimationPanel,
    partition: &Partition,
    oos: &OosOptions,
    tangency: &TangencyOptions,
) -> Result<f64> {
    let mask = RestrictionMask::from_partition(partition, true);
    let factors = oos_factor_returns(panel, &mask, oos)?;
    Ok(tangency_backtest(&factors.series, tangency)?.sharpe)
}
