use serde::{Deserialize, Serialize};

use super::stats::sharpe;
use crate::error::{Error, Result};
use crate::series::FactorSeries;

/// Factor columns with the market first and the rest by decreasing training
/// Sharpe ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedSelection {
    pub order: Vec<usize>,
    /// Training Sharpe ratio of each column, in column order.
    pub sharpes: Vec<f64>,
}

impl OrderedSelection {
    /// Columns of the nested `j`-factor model.
    pub fn model(&self, j: usize) -> &[usize] {
        &self.order[..j.min(self.order.len())]
    }

    pub fn n_models(&self) -> usize {
        self.order.len()
    }
}

/// Orders factors for the nested models `{market}`, `{market, best}`, ...
/// Ties keep column order; columns whose Sharpe ratio is undefined go last.
pub fn ordered_selection(train: &FactorSeries, market: usize) -> Result<OrderedSelection> {
    let j = train.n_series();
    if market >= j {
        return Err(Error::Precondition(format!("market column {market} out of range for {j} factors")));
    }
    let sharpes: Vec<f64> = (0..j).map(|c| sharpe(&train.column(c)).unwrap_or(f64::NAN)).collect();
    Ok(order_by_sharpe(sharpes, market))
}

/// Ordering from precomputed Sharpe ratios.
pub fn order_by_sharpe(sharpes: Vec<f64>, market: usize) -> OrderedSelection {
    let key = |c: usize| if sharpes[c].is_nan() { f64::NEG_INFINITY } else { sharpes[c] };
    let mut rest: Vec<usize> = (0..sharpes.len()).filter(|&c| c != market).collect();
    rest.sort_by(|&a, &b| key(b).total_cmp(&key(a)));
    let mut order = vec![market];
    order.extend(rest);
    OrderedSelection { order, sharpes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_after_market() {
        // mkt 0.4, A 0.9, B 0.5, C 0.7
        let s = order_by_sharpe(vec![0.4, 0.9, 0.5, 0.7], 0);
        assert_eq!(s.order, vec![0, 1, 3, 2]);
        assert_eq!(s.model(2), &[0, 1]);
        assert_eq!(s.model(1), &[0]);
    }

    #[test]
    fn ties_keep_column_order() {
        let s = order_by_sharpe(vec![0.5, 0.3, 0.3, 0.3], 2);
        assert_eq!(s.order, vec![2, 0, 1, 3]);
        let s = order_by_sharpe(vec![0.2, 0.2, 0.2], 0);
        assert_eq!(s.order, vec![0, 1, 2]);
    }
}
