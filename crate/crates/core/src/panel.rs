//! Characteristic/return panel: loading, cross-sectional standardization,
//! rank transforms and portfolio weighting schemes.
//!
//! Row convention: a row dated `t` carries the excess return realized over
//! month `t` together with characteristics, market cap and price that were
//! observable before month `t` began (i.e. already lagged by one month).
//! Every per-month object in this crate therefore pairs `X_{t-1}` with `r_t`
//! by construction.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens treated as a missing value in input files.
pub const MISSING_TOKENS: &[&str] = &["", "NA", "NaN", "nan", "NULL", "null", "."];

/// Maps panel roles onto CSV column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub date: String,
    pub asset: String,
    pub ret: String,
    pub mktcap: String,
    pub price: String,
    /// Characteristic columns in order. `None` takes every column that is
    /// not mapped to another role, in header order.
    pub characteristics: Option<Vec<String>>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            asset: "asset".into(),
            ret: "ret".into(),
            mktcap: "mktcap".into(),
            price: "price".into(),
            characteristics: None,
        }
    }
}

/// Cross-section for a single month.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthSlice {
    pub date: u32,
    pub assets: Vec<String>,
    /// `N_t x I`, `NaN` marks a missing characteristic.
    pub chars: DMatrix<f64>,
    pub returns: DVector<f64>,
    pub mktcap: DVector<f64>,
    pub prices: DVector<f64>,
}

impl MonthSlice {
    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicPanel {
    pub char_names: Vec<String>,
    pub months: Vec<MonthSlice>,
}

impl CharacteristicPanel {
    /// Builds a panel from already-assembled months, checking the structural
    /// invariants.
    pub fn new(char_names: Vec<String>, months: Vec<MonthSlice>) -> Result<Self> {
        let panel = Self { char_names, months };
        panel.validate()?;
        Ok(panel)
    }

    pub fn validate(&self) -> Result<()> {
        let n_chars = self.char_names.len();
        if n_chars == 0 {
            return Err(Error::Validation("panel has no characteristics".into()));
        }
        if self.months.is_empty() {
            return Err(Error::Validation("panel has no months".into()));
        }
        for pair in self.months.windows(2) {
            if pair[0].date >= pair[1].date {
                return Err(Error::Validation(format!(
                    "dates not strictly increasing: {} then {}",
                    pair[0].date, pair[1].date
                )));
            }
        }
        for m in &self.months {
            let n = m.assets.len();
            if n == 0 {
                return Err(Error::EmptyMonth { month: m.date });
            }
            if m.chars.nrows() != n
                || m.chars.ncols() != n_chars
                || m.returns.len() != n
                || m.mktcap.len() != n
                || m.prices.len() != n
            {
                return Err(Error::Validation(format!(
                    "month {}: row counts of characteristics, returns, market caps and prices disagree",
                    m.date
                )));
            }
            for pair in m.assets.windows(2) {
                if pair[0] == pair[1] {
                    return Err(Error::DuplicateObservation {
                        date: m.date,
                        asset: pair[0].clone(),
                    });
                }
            }
            if let Some(k) = m.mktcap.iter().position(|&c| !(c > 0.0 && c.is_finite())) {
                return Err(Error::Validation(format!(
                    "month {}: asset {} has non-positive market cap",
                    m.date, m.assets[k]
                )));
            }
            if m.returns.iter().any(|r| !r.is_finite()) {
                return Err(Error::Validation(format!("month {}: non-finite return", m.date)));
            }
        }
        Ok(())
    }

    pub fn n_chars(&self) -> usize {
        self.char_names.len()
    }

    pub fn n_months(&self) -> usize {
        self.months.len()
    }

    pub fn dates(&self) -> Vec<u32> {
        self.months.iter().map(|m| m.date).collect()
    }

    /// Keeps only the first `n` months.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            char_names: self.char_names.clone(),
            months: self.months[..n.min(self.months.len())].to_vec(),
        }
    }
}

/// Writes a panel in the default column layout
/// `date,asset,ret,mktcap,price,<chars...>`; missing values are empty.
pub fn write_panel<W: Write>(writer: W, panel: &CharacteristicPanel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["date", "asset", "ret", "mktcap", "price"].iter().map(|s| s.to_string()).collect();
    header.extend(panel.char_names.iter().cloned());
    w.write_record(&header)?;
    let num = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
    for m in &panel.months {
        for (r, asset) in m.assets.iter().enumerate() {
            let mut rec = vec![m.date.to_string(), asset.clone(), num(m.returns[r]), num(m.mktcap[r]), num(m.prices[r])];
            rec.extend(m.chars.row(r).iter().map(|&v| num(v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn parse_month(s: &str) -> Option<u32> {
    let s = s.trim();
    if s.len() != 6 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let v: u32 = s.parse().ok()?;
    let month = v % 100;
    (1..=12).contains(&month).then_some(v)
}

fn parse_value(s: &str) -> std::result::Result<Option<f64>, ()> {
    let t = s.trim();
    if MISSING_TOKENS.contains(&t) {
        return Ok(None);
    }
    let v: f64 = t.parse().map_err(|_| ())?;
    if v.is_finite() {
        Ok(Some(v))
    } else {
        Ok(None)
    }
}

pub fn load_panel(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<CharacteristicPanel> {
    let file = std::fs::File::open(path)?;
    read_panel(file, schema)
}

struct RawRow {
    asset: String,
    chars: Vec<f64>,
    ret: f64,
    mktcap: f64,
    price: f64,
}

/// Parses a panel CSV. Rows with a missing return or market cap are dropped;
/// missing characteristics are kept as `NaN`.
pub fn read_panel<R: Read>(reader: R, schema: &ColumnSchema) -> Result<CharacteristicPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Validation(format!("missing column '{name}'")))
    };
    let date_col = find(&schema.date)?;
    let asset_col = find(&schema.asset)?;
    let ret_col = find(&schema.ret)?;
    let cap_col = find(&schema.mktcap)?;
    let price_col = find(&schema.price)?;
    let role_cols = [date_col, asset_col, ret_col, cap_col, price_col];

    let (char_names, char_cols): (Vec<String>, Vec<usize>) = match &schema.characteristics {
        Some(names) => {
            let cols = names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
            (names.clone(), cols)
        }
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !role_cols.contains(i))
            .map(|(i, h)| (h.trim().to_string(), i))
            .unzip(),
    };
    if char_names.is_empty() {
        return Err(Error::Validation("no characteristic columns".into()));
    }

    let mut by_month: BTreeMap<u32, Vec<RawRow>> = BTreeMap::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let field = |c: usize| -> Result<&str> {
            record.get(c).ok_or_else(|| Error::Parse {
                row,
                message: format!("missing field {c}"),
            })
        };
        let numeric = |c: usize, what: &str| -> Result<Option<f64>> {
            let raw = field(c)?;
            parse_value(raw).map_err(|_| Error::Parse {
                row,
                message: format!("invalid {what} value '{raw}'"),
            })
        };
        let date_raw = field(date_col)?;
        let date = parse_month(date_raw).ok_or_else(|| Error::Parse {
            row,
            message: format!("invalid YYYYMM date '{date_raw}'"),
        })?;
        let asset = field(asset_col)?.trim().to_string();
        if asset.is_empty() {
            return Err(Error::Parse { row, message: "empty asset id".into() });
        }
        let ret = numeric(ret_col, "return")?;
        let mktcap = numeric(cap_col, "market cap")?;
        let price = numeric(price_col, "price")?.unwrap_or(f64::NAN);
        let chars = char_cols
            .iter()
            .map(|&c| numeric(c, "characteristic").map(|v| v.unwrap_or(f64::NAN)))
            .collect::<Result<Vec<_>>>()?;
        let (Some(ret), Some(mktcap)) = (ret, mktcap) else {
            continue;
        };
        if mktcap <= 0.0 {
            return Err(Error::Parse {
                row,
                message: format!("non-positive market cap {mktcap}"),
            });
        }
        by_month.entry(date).or_default().push(RawRow { asset, chars, ret, mktcap, price });
    }

    let n_chars = char_names.len();
    let mut months = Vec::with_capacity(by_month.len());
    for (date, mut rows) in by_month {
        rows.sort_by(|a, b| a.asset.cmp(&b.asset));
        if let Some(pair) = rows.windows(2).find(|p| p[0].asset == p[1].asset) {
            return Err(Error::DuplicateObservation { date, asset: pair[0].asset.clone() });
        }
        let n = rows.len();
        let chars = DMatrix::from_fn(n, n_chars, |r, c| rows[r].chars[c]);
        months.push(MonthSlice {
            date,
            returns: DVector::from_iterator(n, rows.iter().map(|r| r.ret)),
            mktcap: DVector::from_iterator(n, rows.iter().map(|r| r.mktcap)),
            prices: DVector::from_iterator(n, rows.iter().map(|r| r.price)),
            assets: rows.into_iter().map(|r| r.asset).collect(),
            chars,
        });
    }
    CharacteristicPanel::new(char_names, months)
}

/// How missing characteristics are filled after standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputePolicy {
    /// Cross-sectional mean, i.e. 0 on the z-score scale.
    #[default]
    Mean,
    /// Any missing value is an error.
    Reject,
}

/// Standardized characteristics preceded by a constant column.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentMatrix {
    pub dates: Vec<u32>,
    pub char_names: Vec<String>,
    /// Per month `N_t x (I+1)`.
    pub z: Vec<DMatrix<f64>>,
}

fn standardize_month(m: &MonthSlice, names: &[String], impute: ImputePolicy) -> Result<DMatrix<f64>> {
    let n = m.len();
    let n_chars = names.len();
    let mut z = DMatrix::from_element(n, n_chars + 1, 1.0);
    for c in 0..n_chars {
        let col = m.chars.column(c);
        let observed: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        if observed.len() < n && impute == ImputePolicy::Reject {
            return Err(Error::Validation(format!(
                "month {}: characteristic {} has missing values",
                m.date, names[c]
            )));
        }
        if observed.len() < 2 {
            return Err(Error::InsufficientObservations {
                month: m.date,
                characteristic: names[c].clone(),
            });
        }
        let cnt = observed.len() as f64;
        let mean = observed.iter().sum::<f64>() / cnt;
        let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cnt;
        let sd = var.sqrt();
        let scale = observed.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if !(sd > 16.0 * f64::EPSILON * scale) {
            return Err(Error::DegenerateColumn {
                month: m.date,
                characteristic: names[c].clone(),
            });
        }
        for r in 0..n {
            let v = col[r];
            z[(r, c + 1)] = if v.is_nan() { 0.0 } else { (v - mean) / sd };
        }
    }
    Ok(z)
}

/// Per-month z-scores (population SD over observed entries) with missing
/// entries imputed per `impute`, plus the constant column.
pub fn standardize(panel: &CharacteristicPanel, impute: ImputePolicy) -> Result<InstrumentMatrix> {
    let z = panel
        .months
        .par_iter()
        .map(|m| standardize_month(m, &panel.char_names, impute))
        .collect::<Result<Vec<_>>>()?;
    Ok(InstrumentMatrix {
        dates: panel.dates(),
        char_names: panel.char_names.clone(),
        z,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankPanel {
    pub dates: Vec<u32>,
    pub char_names: Vec<String>,
    pub assets: Vec<Vec<String>>,
    /// Per month `N_t x I` cross-sectional ranks in `1..=N_t`.
    pub ranks: Vec<DMatrix<f64>>,
}

/// Average-tie ranks (1-based) of the given values.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end share the mean of ranks start+1..=end
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

fn rank_month(m: &MonthSlice, n_chars: usize) -> DMatrix<f64> {
    let n = m.len();
    let median = (n as f64 + 1.0) / 2.0;
    let mut out = DMatrix::from_element(n, n_chars, median);
    for c in 0..n_chars {
        let col = m.chars.column(c);
        let observed_idx: Vec<usize> = (0..n).filter(|&r| !col[r].is_nan()).collect();
        let n_obs = observed_idx.len();
        if n_obs < 2 {
            continue;
        }
        let vals: Vec<f64> = observed_idx.iter().map(|&r| col[r]).collect();
        let ranks = average_ranks(&vals);
        // Observed ranks are stretched onto 1..=N_t so the column mean stays
        // at the median rank that missing entries receive.
        let stretch = (n as f64 - 1.0) / (n_obs as f64 - 1.0);
        for (&r, rank) in observed_idx.iter().zip(ranks) {
            out[(r, c)] = 1.0 + (rank - 1.0) * stretch;
        }
    }
    out
}

pub fn rank_transform(panel: &CharacteristicPanel) -> RankPanel {
    let n_chars = panel.n_chars();
    RankPanel {
        dates: panel.dates(),
        char_names: panel.char_names.clone(),
        assets: panel.months.iter().map(|m| m.assets.clone()).collect(),
        ranks: panel.months.par_iter().map(|m| rank_month(m, n_chars)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    #[default]
    Value,
    Equal,
}

impl std::str::FromStr for WeightScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "value" | "vw" => Ok(Self::Value),
            "equal" | "ew" => Ok(Self::Equal),
            other => Err(format!("unknown weighting scheme '{other}'")),
        }
    }
}

pub const DEFAULT_PRICE_FLOOR: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSeries {
    pub scheme: WeightScheme,
    /// Per month, nonnegative and summing to one.
    pub w: Vec<DVector<f64>>,
}

pub fn build_weights(
    panel: &CharacteristicPanel,
    scheme: WeightScheme,
    price_floor: f64,
) -> Result<WeightSeries> {
    let w = panel
        .months
        .iter()
        .map(|m| {
            let raw: DVector<f64> = match scheme {
                WeightScheme::Value => m.mktcap.clone(),
                WeightScheme::Equal => m.prices.map(|p| if p >= price_floor { 1.0 } else { 0.0 }),
            };
            let total = raw.sum();
            if !(total > 0.0) {
                return Err(Error::EmptyMonth { month: m.date });
            }
            Ok(raw / total)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightSeries { scheme, w })
}

/// One month of aligned estimation inputs: instruments `Z_{t-1}`, weights
/// `W_{t-1}` and the realized returns `r_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationMonth {
    pub date: u32,
    pub assets: Vec<String>,
    pub z: DMatrix<f64>,
    pub returns: DVector<f64>,
    pub weights: DVector<f64>,
}

/// Everything the factor model needs, already aligned month by month.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationPanel {
    pub char_names: Vec<String>,
    pub months: Vec<EstimationMonth>,
}

impl EstimationPanel {
    pub fn assemble(
        panel: &CharacteristicPanel,
        instruments: &InstrumentMatrix,
        weights: &WeightSeries,
    ) -> Result<Self> {
        if instruments.z.len() != panel.n_months() || weights.w.len() != panel.n_months() {
            return Err(Error::Validation("instrument/weight months do not match panel".into()));
        }
        let months = panel
            .months
            .iter()
            .zip(&instruments.z)
            .zip(&weights.w)
            .map(|((m, z), w)| EstimationMonth {
                date: m.date,
                assets: m.assets.clone(),
                z: z.clone(),
                returns: m.returns.clone(),
                weights: w.clone(),
            })
            .collect();
        let out = Self { char_names: panel.char_names.clone(), months };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let width = self.char_names.len() + 1;
        for pair in self.months.windows(2) {
            if pair[0].date >= pair[1].date {
                return Err(Error::Validation("dates not strictly increasing".into()));
            }
        }
        for m in &self.months {
            let n = m.assets.len();
            if m.z.nrows() != n || m.z.ncols() != width || m.returns.len() != n || m.weights.len() != n {
                return Err(Error::Validation(format!("month {}: inconsistent dimensions", m.date)));
            }
            if m.z.iter().chain(m.returns.iter()).chain(m.weights.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("month {}: non-finite value", m.date)));
            }
            if m.weights.iter().any(|&w| w < 0.0) {
                return Err(Error::Validation(format!("month {}: negative weight", m.date)));
            }
        }
        Ok(())
    }

    pub fn n_months(&self) -> usize {
        self.months.len()
    }

    /// Number of instrument columns including the constant.
    pub fn n_instruments(&self) -> usize {
        self.char_names.len() + 1
    }

    pub fn dates(&self) -> Vec<u32> {
        self.months.iter().map(|m| m.date).collect()
    }

    pub fn truncated(&self, n: usize) -> Self {
        Self {
            char_names: self.char_names.clone(),
            months: self.months[..n.min(self.months.len())].to_vec(),
        }
    }

    /// CSV with columns `date, asset, ret, weight, <characteristics...>`; the
    /// constant column is implicit.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string(), "asset".into(), "ret".into(), "weight".into()];
        header.extend(self.char_names.iter().cloned());
        w.write_record(&header)?;
        let n_chars = self.char_names.len();
        for m in &self.months {
            for (r, asset) in m.assets.iter().enumerate() {
                let mut rec = vec![
                    m.date.to_string(),
                    asset.clone(),
                    m.returns[r].to_string(),
                    m.weights[r].to_string(),
                ];
                rec.extend((1..=n_chars).map(|c| m.z[(r, c)].to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["date", "asset", "ret", "weight"];
        if headers.len() < 5 || headers.iter().take(4).ne(expected.iter().copied()) {
            return Err(Error::Validation(
                "estimation panel header must start with date,asset,ret,weight and name at least one characteristic".into(),
            ));
        }
        let char_names: Vec<String> = headers.iter().skip(4).map(str::to_string).collect();
        let n_chars = char_names.len();
        let mut months: Vec<EstimationMonth> = Vec::new();
        let mut rows: Vec<(String, f64, f64, Vec<f64>)> = Vec::new();
        let mut current: Option<u32> = None;
        let flush = |date: u32, rows: &mut Vec<(String, f64, f64, Vec<f64>)>, months: &mut Vec<EstimationMonth>| {
            let n = rows.len();
            let z = DMatrix::from_fn(n, n_chars + 1, |r, c| if c == 0 { 1.0 } else { rows[r].3[c - 1] });
            months.push(EstimationMonth {
                date,
                returns: DVector::from_iterator(n, rows.iter().map(|r| r.1)),
                weights: DVector::from_iterator(n, rows.iter().map(|r| r.2)),
                assets: rows.drain(..).map(|r| r.0).collect(),
                z,
            });
        };
        for (k, record) in rdr.records().enumerate() {
            let row = k + 1;
            let record = record.map_err(|e| Error::Parse { row, message: e.to_string() })?;
            if record.len() != n_chars + 4 {
                return Err(Error::Parse { row, message: "wrong field count".into() });
            }
            let num = |c: usize| -> Result<f64> {
                record[c]
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse { row, message: format!("invalid number '{}'", &record[c]) })
            };
            let date = parse_month(&record[0])
                .ok_or_else(|| Error::Parse { row, message: format!("invalid date '{}'", &record[0]) })?;
            match current {
                Some(d) if d == date => {}
                Some(d) if d > date => {
                    return Err(Error::Parse { row, message: "rows are not sorted by date".into() })
                }
                Some(d) => {
                    flush(d, &mut rows, &mut months);
                    current = Some(date);
                }
                None => current = Some(date),
            }
            let chars = (4..4 + n_chars).map(num).collect::<Result<Vec<_>>>()?;
            rows.push((record[1].to_string(), num(2)?, num(3)?, chars));
        }
        if let Some(d) = current {
            flush(d, &mut rows, &mut months);
        }
        if months.is_empty() {
            return Err(Error::Validation("estimation panel is empty".into()));
        }
        let out = Self { char_names, months };
        out.validate()?;
        Ok(out)
    }
}

/// Writes ranks with their similarity weights: `date, asset, weight, <chars...>`.
pub fn write_ranks_csv<W: Write>(writer: W, ranks: &RankPanel, weights: &WeightSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string(), "asset".into(), "weight".into()];
    header.extend(ranks.char_names.iter().cloned());
    w.write_record(&header)?;
    for (t, date) in ranks.dates.iter().enumerate() {
        let m = &ranks.ranks[t];
        for (r, asset) in ranks.assets[t].iter().enumerate() {
            let mut rec = vec![date.to_string(), asset.clone(), weights.w[t][r].to_string()];
            rec.extend((0..m.ncols()).map(|c| m[(r, c)].to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ranks_csv<R: Read>(reader: R, scheme: WeightScheme) -> Result<(RankPanel, WeightSeries)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 4 || &headers[0] != "date" || &headers[1] != "asset" || &headers[2] != "weight" {
        return Err(Error::Validation("rank file header must start with date,asset,weight".into()));
    }
    let char_names: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();
    let n_chars = char_names.len();
    // (date, assets, weights, rank rows)
    type Month = (u32, Vec<String>, Vec<f64>, Vec<Vec<f64>>);
    let mut grouped: Vec<Month> = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        if record.len() != n_chars + 3 {
            return Err(Error::Parse { row, message: "wrong field count".into() });
        }
        let date = parse_month(&record[0])
            .ok_or_else(|| Error::Parse { row, message: format!("invalid date '{}'", &record[0]) })?;
        let nums = (2..record.len())
            .map(|c| {
                record[c]
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse { row, message: format!("invalid number '{}'", &record[c]) })
            })
            .collect::<Result<Vec<_>>>()?;
        match grouped.last_mut() {
            Some(g) if g.0 == date => {}
            Some(g) if g.0 > date => {
                return Err(Error::Parse { row, message: "rows are not sorted by date".into() })
            }
            _ => grouped.push((date, Vec::new(), Vec::new(), Vec::new())),
        }
        let g = grouped.last_mut().expect("group pushed above");
        g.1.push(record[1].to_string());
        g.2.push(nums[0]);
        g.3.push(nums[1..].to_vec());
    }
    let mut ranks = RankPanel { dates: vec![], char_names, assets: vec![], ranks: vec![] };
    let mut weights = WeightSeries { scheme, w: vec![] };
    for (date, assets, w, rows) in grouped {
        let n = assets.len();
        ranks.dates.push(date);
        ranks.assets.push(assets);
        ranks.ranks.push(DMatrix::from_fn(n, n_chars, |r, c| rows[r][c]));
        weights.w.push(DVector::from_vec(w));
    }
    if ranks.dates.is_empty() {
        return Err(Error::Validation("rank file is empty".into()));
    }
    Ok((ranks, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_month(chars: &[f64], prices: &[f64], caps: &[f64]) -> CharacteristicPanel {
        let n = chars.len();
        CharacteristicPanel::new(
            vec!["c".into()],
            vec![MonthSlice {
                date: 200001,
                assets: (0..n).map(|i| format!("a{i}")).collect(),
                chars: DMatrix::from_column_slice(n, 1, chars),
                returns: DVector::zeros(n),
                mktcap: DVector::from_column_slice(caps),
                prices: DVector::from_column_slice(prices),
            }],
        )
        .unwrap()
    }

    #[test]
    fn loads_three_row_file() {
        let csv = "date,asset,ret,mktcap,price,bm\n200001,b,0.01,10,20,0.5\n200001,a,0.02,5,10,0.7\n200001,c,-0.01,3,7,0.1\n";
        let p = read_panel(csv.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(p.n_months(), 1);
        assert_eq!(p.months[0].len(), 3);
        assert_eq!(p.n_chars(), 1);
        assert_eq!(p.months[0].assets, vec!["a", "b", "c"]);
        assert_eq!(p.months[0].chars[(0, 0)], 0.7);
    }

    #[test]
    fn written_panel_reads_back() {
        use rand::SeedableRng;
        let spec = crate::synthetic::BlockSpec { n_assets: 15, n_months: 4, n_chars: 3, ..Default::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (mut p, _) = crate::synthetic::block_characteristics(&spec, &mut rng);
        p.months[1].chars[(2, 1)] = f64::NAN;
        let mut buf = Vec::new();
        write_panel(&mut buf, &p).unwrap();
        let back = read_panel(buf.as_slice(), &ColumnSchema::default()).unwrap();
        assert_eq!(back.char_names, p.char_names);
        for (a, b) in back.months.iter().zip(&p.months) {
            assert_eq!(a.assets, b.assets);
            assert_eq!(a.returns, b.returns);
            assert_eq!(a.mktcap, b.mktcap);
            assert!(a.chars.iter().zip(b.chars.iter()).all(|(x, y)| x == y || (x.is_nan() && y.is_nan())));
        }
        assert!(back.months[1].chars[(2, 1)].is_nan());
    }

    #[test]
    fn duplicate_pair_is_rejected() {
        let csv = "date,asset,ret,mktcap,price,bm\n200001,a,0.01,10,20,0.5\n200001,a,0.02,5,10,0.7\n";
        match read_panel(csv.as_bytes(), &ColumnSchema::default()) {
            Err(Error::DuplicateObservation { date, asset }) => {
                assert_eq!(date, 200001);
                assert_eq!(asset, "a");
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn unbalanced_panel_is_accepted() {
        let csv = "date,asset,ret,mktcap,price,x\n\
                   200001,a,0.01,10,20,1\n200001,b,0.01,10,20,2\n\
                   200002,a,0.01,10,20,1\n200002,b,0.01,10,20,2\n200002,c,0.01,10,20,3\n";
        let p = read_panel(csv.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(p.months[0].assets, vec!["a", "b"]);
        assert_eq!(p.months[1].assets, vec!["a", "b", "c"]);
    }

    #[test]
    fn missing_return_row_dropped_and_missing_char_kept() {
        let csv = "date,asset,ret,mktcap,price,x\n200001,a,,10,20,1\n200001,b,0.01,10,20,NA\n200001,c,0.01,10,20,3\n";
        let p = read_panel(csv.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(p.months[0].assets, vec!["b", "c"]);
        assert!(p.months[0].chars[(0, 0)].is_nan());
    }

    #[test]
    fn malformed_row_reports_index() {
        let csv = "date,asset,ret,mktcap,price,x\n200001,a,0.1,10,20,1\n200001,b,abc,10,20,1\n";
        match read_panel(csv.as_bytes(), &ColumnSchema::default()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_date = "date,asset,ret,mktcap,price,x\n200013,a,0.1,10,20,1\n";
        assert!(matches!(
            read_panel(bad_date.as_bytes(), &ColumnSchema::default()),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn explicit_schema_mapping() {
        let csv = "permno,yyyymm,r,me,prc,mom,size\n1,199001,0.1,5,10,0.3,2\n2,199001,0.2,6,11,0.4,3\n";
        let schema = ColumnSchema {
            date: "yyyymm".into(),
            asset: "permno".into(),
            ret: "r".into(),
            mktcap: "me".into(),
            price: "prc".into(),
            characteristics: Some(vec!["size".into()]),
        };
        let p = read_panel(csv.as_bytes(), &schema).unwrap();
        assert_eq!(p.char_names, vec!["size"]);
        assert_eq!(p.months[0].chars[(1, 0)], 3.0);
    }

    #[test]
    fn zscore_of_one_two_three() {
        let p = one_month(&[1.0, 2.0, 3.0], &[10.0; 3], &[1.0; 3]);
        let z = standardize(&p, ImputePolicy::Mean).unwrap();
        let col: Vec<f64> = z.z[0].column(1).iter().copied().collect();
        assert_close!(col[0], -1.224744871391589, 1e-12);
        assert_close!(col[1], 0.0, 1e-12);
        assert_close!(col[2], 1.224744871391589, 1e-12);
        assert!(z.z[0].column(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_column_is_degenerate() {
        let p = one_month(&[5.0, 5.0, 5.0], &[10.0; 3], &[1.0; 3]);
        assert!(matches!(
            standardize(&p, ImputePolicy::Mean),
            Err(Error::DegenerateColumn { month: 200001, .. })
        ));
    }

    #[test]
    fn missing_value_imputed_to_zero() {
        let p = one_month(&[1.0, f64::NAN, 3.0], &[10.0; 3], &[1.0; 3]);
        let z = standardize(&p, ImputePolicy::Mean).unwrap();
        let col: Vec<f64> = z.z[0].column(1).iter().copied().collect();
        assert_eq!(col, vec![-1.0, 0.0, 1.0]);
        assert!(standardize(&p, ImputePolicy::Reject).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(average_ranks(&[0.3, 0.1, 0.2]), vec![3.0, 1.0, 2.0]);
        assert_eq!(average_ranks(&[0.1, 0.1, 0.2]), vec![1.5, 1.5, 3.0]);
        let p = one_month(&[0.1, f64::NAN, 0.2], &[10.0; 3], &[1.0; 3]);
        let r = rank_transform(&p);
        assert_eq!(r.ranks[0].column(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn weight_examples() {
        let p = one_month(&[1.0, 2.0], &[10.0, 10.0], &[1.0, 3.0]);
        let w = build_weights(&p, WeightScheme::Value, DEFAULT_PRICE_FLOOR).unwrap();
        assert_eq!(w.w[0].as_slice(), &[0.25, 0.75]);

        let p = one_month(&[1.0, 2.0, 3.0], &[10.0, 4.0, 12.0], &[1.0; 3]);
        let w = build_weights(&p, WeightScheme::Equal, DEFAULT_PRICE_FLOOR).unwrap();
        assert_eq!(w.w[0].as_slice(), &[0.5, 0.0, 0.5]);

        let p = one_month(&[1.0], &[10.0], &[7.0]);
        for scheme in [WeightScheme::Value, WeightScheme::Equal] {
            assert_eq!(build_weights(&p, scheme, DEFAULT_PRICE_FLOOR).unwrap().w[0][0], 1.0);
        }

        let p = one_month(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]);
        assert!(matches!(
            build_weights(&p, WeightScheme::Equal, DEFAULT_PRICE_FLOOR),
            Err(Error::EmptyMonth { month: 200001 })
        ));
    }

    #[test]
    fn estimation_panel_csv_roundtrip() {
        let p = one_month(&[1.0, 2.0, 4.0], &[10.0; 3], &[1.0, 2.0, 3.0]);
        let z = standardize(&p, ImputePolicy::Mean).unwrap();
        let w = build_weights(&p, WeightScheme::Value, 5.0).unwrap();
        let est = EstimationPanel::assemble(&p, &z, &w).unwrap();
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let back = EstimationPanel::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, est);
    }

    #[test]
    fn rank_csv_roundtrip() {
        let p = one_month(&[1.0, 2.0, 4.0], &[10.0; 3], &[1.0, 2.0, 3.0]);
        let r = rank_transform(&p);
        let w = build_weights(&p, WeightScheme::Value, 5.0).unwrap();
        let mut buf = Vec::new();
        write_ranks_csv(&mut buf, &r, &w).unwrap();
        let (r2, w2) = read_ranks_csv(buf.as_slice(), WeightScheme::Value).unwrap();
        assert_eq!(r2, r);
        assert_eq!(w2, w);
    }
}
