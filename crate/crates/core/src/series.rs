//! Dated multi-column return series (factor returns, benchmark factors).

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::parse_month;

/// `T x J` table of monthly returns in decimal units.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSeries {
    pub dates: Vec<u32>,
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl FactorSeries {
    pub fn new(dates: Vec<u32>, names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != dates.len() || values.ncols() != names.len() {
            return Err(Error::Validation(format!(
                "series shape {}x{} does not match {} dates and {} names",
                values.nrows(),
                values.ncols(),
                dates.len(),
                names.len()
            )));
        }
        if dates.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Validation("series dates not strictly increasing".into()));
        }
        Ok(Self { dates, names, values })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_series(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    pub fn row(&self, t: usize) -> DVector<f64> {
        self.values.row(t).transpose()
    }

    pub fn select(&self, cols: &[usize]) -> Self {
        Self {
            dates: self.dates.clone(),
            names: cols.iter().map(|&c| self.names[c].clone()).collect(),
            values: self.values.select_columns(cols),
        }
    }

    /// Rows `start..end`.
    pub fn rows(&self, start: usize, end: usize) -> Self {
        Self {
            dates: self.dates[start..end].to_vec(),
            names: self.names.clone(),
            values: self.values.rows(start, end - start).into_owned(),
        }
    }

    /// Rows dated on or before `last`.
    pub fn until(&self, last: u32) -> Self {
        let end = self.dates.partition_point(|&d| d <= last);
        self.rows(0, end)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (t, d) in self.dates.iter().enumerate() {
            let mut rec = vec![d.to_string()];
            rec.extend(self.values.row(t).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || headers[0].trim() != "date" {
            return Err(Error::Validation("series header must be date,<name>...".into()));
        }
        let names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
        let mut dates = Vec::new();
        let mut data = Vec::new();
        for (k, record) in rdr.records().enumerate() {
            let row = k + 1;
            let record = record.map_err(|e| Error::Parse { row, message: e.to_string() })?;
            if record.len() != names.len() + 1 {
                return Err(Error::Parse { row, message: "wrong field count".into() });
            }
            let d = parse_month(&record[0])
                .ok_or_else(|| Error::Parse { row, message: format!("invalid date '{}'", &record[0]) })?;
            dates.push(d);
            for c in 1..record.len() {
                let v = record[c]
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse { row, message: format!("invalid number '{}'", &record[c]) })?;
                data.push(v);
            }
        }
        let values = DMatrix::from_row_slice(dates.len(), names.len(), &data);
        Self::new(dates, names, values)
    }
}
