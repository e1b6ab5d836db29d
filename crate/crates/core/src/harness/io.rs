//! CSV readers and writers for return panels, weight tables and result tables.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::ReturnPanel;

/// The bundled 25-stock weight table (five portfolios `P1`..`P5`).
pub const BUNDLED_WEIGHTS_CSV: &str = include_str!("../../data/portfolio_weights.csv");

fn is_date_header(h: &str) -> bool {
    matches!(
        h.trim().to_ascii_lowercase().as_str(),
        "" | "date" | "time" | "timestamp"
    )
}

/// Parses returns: a header row of labels, an optional leading date column
/// (header `date`, `time`, `timestamp` or empty) and decimal returns.
pub fn parse_returns_csv(reader: impl Read) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::InvalidInput("empty file".into()));
    }
    let has_dates = is_date_header(&header[0]);
    let labels: Vec<String> = header[has_dates as usize..].to_vec();
    if labels.is_empty() {
        return Err(Error::InvalidInput("no asset columns".into()));
    }
    let mut seen = HashSet::new();
    for l in &labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate asset label {l:?}")));
        }
    }
    let mut values = Vec::new();
    let mut dates = Vec::new();
    let mut n_rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        if rec.len() != header.len() {
            return Err(Error::InvalidInput(format!(
                "row {row} has {} fields, expected {}",
                rec.len(),
                header.len()
            )));
        }
        if has_dates {
            dates.push(rec[0].to_string());
        }
        for (c, label) in labels.iter().enumerate() {
            let cell = &rec[c + has_dates as usize];
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: label.clone(),
                message: format!("{cell:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: label.clone(),
                    message: format!("{cell:?} is not finite"),
                });
            }
            values.push(v);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::InvalidInput("file has a header but no data rows".into()));
    }
    let p = labels.len();
    let data = DMatrix::from_row_slice(n_rows, p, &values);
    ReturnPanel::new(labels, has_dates.then_some(dates), data)
}

pub fn load_returns_csv(path: impl AsRef<Path>) -> Result<ReturnPanel> {
    parse_returns_csv(std::fs::File::open(path)?)
}

/// Writes a panel in the format read by [`load_returns_csv`]; values use the
/// shortest representation that parses back to the same number.
pub fn write_panel_csv(panel: &ReturnPanel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = Vec::new();
    if panel.dates().is_some() {
        header.push("date".into());
    }
    header.extend(panel.labels().iter().cloned());
    w.write_record(&header)?;
    for t in 0..panel.n_obs() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(d) = panel.dates() {
            rec.push(d[t].clone());
        }
        rec.extend(panel.data().row(t).iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Portfolio weights keyed by ticker.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightTable {
    pub tickers: Vec<String>,
    /// `(name, weights)` with weights in ticker order.
    pub portfolios: Vec<(String, Vec<f64>)>,
}

impl WeightTable {
    pub fn sums(&self) -> Vec<(String, f64)> {
        self.portfolios
            .iter()
            .map(|(n, w)| (n.clone(), w.iter().sum()))
            .collect()
    }

    /// Weight vectors in the column order of `labels`; every label must be present.
    pub fn align(&self, labels: &[String]) -> Result<Vec<(String, DVector<f64>)>> {
        if labels.len() != self.tickers.len() {
            return Err(Error::InvalidInput(format!(
                "weights cover {} tickers but the panel has {} assets",
                self.tickers.len(),
                labels.len()
            )));
        }
        let idx: Vec<usize> = labels
            .iter()
            .map(|l| {
                self.tickers
                    .iter()
                    .position(|t| t == l)
                    .ok_or_else(|| Error::InvalidInput(format!("no weights for asset {l:?}")))
            })
            .collect::<Result<_>>()?;
        Ok(self
            .portfolios
            .iter()
            .map(|(n, w)| (n.clone(), DVector::from_iterator(idx.len(), idx.iter().map(|&k| w[k]))))
            .collect())
    }
}

/// Parses a weight table: first column tickers, remaining columns portfolios.
pub fn parse_weights_csv(reader: impl Read) -> Result<WeightTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(Error::InvalidInput(
            "weight table needs a ticker column and at least one portfolio".into(),
        ));
    }
    let names = header[1..].to_vec();
    let mut tickers = Vec::new();
    let mut cols = vec![Vec::new(); names.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        tickers.push(rec[0].to_string());
        for (c, name) in names.iter().enumerate() {
            let cell = &rec[c + 1];
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: r + 1,
                column: name.clone(),
                message: format!("{cell:?} is not a number"),
            })?;
            cols[c].push(v);
        }
    }
    if tickers.is_empty() {
        return Err(Error::InvalidInput("weight table has no rows".into()));
    }
    let mut seen = HashSet::new();
    for t in &tickers {
        if !seen.insert(t.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate ticker {t:?}")));
        }
    }
    Ok(WeightTable {
        tickers,
        portfolios: names.into_iter().zip(cols).collect(),
    })
}

pub fn load_weights_csv(path: impl AsRef<Path>) -> Result<WeightTable> {
    parse_weights_csv(std::fs::File::open(path)?)
}

pub fn bundled_weights() -> WeightTable {
    parse_weights_csv(BUNDLED_WEIGHTS_CSV.as_bytes()).expect("bundled weight table is well formed")
}

/// Writes serializable rows as CSV with a header.
pub fn write_rows_csv<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_rows_csv`].
pub fn read_rows_csv<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes a pretty-printed JSON document.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed_file() {
        let p = parse_returns_csv(
            "date,AAPL,IBM\n2020-01-02,0.01,-0.02\n2020-01-03,0.0,0.01\n2020-01-06,0.02,0.0\n".as_bytes(),
        )
        .unwrap();
        assert_eq!((p.n_obs(), p.n_assets()), (3, 2));
        assert_eq!(p.dates().unwrap()[2], "2020-01-06");
    }

    #[test]
    fn missing_cell_is_located() {
        let err = parse_returns_csv("IBM,AAPL\n0.01,0.02\n0.0,NA\n0.01,0.0\n".as_bytes()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => assert_eq!((row, column.as_str()), (2, "AAPL")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_files_rejected() {
        assert!(parse_returns_csv("A,B\n1,2\n3\n".as_bytes()).is_err());
        assert!(parse_returns_csv("A,A\n1,2\n".as_bytes()).is_err());
        assert!(parse_returns_csv("".as_bytes()).is_err());
        assert!(parse_returns_csv("A,B\n".as_bytes()).is_err());
    }

    #[test]
    fn bundled_table() {
        let t = bundled_weights();
        assert_eq!(t.tickers.len(), 25);
        assert_eq!(t.portfolios.len(), 5);
        assert!(t.portfolios[0].1.iter().all(|&w| w == 0.040));
        assert_eq!(t.portfolios[4].0, "P5");
    }

    #[test]
    fn single_asset_passthrough() {
        let t = parse_weights_csv("ticker,P\nX1,1.0\n".as_bytes()).unwrap();
        let panel = ReturnPanel::from_rows(&[vec![0.5], vec![-0.25]]).unwrap();
        let w = t.align(panel.labels()).unwrap();
        assert_eq!(panel.portfolio_returns(&w[0].1).unwrap(), vec![0.5, -0.25]);
    }
}
