//! The `T x p` return panel shared by every estimator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Asset returns with one row per period and one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    labels: Vec<String>,
    dates: Option<Vec<String>>,
    data: DMatrix<f64>,
}

impl ReturnPanel {
    /// Builds a panel, rejecting non-finite cells and mismatched label counts.
    pub fn new(labels: Vec<String>, dates: Option<Vec<String>>, data: DMatrix<f64>) -> Result<Self> {
        if labels.len() != data.ncols() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} columns",
                labels.len(),
                data.ncols()
            )));
        }
        if let Some(d) = &dates {
            if d.len() != data.nrows() {
                return Err(Error::InvalidInput(format!(
                    "{} dates for {} rows",
                    d.len(),
                    data.nrows()
                )));
            }
        }
        for row in 0..data.nrows() {
            for col in 0..data.ncols() {
                if !data[(row, col)].is_finite() {
                    return Err(Error::NonFinite { row, col });
                }
            }
        }
        Ok(Self { labels, dates, data })
    }

    /// Panel with generated labels `X1..Xp` and no dates.
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        let labels = (1..=data.ncols()).map(|j| format!("X{j}")).collect();
        Self::new(labels, None, data)
    }

    /// Builds a panel from row slices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        let data = DMatrix::from_fn(rows.len(), p, |t, j| rows[t][j]);
        Self::from_matrix(data)
    }

    pub fn n_obs(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.data.ncols()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dates(&self) -> Option<&[String]> {
        self.dates.as_deref()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn row(&self, t: usize) -> DVector<f64> {
        self.data.row(t).transpose()
    }

    /// Rows `start..end` as a new panel.
    pub fn slice_rows(&self, start: usize, end: usize) -> ReturnPanel {
        ReturnPanel {
            labels: self.labels.clone(),
            dates: self.dates.as_ref().map(|d| d[start..end].to_vec()),
            data: self.data.rows(start, end - start).into_owned(),
        }
    }

    /// Subtracts the column means.
    pub fn demeaned(&self) -> ReturnPanel {
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        ReturnPanel {
            labels: self.labels.clone(),
            dates: self.dates.clone(),
            data,
        }
    }

    /// Reorders the asset columns: column `k` of the result is column `order[k]` here.
    pub fn permute_assets(&self, order: &[usize]) -> ReturnPanel {
        let data = DMatrix::from_fn(self.n_obs(), order.len(), |t, k| self.data[(t, order[k])]);
        ReturnPanel {
            labels: order.iter().map(|&k| self.labels[k].clone()).collect(),
            dates: self.dates.clone(),
            data,
        }
    }

    /// Per-period portfolio returns `w'X_t`.
    pub fn portfolio_returns(&self, weights: &DVector<f64>) -> Result<Vec<f64>> {
        if weights.len() != self.n_assets() {
            return Err(Error::InvalidInput(format!(
                "weight vector has {} entries for {} assets",
                weights.len(),
                self.n_assets()
            )));
        }
        Ok((&self.data * weights).iter().copied().collect())
    }

    /// Fails with the asset label when a column is constant.
    pub fn check_non_degenerate(&self) -> Result<()> {
        for (j, col) in self.data.column_iter().enumerate() {
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                return Err(Error::DegenerateAsset(self.labels[j].clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_with_position() {
        let data = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, f64::NAN, 0.0]);
        match ReturnPanel::from_matrix(data) {
            Err(Error::NonFinite { row, col }) => assert_eq!((row, col), (1, 0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_column_is_named() {
        let p = ReturnPanel::new(
            vec!["A".into(), "B".into()],
            None,
            DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -1.0, 0.5, 0.2, 0.5]),
        )
        .unwrap();
        match p.check_non_degenerate() {
            Err(Error::DegenerateAsset(name)) => assert_eq!(name, "B"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn demean_zeroes_column_means() {
        let p = ReturnPanel::from_rows(&[vec![1.0, 2.0], vec![3.0, -2.0], vec![2.0, 3.0]]).unwrap();
        let d = p.demeaned();
        for col in d.data().column_iter() {
            assert!(col.mean().abs() < 1e-15);
        }
    }
}
