use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// `N x d` matrix of observations; column `j` holds variable `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Data("dataset needs at least one row".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset has non-finite entries".into()));
        }
        Ok(Dataset { x })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn rows(&self, idx: &[usize]) -> Array2<f64> {
        self.x.select(Axis(0), idx)
    }

    /// First `n_train` rows and the rest.
    pub fn split(&self, n_train: usize) -> Result<(Dataset, Dataset)> {
        if n_train == 0 || n_train >= self.n() {
            return Err(Error::Config(format!(
                "cannot split {} rows at {n_train}",
                self.n()
            )));
        }
        let (a, b) = self.x.view().split_at(Axis(0), n_train);
        Ok((Dataset { x: a.to_owned() }, Dataset { x: b.to_owned() }))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record((0..self.d()).map(|j| format!("x{j}")))
            .map_err(csv_err)?;
        for row in self.x.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a headed CSV of decimal floats.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let d = r.headers().map_err(csv_err)?.len();
        let mut values = Vec::new();
        let mut n = 0;
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != d {
                return Err(Error::Data(format!(
                    "row {} has {} fields, header has {d}",
                    n + 1,
                    rec.len()
                )));
            }
            for field in rec.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("row {}: cannot parse {field:?}", n + 1)))?;
                values.push(v);
            }
            n += 1;
        }
        let x = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Data(e.to_string()))?;
        Self::new(x)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let ds = Dataset::new(array![[0.1, -2.5e-7, 3.0], [1.0 / 3.0, 4.0, -0.0]]).unwrap();
        ds.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x0,x1,x2\n"));
        assert_eq!(Dataset::read_csv(&path).unwrap(), ds);
    }

    #[test]
    fn rejects_bad_data() {
        assert!(Dataset::new(Array2::zeros((0, 2))).is_err());
        assert!(Dataset::new(array![[f64::NAN]]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x0,x1\n1,abc\n").unwrap();
        assert!(matches!(Dataset::read_csv(&path), Err(Error::Data(_))));
    }
}
