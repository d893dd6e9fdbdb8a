//! Tabular data: an n x p matrix with named columns, optional per-column
//! standardization record, and headered-CSV input/output with line-numbered
//! parse errors.

use crate::error::{EgError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Per-column (mean, sd) transform record: stored values are
/// `(raw - mean) / sd`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    values: DMatrix<f64>,
    column_names: Vec<String>,
    standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(values: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        if column_names.len() != values.ncols() {
            return Err(EgError::dimension(format!(
                "{} column names for a matrix with {} columns",
                column_names.len(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EgError::domain("data contains non-finite entries".to_string()));
        }
        Ok(Dataset { values, column_names, standardization: None })
    }

    /// Default column names x1..xp.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let names = (1..=values.ncols()).map(|j| format!("x{j}")).collect();
        Dataset::new(values, names)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn column_means(&self) -> DVector<f64> {
        if self.n() == 0 {
            return DVector::zeros(self.p());
        }
        self.values.row_mean().transpose()
    }

    pub fn column_sds(&self) -> DVector<f64> {
        let n = self.n();
        if n < 2 {
            return DVector::from_element(self.p(), 0.0);
        }
        let means = self.column_means();
        DVector::from_fn(self.p(), |j, _| {
            let ss: f64 = (0..n).map(|i| (self.values[(i, j)] - means[j]).powi(2)).sum();
            (ss / (n as f64 - 1.0)).sqrt()
        })
    }

    pub fn column_ranges(&self) -> (DVector<f64>, DVector<f64>) {
        let p = self.p();
        let mut lo = DVector::from_element(p, f64::INFINITY);
        let mut hi = DVector::from_element(p, f64::NEG_INFINITY);
        for i in 0..self.n() {
            for j in 0..p {
                lo[j] = lo[j].min(self.values[(i, j)]);
                hi[j] = hi[j].max(self.values[(i, j)]);
            }
        }
        (lo, hi)
    }

    /// Standardize each column to mean 0 and sd 1, recording the transform.
    pub fn standardize(&self) -> Result<Dataset> {
        if self.standardization.is_some() {
            return Err(EgError::domain("data is already standardized".to_string()));
        }
        if self.n() < 2 {
            return Err(EgError::domain("standardization needs at least 2 rows".to_string()));
        }
        let mean = self.column_means();
        let sd = self.column_sds();
        if let Some(j) = sd.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(EgError::domain(format!(
                "column '{}' has zero spread; cannot standardize",
                self.column_names[j]
            )));
        }
        let record = Standardization { mean: mean.iter().cloned().collect(), sd: sd.iter().cloned().collect() };
        self.standardize_with(&record)
    }

    /// Apply an existing transform (e.g. the training-set record to a test set).
    pub fn standardize_with(&self, record: &Standardization) -> Result<Dataset> {
        if record.mean.len() != self.p() || record.sd.len() != self.p() {
            return Err(EgError::dimension(format!(
                "standardization record has {} columns but data has {}",
                record.mean.len(),
                self.p()
            )));
        }
        if record.sd.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(EgError::domain("standardization record must have positive sd".to_string()));
        }
        let values = DMatrix::from_fn(self.n(), self.p(), |i, j| {
            (self.values[(i, j)] - record.mean[j]) / record.sd[j]
        });
        Ok(Dataset {
            values,
            column_names: self.column_names.clone(),
            standardization: Some(record.clone()),
        })
    }

    /// Undo the standardization record, returning raw-unit data.
    pub fn to_raw(&self) -> Dataset {
        match &self.standardization {
            None => self.clone(),
            Some(rec) => {
                let values = DMatrix::from_fn(self.n(), self.p(), |i, j| {
                    self.values[(i, j)] * rec.sd[j] + rec.mean[j]
                });
                Dataset { values, column_names: self.column_names.clone(), standardization: None }
            }
        }
    }

    /// Attach a standardization record without transforming values (used when
    /// the values are already in the transformed scale).
    pub fn with_standardization(mut self, record: Option<Standardization>) -> Self {
        self.standardization = record;
        self
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        for &i in rows {
            if i >= self.n() {
                return Err(EgError::domain(format!("row index {i} out of range (n = {})", self.n())));
            }
        }
        let values = DMatrix::from_fn(rows.len(), self.p(), |i, j| self.values[(rows[i], j)]);
        Ok(Dataset {
            values,
            column_names: self.column_names.clone(),
            standardization: self.standardization.clone(),
        })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Dataset::from_csv_reader(BufReader::new(file))
    }

    /// Parse headered CSV. Ragged rows and non-numeric cells are reported with
    /// their 1-based line number.
    pub fn from_csv_reader<R: BufRead>(reader: R) -> Result<Dataset> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(h) => h?,
            None => {
                return Err(EgError::Parse { line: 1, message: "empty file; expected a header row".to_string() })
            }
        };
        let column_names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        if column_names.iter().any(|c| c.is_empty()) {
            return Err(EgError::Parse { line: 1, message: "empty column name in header".to_string() });
        }
        let p = column_names.len();
        let mut rows: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != p {
                return Err(EgError::Parse {
                    line: line_no,
                    message: format!("expected {p} cells, found {}", cells.len()),
                });
            }
            for cell in cells {
                let v: f64 = cell.trim().parse().map_err(|_| EgError::Parse {
                    line: line_no,
                    message: format!("non-numeric cell '{}'", cell.trim()),
                })?;
                if !v.is_finite() {
                    return Err(EgError::Parse { line: line_no, message: format!("non-finite value {v}") });
                }
                rows.push(v);
            }
            n += 1;
        }
        let values = DMatrix::from_row_slice(n, p, &rows);
        Dataset::new(values, column_names)
    }

    /// Write headered CSV. Floats use the shortest round-trip representation,
    /// so writing is deterministic and lossless.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.column_names.join(","))?;
        for i in 0..self.n() {
            let row: Vec<String> = (0..self.p()).map(|j| format!("{}", self.values[(i, j)])).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
