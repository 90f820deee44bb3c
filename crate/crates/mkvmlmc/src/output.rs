//! Tables, fitted slopes and the files they are written to.
//!
//! Numbers are stored as text using Rust's shortest round-trip formatting,
//! so a table parsed back from disk holds bit-identical values and reruns
//! produce byte-identical files.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Resolved;
use crate::error::AppError;

/// A rectangular table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem; the table is written to `<name>.csv`.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    pub fn column_index(&self, col: &str) -> Option<usize> {
        self.header.iter().position(|h| h == col)
    }

    /// Values of `col`, optionally restricted to rows where `filter.0 == filter.1`.
    pub fn floats(&self, col: &str, filter: Option<(&str, &str)>) -> Vec<f64> {
        let c = self.column_index(col).unwrap_or_else(|| panic!("no column {col} in {}", self.name));
        let f = filter.map(|(k, v)| (self.column_index(k).expect("filter column"), v));
        self.rows
            .iter()
            .filter(|r| f.map_or(true, |(k, v)| r[k] == v))
            .map(|r| r[c].parse().unwrap_or(f64::NAN))
            .collect()
    }

    /// Serializes with a trailing `seed` column.
    pub fn to_csv(&self, seed: u64) -> Result<Vec<u8>, AppError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.header.clone();
        header.push("seed".into());
        w.write_record(&header)?;
        let seed = seed.to_string();
        for r in &self.rows {
            w.write_record(r.iter().chain(std::iter::once(&seed)))?;
        }
        w.into_inner()
            .map_err(|e| AppError::io(format!("{}.csv", self.name), e.into_error()))
    }
}

/// Formats one cell.
pub fn cell(v: impl Display) -> String {
    v.to_string()
}

/// A least-squares slope of `log₂ quantity` against level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fit {
    pub series: String,
    pub quantity: String,
    /// First and last level of the fitting window.
    pub level_min: usize,
    pub level_max: usize,
    pub slope: f64,
}

/// Everything an experiment produces.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub tables: Vec<Table>,
    pub fits: Vec<Fit>,
    /// Extra JSON documents, `(file name, value)`.
    pub documents: Vec<(String, serde_json::Value)>,
}

impl Report {
    pub fn table(&self, name: &str) -> &Table {
        self.tables
            .iter()
            .find(|t| t.name == name)
            .unwrap_or_else(|| panic!("no table {name}"))
    }

    pub fn fit(&self, series: &str, quantity: &str) -> &Fit {
        self.fits
            .iter()
            .find(|f| f.series == series && f.quantity == quantity)
            .unwrap_or_else(|| panic!("no fit {series}/{quantity}"))
    }

    pub fn document(&self, name: &str) -> &serde_json::Value {
        &self
            .documents
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no document {name}"))
            .1
    }

    fn fits_table(&self, experiment: &str) -> Table {
        let mut t = Table::new(
            format!("{experiment}-fits"),
            &["series", "quantity", "level_min", "level_max", "slope"],
        );
        for f in &self.fits {
            t.push(vec![
                f.series.clone(),
                f.quantity.clone(),
                cell(f.level_min),
                cell(f.level_max),
                cell(f.slope),
            ]);
        }
        t
    }
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<(), AppError> {
    fs::write(&path, bytes).map_err(|e| AppError::io(path, e))
}

/// Writes the sidecar, every table and every document into `dir`.
/// Returns the paths written, in order.
pub fn write_report(dir: &Path, resolved: &Resolved, report: &Report) -> Result<Vec<PathBuf>, AppError> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let seed = resolved.seed();
    let mut written = Vec::new();
    let sidecar = dir.join("config.resolved.json");
    write(sidecar.clone(), resolved.config.to_json().as_bytes())?;
    written.push(sidecar);
    let fits = (!report.fits.is_empty()).then(|| report.fits_table(resolved.experiment.id()));
    for t in report.tables.iter().chain(fits.as_ref()) {
        let p = dir.join(format!("{}.csv", t.name));
        write(p.clone(), &t.to_csv(seed)?)?;
        written.push(p);
    }
    for (name, v) in &report.documents {
        let p = dir.join(name);
        let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
        s.push('\n');
        write(p.clone(), s.as_bytes())?;
        written.push(p);
    }
    Ok(written)
}
