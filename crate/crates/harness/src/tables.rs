//! Fixed-header CSV tables. Missing values are written as `NA`.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{HarnessError, Result};

pub const NA: &str = "NA";

pub const SCALARS: &str = "scalars.csv";
pub const INTERFERENCE: &str = "interference.csv";
pub const GAIN_CURVE: &str = "gain_curve.csv";
pub const STIFFNESS_CURVE: &str = "stiffness_curve.csv";
pub const RHO_PRIME: &str = "rho_prime.csv";

pub const SCALARS_HEADER: &[&str] = &["checkpoint", "metric", "value"];
pub const INTERFERENCE_HEADER: &[&str] =
    &["checkpoint", "pair_a", "pair_b", "rho", "rho_bar", "stiffness", "delta_a", "delta_b"];
pub const GAIN_CURVE_HEADER: &[&str] = &["checkpoint", "offset", "mean_gain", "count"];
pub const STIFFNESS_CURVE_HEADER: &[&str] = &["checkpoint", "offset", "mean_stiffness", "count"];
pub const RHO_PRIME_HEADER: &[&str] = &[
    "checkpoint",
    "objective",
    "pair_a",
    "pair_b",
    "r1",
    "r2",
    "r3",
    "total",
    "fd_slope",
    "fd_alpha",
    "residual",
];

/// Shortest round-trip decimal; non-finite values are missing.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        NA.to_string()
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), num)
}

/// `None` for `NA`, empty or unparsable cells.
pub fn parse_cell(s: &str) -> Option<f64> {
    if s == NA {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub struct Table {
    w: csv::Writer<BufWriter<File>>,
    width: usize,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(f));
        w.write_record(header)?;
        Ok(Table { w, width: header.len() })
    }

    pub fn row<S: AsRef<str>>(&mut self, cells: &[S]) -> Result<()> {
        if cells.len() != self.width {
            return Err(HarnessError::Report(format!(
                "row has {} cells, header has {}",
                cells.len(),
                self.width
            )));
        }
        self.w.write_record(cells.iter().map(|c| c.as_ref()))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| HarnessError::Report(e.to_string()))
    }
}

/// Write a whole table at once.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut t = Table::create(path, header)?;
    for r in rows {
        t.row(r)?;
    }
    t.finish()
}

/// Rows keyed by column name.
pub fn read_table(path: &Path) -> Result<Vec<HashMap<String, String>>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(header.iter().cloned().zip(rec.iter().map(str::to_string)).collect());
    }
    Ok(out)
}
