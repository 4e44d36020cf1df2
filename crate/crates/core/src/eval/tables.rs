use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{ErrorSummary, SeedStats};
use crate::error::{Error, Result};
use crate::io::write_csv;

/// One results-table line; errors in centimetres, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    /// Control-point count, or "all" for surveyed labels.
    pub control_points: String,
    pub seeds: usize,
    pub mean_cm: f64,
    pub median_cm: f64,
    pub p90_cm: f64,
    /// Seed-to-seed standard deviation of the mean error.
    pub mean_std_cm: f64,
}

impl TableRow {
    pub fn from_summaries(method: &str, control_points: &str, per_seed: &[ErrorSummary]) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::EmptyDataset(format!("no seeds for {method}")));
        }
        let stat = |f: fn(&ErrorSummary) -> f64| SeedStats::from_values(&per_seed.iter().map(f).collect::<Vec<_>>());
        let mean = stat(|s| s.mean)?;
        Ok(Self {
            method: method.to_string(),
            control_points: control_points.to_string(),
            seeds: per_seed.len(),
            mean_cm: 100.0 * mean.mean,
            median_cm: 100.0 * stat(|s| s.median)?.mean,
            p90_cm: 100.0 * stat(|s| s.p90)?.mean,
            mean_std_cm: 100.0 * mean.std,
        })
    }
}

/// Fixed-width text rendering.
pub fn format_table(rows: &[TableRow]) -> String {
    let w = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<w$}  {:>4}  {:>9}  {:>9}  {:>9}  {:>8}",
        "method", "#CP", "mean cm", "median cm", "p90 cm", "std cm"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<w$}  {:>4}  {:>9.1}  {:>9.1}  {:>9.1}  {:>8.1}",
            r.method, r.control_points, r.mean_cm, r.median_cm, r.p90_cm, r.mean_std_cm
        );
    }
    s
}

/// Writes `<stem>.csv` and `<stem>.txt` into `dir`.
pub fn write_table(dir: &Path, stem: &str, rows: &[TableRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(dir.join(format!("{stem}.csv")), rows)?;
    std::fs::write(dir.join(format!("{stem}.txt")), format_table(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(mean: f64) -> ErrorSummary {
        ErrorSummary {
            count: 10,
            mean,
            median: mean * 0.9,
            p90: mean * 1.8,
        }
    }

    #[test]
    fn aggregates_in_centimetres() {
        let r = TableRow::from_summaries("x", "20", &[summary(0.5), summary(0.7)]).unwrap();
        assert!((r.mean_cm - 60.0).abs() < 1e-9);
        assert!((r.median_cm - 54.0).abs() < 1e-9);
        assert!((r.p90_cm - 108.0).abs() < 1e-9);
        assert!((r.mean_std_cm - 20.0 * 0.5f64.sqrt()).abs() < 1e-9);
        assert!(TableRow::from_summaries("x", "1", &[]).is_err());
    }

    #[test]
    fn text_and_csv_files() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![TableRow::from_summaries("supervised", "all", &[summary(0.25)]).unwrap()];
        write_table(dir.path(), "t", &rows).unwrap();
        let txt = std::fs::read_to_string(dir.path().join("t.txt")).unwrap();
        assert!(txt.lines().nth(1).unwrap().contains("25.0"));
        let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert!(csv.starts_with("method,control_points,seeds,mean_cm"));
    }
}
