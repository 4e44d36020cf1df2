use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-row Euclidean distance over the first two coordinates.
pub fn horizontal_error(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<Vec<f64>> {
    if pred.nrows() != truth.nrows() {
        return Err(Error::input(format!(
            "{} predictions vs {} ground-truth rows",
            pred.nrows(),
            truth.nrows()
        )));
    }
    if pred.ncols() < 2 || truth.ncols() < 2 {
        return Err(Error::shape("horizontal error needs at least two coordinates"));
    }
    Ok(pred
        .rows()
        .into_iter()
        .zip(truth.rows())
        .map(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]))
        .collect())
}

/// Quantile `q` in `[0, 1]` with linear interpolation between order
/// statistics at position `q (n - 1)`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

fn percentile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

impl ErrorSummary {
    pub fn from_errors(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::EmptyDataset("no errors to summarize".into()));
        }
        let mut v = errors.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            count: v.len(),
            mean: errors.iter().sum::<f64>() / errors.len() as f64,
            median: percentile_sorted(&v, 0.5),
            p90: percentile_sorted(&v, 0.9),
        })
    }
}

/// Per-sample errors and their aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub errors: Vec<f64>,
    pub summary: ErrorSummary,
}

impl ErrorReport {
    pub fn new(errors: Vec<f64>) -> Result<Self> {
        if errors.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::input("errors must be non-negative numbers"));
        }
        let summary = ErrorSummary::from_errors(&errors)?;
        Ok(Self { errors, summary })
    }

    pub fn between(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<Self> {
        Self::new(horizontal_error(pred, truth)?)
    }

    /// True when the stored aggregates equal a fresh computation.
    pub fn is_consistent(&self) -> bool {
        ErrorSummary::from_errors(&self.errors).ok() == Some(self.summary)
    }
}

/// Spread of one statistic over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub seeds: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1); zero for a single seed.
    pub std: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
}

impl SeedStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyDataset("no seeds".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            seeds: values.len(),
            mean,
            std,
            median: percentile(values, 0.5),
            q10: percentile(values, 0.1),
            q90: percentile(values, 0.9),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn identical_is_zero() {
        let p = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(horizontal_error(p.view(), p.view()).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn height_is_ignored() {
        let t = array![[1.0, 1.0, 0.0]];
        let p = array![[1.03, 1.04, 9.9]];
        let e = horizontal_error(p.view(), t.view()).unwrap();
        assert!((e[0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_input_error() {
        let a = array![[0.0, 0.0]];
        let b = array![[0.0, 0.0], [1.0, 1.0]];
        assert!(matches!(horizontal_error(a.view(), b.view()), Err(Error::Input(_))));
    }

    #[test]
    fn percentile_examples() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert!((percentile(&v, 0.9) - 3.7).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 0.9), 7.0);
    }

    #[test]
    fn seed_stats() {
        let s = SeedStats::from_values(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std, s.median), (2.0, 1.0, 2.0));
        assert_eq!(SeedStats::from_values(&[5.0]).unwrap().std, 0.0);
        assert!(SeedStats::from_values(&[]).is_err());
    }

    proptest! {
        #[test]
        fn aggregates_match_sort_oracle(v in proptest::collection::vec(0.0f64..100.0, 1..200)) {
            let r = ErrorReport::new(v.clone()).unwrap();
            prop_assert!(r.is_consistent());
            let mut s = v.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = s.len();
            // independent oracle: explicit rank arithmetic
            let q = |p: f64| {
                let h = (n - 1) as f64 * p;
                let f = h.floor();
                let i = f as usize;
                if i + 1 < n { s[i] + (h - f) * (s[i + 1] - s[i]) } else { s[n - 1] }
            };
            prop_assert!((r.summary.median - q(0.5)).abs() <= 1e-12);
            prop_assert!((r.summary.p90 - q(0.9)).abs() <= 1e-12);
            prop_assert!(r.summary.median <= r.summary.p90);
        }
    }
}
