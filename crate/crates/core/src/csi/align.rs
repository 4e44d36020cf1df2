use ndarray::Axis;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::cir::CirDataset;
use crate::error::{Error, Result};

/// Detection threshold for the first CIR peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum PeakPolicy {
    /// Fixed magnitude threshold.
    Absolute(f64),
    /// Multiple of the frame's median magnitude.
    MedianMultiple(f64),
    /// `max(median_multiple * median, peak_fraction * max)`. The relative
    /// floor keeps band-limited sidelobes in front of the main lobe from
    /// counting as the first peak.
    Robust {
        median_multiple: f64,
        peak_fraction: f64,
    },
}

impl Default for PeakPolicy {
    fn default() -> Self {
        PeakPolicy::Robust {
            median_multiple: 6.0,
            peak_fraction: 0.5,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Earliest bin whose magnitude exceeds the threshold and is no smaller than
/// both circular neighbours.
pub fn detect_los_peak(cir: &[Complex64], policy: &PeakPolicy) -> Option<usize> {
    let mag: Vec<f64> = cir.iter().map(|z| z.norm()).collect();
    detect_peak_in_magnitude(&mag, policy)
}

pub(crate) fn detect_peak_in_magnitude(mag: &[f64], policy: &PeakPolicy) -> Option<usize> {
    let n = mag.len();
    if n == 0 {
        return None;
    }
    let threshold = match *policy {
        PeakPolicy::Absolute(t) => t,
        PeakPolicy::MedianMultiple(k) => k * median(mag.to_vec()),
        PeakPolicy::Robust {
            median_multiple,
            peak_fraction,
        } => {
            let max = mag.iter().copied().fold(0.0, f64::max);
            (median_multiple * median(mag.to_vec())).max(peak_fraction * max)
        }
    };
    (0..n).find(|&i| {
        let prev = mag[(i + n - 1) % n];
        let next = mag[(i + 1) % n];
        mag[i] > threshold && mag[i] >= prev && mag[i] >= next
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// Applied circular shift per sample (`t_bin - T0`).
    pub shifts: Vec<i64>,
    /// Samples whose reference peak was not found and used the median.
    pub fallback_samples: Vec<usize>,
    pub median_peak: usize,
}

/// Rolls every CIR of a sample so the reference antenna's first peak lands on
/// `t_bin`; samples without a detectable peak use the dataset median peak.
pub fn align_los(
    dataset: &CirDataset,
    reference: (usize, usize),
    t_bin: usize,
    policy: &PeakPolicy,
) -> Result<(CirDataset, AlignmentReport)> {
    let (s, t, a, b) = dataset.cir.dim();
    if reference.0 >= t || reference.1 >= a {
        return Err(Error::config(format!(
            "reference (trp {}, antenna {}) outside {t} TRPs x {a} antennas",
            reference.0, reference.1
        )));
    }
    if t_bin >= b {
        return Err(Error::config(format!("t_bin {t_bin} must be < {b} bins")));
    }
    let peaks: Vec<Option<usize>> = (0..s)
        .map(|i| detect_los_peak(&dataset.lane(i, reference.0, reference.1), policy))
        .collect();
    let mut detected: Vec<usize> = peaks.iter().flatten().copied().collect();
    if detected.is_empty() {
        return Err(Error::input("no LoS peak detected on the reference antenna in any sample"));
    }
    detected.sort_unstable();
    let median_peak = detected[(detected.len() - 1) / 2];

    let mut out = dataset.clone();
    let mut shifts = Vec::with_capacity(s);
    let mut fallback_samples = Vec::new();
    for (i, peak) in peaks.iter().enumerate() {
        let t0 = peak.unwrap_or_else(|| {
            fallback_samples.push(i);
            median_peak
        });
        let shift = t_bin as i64 - t0 as i64;
        shifts.push(shift);
        let rot = shift.rem_euclid(b as i64) as usize;
        if rot == 0 {
            continue;
        }
        let mut sample = out.cir.index_axis_mut(Axis(0), i);
        for mut lane in sample.lanes_mut(Axis(2)) {
            let mut v = lane.to_vec();
            v.rotate_right(rot);
            lane.iter_mut().zip(v).for_each(|(dst, src)| *dst = src);
        }
    }
    Ok((
        out,
        AlignmentReport {
            shifts,
            fallback_samples,
            median_peak,
        },
    ))
}
