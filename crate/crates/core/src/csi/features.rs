use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::cir::CirDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// `|h[b]|` per bin.
    #[default]
    Magnitude,
    /// Interleaved `(re, im)` per bin.
    ReIm,
}

impl FeatureKind {
    pub fn values_per_bin(self) -> usize {
        match self {
            FeatureKind::Magnitude => 1,
            FeatureKind::ReIm => 2,
        }
    }
}

/// Flattening order: TRP-major, then antenna, then delay bin (then re/im).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub trps: usize,
    pub antennas: usize,
    pub bins: usize,
    pub kind: FeatureKind,
}

impl FeatureLayout {
    pub fn block_len(&self) -> usize {
        self.bins * self.kind.values_per_bin()
    }

    pub fn blocks(&self) -> usize {
        self.trps * self.antennas
    }

    pub fn width(&self) -> usize {
        self.blocks() * self.block_len()
    }

    pub fn index(&self, trp: usize, antenna: usize, bin: usize, part: usize) -> usize {
        ((trp * self.antennas + antenna) * self.bins + bin) * self.kind.values_per_bin() + part
    }

    /// Inverse of [`FeatureLayout::index`].
    pub fn locate(&self, flat: usize) -> (usize, usize, usize, usize) {
        let vpb = self.kind.values_per_bin();
        let part = flat % vpb;
        let rest = flat / vpb;
        let bin = rest % self.bins;
        let block = rest / self.bins;
        (block / self.antennas, block % self.antennas, bin, part)
    }
}

/// Regression inputs, one row per kept sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub features: Array2<f64>,
    /// Trajectory sample of each row.
    pub sample_index: Vec<usize>,
    pub layout: FeatureLayout,
    /// L2 norm of each (row, TRP-antenna block) before normalization.
    pub block_norms: Array2<f64>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.features.nrows()
    }
}

/// Drops samples whose reference-link SNR is below `snr_threshold_db`, keeps
/// the first `bins` delay bins, and scales each (sample, TRP, antenna) block
/// to unit L2 norm. Returns the features and the kept dataset rows.
pub fn filter_and_normalize(
    dataset: &CirDataset,
    reference: (usize, usize),
    snr_threshold_db: f64,
    bins: usize,
    kind: FeatureKind,
) -> Result<(FeatureMatrix, Vec<usize>)> {
    if snr_threshold_db.is_nan() || snr_threshold_db == f64::INFINITY {
        return Err(Error::config("SNR threshold must be finite or -inf"));
    }
    let (s, t, a, b) = dataset.cir.dim();
    if bins == 0 || bins > b {
        return Err(Error::config(format!("feature bins {bins} must lie in 1..={b}")));
    }
    if reference.0 >= t || reference.1 >= a {
        return Err(Error::config("SNR reference link out of range"));
    }
    let kept: Vec<usize> = (0..s)
        .filter(|&i| dataset.snr_db[[i, reference.0, reference.1]] >= snr_threshold_db)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "all {s} samples fall below the {snr_threshold_db} dB SNR threshold"
        )));
    }
    let layout = FeatureLayout {
        trps: t,
        antennas: a,
        bins,
        kind,
    };
    let mut features = Array2::zeros((kept.len(), layout.width()));
    let mut block_norms = Array2::zeros((kept.len(), layout.blocks()));
    for (row, &i) in kept.iter().enumerate() {
        let mut out = features.index_axis_mut(Axis(0), row);
        for trp in 0..t {
            for ant in 0..a {
                let lane = dataset.cir.slice(ndarray::s![i, trp, ant, ..bins]);
                let start = layout.index(trp, ant, 0, 0);
                let block = &mut out.as_slice_mut().unwrap()[start..start + layout.block_len()];
                match kind {
                    FeatureKind::Magnitude => {
                        for (dst, z) in block.iter_mut().zip(lane.iter()) {
                            *dst = (z.re as f64).hypot(z.im as f64);
                        }
                    }
                    FeatureKind::ReIm => {
                        for (pair, z) in block.chunks_exact_mut(2).zip(lane.iter()) {
                            pair[0] = z.re as f64;
                            pair[1] = z.im as f64;
                        }
                    }
                }
                let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    block.iter_mut().for_each(|v| *v /= norm);
                }
                block_norms[[row, trp * a + ant]] = norm;
            }
        }
    }
    let sample_index = kept.iter().map(|&i| dataset.sample_index[i]).collect();
    Ok((
        FeatureMatrix {
            features,
            sample_index,
            layout,
            block_norms,
        },
        kept,
    ))
}

pub const MAX_JITTER_BINS: i64 = 7;

/// Uniform integer shift in `[-max, max]`.
pub fn draw_shift<R: rand::Rng + ?Sized>(rng: &mut R, max: i64) -> i64 {
    rng.gen_range(-max..=max)
}

/// Circularly shifts every TRP-antenna block of `row` by the same number of bins.
pub fn augment_cir_shift(row: &mut [f64], layout: &FeatureLayout, shift: i64) {
    let vpb = layout.kind.values_per_bin();
    let rot = shift.rem_euclid(layout.bins as i64) as usize * vpb;
    if rot == 0 {
        return;
    }
    for block in row.chunks_exact_mut(layout.block_len()) {
        block.rotate_right(rot);
    }
}
