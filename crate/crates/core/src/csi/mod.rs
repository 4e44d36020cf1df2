//! CSI preprocessing: delay-domain transform, line-of-sight alignment, SNR
//! filtering and per-antenna normalization.

mod align;
mod cir;
mod features;
mod snr;

pub use align::{align_los, detect_los_peak, AlignmentReport, PeakPolicy};
pub use cir::{cfr_to_cir, CirDataset, CirTransform};
pub use features::{
    augment_cir_shift, draw_shift, filter_and_normalize, FeatureKind, FeatureLayout,
    FeatureMatrix, MAX_JITTER_BINS,
};
pub use snr::{estimate_cir_snr, snr_db, SnrWindows};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sim::ChannelDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Alignment and SNR reference link (TRP, antenna).
    pub reference: (usize, usize),
    pub t_bin: usize,
    pub peak_policy: PeakPolicy,
    pub snr_windows: SnrWindows,
    pub snr_threshold_db: f64,
    pub feature_bins: usize,
    pub feature_kind: FeatureKind,
    pub align: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            reference: (0, 0),
            t_bin: 20,
            peak_policy: PeakPolicy::default(),
            snr_windows: SnrWindows::default(),
            snr_threshold_db: 0.0,
            feature_bins: 256,
            feature_kind: FeatureKind::Magnitude,
            align: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub dropped_samples: Vec<usize>,
    /// Links whose noise estimate was zero (SNR reported as +inf).
    pub infinite_snr_links: usize,
    pub alignment: Option<AlignmentReport>,
    pub shift_min: i64,
    pub shift_max: i64,
    pub shift_mean: f64,
}

pub fn preprocess(
    channel: &ChannelDataset,
    cfg: &PreprocessConfig,
) -> Result<(FeatureMatrix, PreprocessReport)> {
    let cir = CirDataset::from_channel(channel, &cfg.snr_windows)?;
    let (cir, alignment) = if cfg.align {
        let (aligned, rep) = align_los(&cir, cfg.reference, cfg.t_bin, &cfg.peak_policy)?;
        (aligned, Some(rep))
    } else {
        (cir, None)
    };
    let (features, kept) = filter_and_normalize(
        &cir,
        cfg.reference,
        cfg.snr_threshold_db,
        cfg.feature_bins,
        cfg.feature_kind,
    )?;
    let dropped_samples = (0..cir.samples())
        .filter(|i| kept.binary_search(i).is_err())
        .map(|i| cir.sample_index[i])
        .collect();
    let shifts = alignment.as_ref().map(|a| a.shifts.clone()).unwrap_or_default();
    let report = PreprocessReport {
        dropped_samples,
        infinite_snr_links: cir.snr_db.iter().filter(|v| **v == f64::INFINITY).count(),
        shift_min: shifts.iter().copied().min().unwrap_or(0),
        shift_max: shifts.iter().copied().max().unwrap_or(0),
        shift_mean: if shifts.is_empty() {
            0.0
        } else {
            shifts.iter().sum::<i64>() as f64 / shifts.len() as f64
        },
        alignment,
    };
    Ok((features, report))
}
