use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn mean_power(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>() / x.len() as f64
}

/// `10 log10(P_signal / P_noise)` from mean symbol powers. A zero noise power
/// yields `+inf`.
pub fn snr_db(signal: &[Complex64], noise: &[Complex64]) -> Result<f64> {
    if signal.is_empty() || noise.is_empty() {
        return Err(Error::input("SNR needs nonempty signal and noise symbol sets"));
    }
    let n = mean_power(noise);
    if n == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (mean_power(signal) / n).log10())
}

/// Delay windows for SNR estimation on a CIR without symbol structure.
///
/// Signal energy is taken from bins `[0, signal_bins)` minus the noise floor;
/// the per-bin noise floor comes from `[noise_start * B, noise_end * B)`.
/// The noise window stays away from both ends because sidelobes of an early
/// peak wrap around to the last bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnrWindows {
    pub signal_bins: usize,
    pub noise_start: f64,
    pub noise_end: f64,
}

impl Default for SnrWindows {
    fn default() -> Self {
        Self {
            signal_bins: 64,
            noise_start: 0.25,
            noise_end: 0.75,
        }
    }
}

impl SnrWindows {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.noise_start && self.noise_start < self.noise_end && self.noise_end <= 1.0) {
            return Err(Error::config("SNR noise window must satisfy 0 < start < end <= 1"));
        }
        if self.signal_bins == 0 {
            return Err(Error::config("SNR signal window must be nonempty"));
        }
        Ok(())
    }
}

/// Ratio of signal energy to total noise energy over the whole CIR, in dB.
///
/// Under the `1/K` transform this equals the per-subtone SNR of the CFR.
/// Returns `+inf` when the noise window is silent and `-inf` when no energy
/// rises above the floor.
pub fn estimate_cir_snr(cir: &[Complex64], windows: &SnrWindows) -> f64 {
    let b = cir.len();
    let start = ((windows.noise_start * b as f64) as usize).min(b.saturating_sub(1));
    let end = ((windows.noise_end * b as f64) as usize).clamp(start + 1, b);
    let sig_end = windows.signal_bins.min(start);
    if sig_end == 0 {
        return f64::NAN;
    }
    let floor = mean_power(&cir[start..end]);
    if floor == 0.0 {
        return f64::INFINITY;
    }
    let signal = cir[..sig_end].iter().map(|z| z.norm_sqr()).sum::<f64>() - sig_end as f64 * floor;
    if signal <= 0.0 {
        return f64::NEG_INFINITY;
    }
    10.0 * (signal / (b as f64 * floor)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi::CirDataset;
    use crate::sim::{simulate_trajectory, synth_csi, ScenarioConfig};

    #[test]
    fn power_ratio_examples() {
        let one = vec![Complex64::new(1.0, 0.0); 4];
        assert_eq!(snr_db(&one, &one).unwrap(), 0.0);
        let ten = vec![Complex64::new(0.0, 10.0); 3];
        assert!((snr_db(&ten, &one).unwrap() - 20.0).abs() < 1e-12);
        let zero = vec![Complex64::new(0.0, 0.0); 2];
        assert_eq!(snr_db(&one, &zero).unwrap(), f64::INFINITY);
        assert!(snr_db(&[], &one).is_err());
    }

    #[test]
    fn recovers_injected_snr_on_synthetic_links() {
        let mut cfg = ScenarioConfig::default();
        cfg.samples = 40;
        for injected in [10.0, 20.0] {
            cfg.channel.snr_db = injected;
            let truth = simulate_trajectory(&cfg, 1).unwrap();
            let ch = synth_csi(&truth, &cfg, 2).unwrap();
            let ds = CirDataset::from_channel(&ch, &SnrWindows::default()).unwrap();
            for est in ds.snr_db.iter() {
                assert!((est - injected).abs() <= 2.0, "estimated {est} dB vs {injected}");
            }
        }
    }
}
