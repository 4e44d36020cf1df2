use std::sync::Arc;

use ndarray::{Array3, Array4, Axis};
use num_complex::{Complex32, Complex64};
use rustfft::{Fft, FftPlanner};

use super::snr::{estimate_cir_snr, SnrWindows};
use crate::error::{Error, Result};
use crate::sim::{CarrierConfig, ChannelDataset};

/// Inverse DFT over the pilot subtones, scaled by `1/K`:
/// `h[b] = (1/K) sum_p H[p] exp(+j 2 pi p b / K)`.
///
/// A flat response maps to a unit impulse at bin 0 and `||h|| = ||H|| / sqrt(K)`.
pub struct CirTransform {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl CirTransform {
    pub fn new(carrier: &CarrierConfig) -> Self {
        let len = carrier.pilot_count();
        let fft = FftPlanner::new().plan_fft_inverse(len);
        Self { len, fft }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn apply(&self, buf: &mut [Complex64]) -> Result<()> {
        if buf.len() != self.len {
            return Err(Error::shape(format!(
                "CFR has {} subtones, carrier config implies {} pilots",
                buf.len(),
                self.len
            )));
        }
        self.fft.process(buf);
        let scale = 1.0 / self.len as f64;
        buf.iter_mut().for_each(|z| *z *= scale);
        Ok(())
    }
}

pub fn cfr_to_cir(cfr: &[Complex64], carrier: &CarrierConfig) -> Result<Vec<Complex64>> {
    let mut buf = cfr.to_vec();
    CirTransform::new(carrier).apply(&mut buf)?;
    Ok(buf)
}

/// Channel impulse responses with per-link SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct CirDataset {
    /// Shape (samples, TRPs, antennas, delay bins).
    pub cir: Array4<Complex32>,
    /// dB per (sample, TRP, antenna); `+inf` marks a zero noise estimate.
    pub snr_db: Array3<f64>,
    pub sample_index: Vec<usize>,
    pub carrier: CarrierConfig,
}

impl CirDataset {
    /// Transforms every link of `channel` to the delay domain and estimates
    /// its SNR from the given windows.
    pub fn from_channel(channel: &ChannelDataset, windows: &SnrWindows) -> Result<Self> {
        windows.validate()?;
        let (s, t, a, _) = channel.cfr.dim();
        let transform = CirTransform::new(&channel.carrier);
        let mut cir = Array4::<Complex32>::zeros((s, t, a, transform.len()));
        let mut snr_db = Array3::<f64>::zeros((s, t, a));
        let mut buf = vec![Complex64::new(0.0, 0.0); channel.cfr.len_of(Axis(3))];
        for i in 0..s {
            for j in 0..t {
                for k in 0..a {
                    let lane = channel.cfr.slice(ndarray::s![i, j, k, ..]);
                    buf.clear();
                    buf.extend(lane.iter().map(|z| Complex64::new(z.re as f64, z.im as f64)));
                    transform.apply(&mut buf)?;
                    snr_db[[i, j, k]] = estimate_cir_snr(&buf, windows);
                    for (b, z) in buf.iter().enumerate() {
                        cir[[i, j, k, b]] = Complex32::new(z.re as f32, z.im as f32);
                    }
                }
            }
        }
        Ok(Self {
            cir,
            snr_db,
            sample_index: channel.sample_index.clone(),
            carrier: channel.carrier,
        })
    }

    pub fn samples(&self) -> usize {
        self.cir.len_of(Axis(0))
    }

    pub fn bins(&self) -> usize {
        self.cir.len_of(Axis(3))
    }

    pub(crate) fn lane(&self, sample: usize, trp: usize, antenna: usize) -> Vec<Complex64> {
        self.cir
            .slice(ndarray::s![sample, trp, antenna, ..])
            .iter()
            .map(|z| Complex64::new(z.re as f64, z.im as f64))
            .collect()
    }
}
