//! Geometric multipath stand-in for a ray tracer.
//!
//! Each (TRP antenna, UE) link is a line-of-sight path plus up to four
//! single-bounce specular reflections off the floor-rectangle walls, found with
//! the image method. Path amplitude falls off as `1/d` and every path adds the
//! phase ramp `exp(-j 2 pi (f_c + f_p) tau)` across the pilot subtones.

use ndarray::{Array4, Axis};
use num_complex::{Complex32, Complex64};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::config::{CarrierConfig, ScenarioConfig, SPEED_OF_LIGHT};
use super::trajectory::TrajectorySeries;
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Raw channel frequency responses on the pilot subtones.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    /// Shape (samples, TRPs, antennas, pilots).
    pub cfr: Array4<Complex32>,
    /// Trajectory sample for each row.
    pub sample_index: Vec<usize>,
    pub carrier: CarrierConfig,
}

impl ChannelDataset {
    pub fn samples(&self) -> usize {
        self.cfr.len_of(Axis(0))
    }
}

#[derive(Debug, Clone, Copy)]
struct Path {
    delay: f64,
    gain: f64,
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn link_paths(config: &ScenarioConfig, ue: [f64; 3], antenna: [f64; 3]) -> Result<Vec<Path>> {
    let d = distance(ue, antenna);
    if d < 1e-6 {
        return Err(Error::DegenerateGeometry(format!(
            "UE at {ue:?} is colocated with a TRP antenna"
        )));
    }
    let mut paths = vec![Path {
        delay: d / SPEED_OF_LIGHT,
        gain: 1.0 / d,
    }];
    let (w, h) = (config.floor.width, config.floor.height);
    let [x, y, z] = antenna;
    let images = [[-x, y, z], [2.0 * w - x, y, z], [x, -y, z], [x, 2.0 * h - y, z]];
    for image in images.iter().take(config.channel.reflections) {
        let di = distance(ue, *image);
        paths.push(Path {
            delay: di / SPEED_OF_LIGHT,
            gain: config.channel.reflection_coefficient / di,
        });
    }
    Ok(paths)
}

/// Noise-free CFR of one link on the pilot subtones.
fn link_cfr(config: &ScenarioConfig, paths: &[Path], out: &mut [Complex64]) {
    let carrier = &config.carrier;
    out.iter_mut().for_each(|h| *h = Complex64::new(0.0, 0.0));
    for path in paths {
        for (p, h) in out.iter_mut().enumerate() {
            let f = config.channel.carrier_frequency_hz + carrier.pilot_frequency(p);
            let phase = -2.0 * std::f64::consts::PI * f * path.delay;
            *h += Complex64::from_polar(path.gain, phase);
        }
    }
}

fn ue_position(truth: &TrajectorySeries, config: &ScenarioConfig, i: usize) -> [f64; 3] {
    let row = truth.positions.row(i);
    let z = if row.len() > 2 { row[2] } else { config.ue_height };
    [row[0], row[1], z]
}

/// Synthesizes the CFR for every trajectory sample and TRP antenna.
///
/// Complex Gaussian noise is added per link at `channel.snr_db` relative to
/// the link's mean pilot power. The noise stream for sample `i` depends only
/// on `(seed, i)`.
pub fn synth_csi(truth: &TrajectorySeries, config: &ScenarioConfig, seed: u64) -> Result<ChannelDataset> {
    config.validate()?;
    let s = truth.len();
    let t = config.trps.len();
    let a = config.antennas_per_trp;
    let p = config.carrier.pilot_count();
    let noise_scale = 10f64.powf(-config.channel.snr_db / 10.0);

    let mut cfr = Array4::<Complex32>::zeros((s, t, a, p));
    cfr.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .try_for_each(|(i, mut sample)| -> Result<()> {
            let ue = ue_position(truth, config, i);
            let mut rng = rng::substream(seed, stream::CHANNEL, i as u64);
            let mut buf = vec![Complex64::new(0.0, 0.0); p];
            for trp in 0..t {
                for ant in 0..a {
                    let paths = link_paths(config, ue, config.antenna_position(trp, ant))?;
                    link_cfr(config, &paths, &mut buf);
                    let power = buf.iter().map(|h| h.norm_sqr()).sum::<f64>() / p as f64;
                    let sigma = (power * noise_scale / 2.0).sqrt();
                    for (k, h) in buf.iter().enumerate() {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        let noisy = h + Complex64::new(re, im) * sigma;
                        sample[[trp, ant, k]] = Complex32::new(noisy.re as f32, noisy.im as f32);
                    }
                }
            }
            Ok(())
        })?;
    Ok(ChannelDataset {
        cfr,
        sample_index: (0..s).collect(),
        carrier: config.carrier,
    })
}
