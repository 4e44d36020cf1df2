use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::config::ImuNoiseConfig;
use super::trajectory::TrajectorySeries;
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Noisy global-frame accelerometer output, one row per trajectory sample.
///
/// `dt[i]` is the time from sample `i - 1` to sample `i`; `dt[0]` repeats
/// `dt[1]`. Row 0 of `accel` is never integrated.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuSeries {
    pub dt: Vec<f64>,
    pub accel: Array2<f64>,
    pub temperature: f64,
}

impl ImuSeries {
    pub fn new(dt: Vec<f64>, accel: Array2<f64>, temperature: f64) -> Result<Self> {
        if dt.len() != accel.nrows() {
            return Err(Error::shape(format!(
                "{} time deltas for {} acceleration rows",
                dt.len(),
                accel.nrows()
            )));
        }
        if dt.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::input("all IMU time deltas must be positive"));
        }
        Ok(Self {
            dt,
            accel,
            temperature,
        })
    }

    pub fn len(&self) -> usize {
        self.dt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dt.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.accel.ncols()
    }
}

/// Per-run error terms drawn once from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuErrorTerms {
    pub scale: f64,
    pub bias: Vec<f64>,
}

impl ImuErrorTerms {
    /// The constant bias is split evenly over the axes (magnitude `b / sqrt(D)`
    /// each, random sign) so the bias vector has norm `b`.
    pub fn draw(cfg: &ImuNoiseConfig, dims: usize) -> Self {
        let mut rng = rng::substream(cfg.seed, stream::IMU, 0);
        let dtemp = cfg.temperature - cfg.reference_temperature;
        let per_axis = cfg.constant_bias / (dims as f64).sqrt();
        let bias = (0..dims)
            .map(|_| {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                sign * per_axis + cfg.temperature_bias * dtemp
            })
            .collect();
        Self {
            scale: 1.0 + cfg.temperature_scale_factor / 100.0 * dtemp,
            bias,
        }
    }
}

/// White-noise standard deviation per axis for a sample interval `dt`.
pub fn white_noise_sigma(noise_density: f64, dt: f64) -> f64 {
    noise_density * (1.0 / dt).sqrt()
}

pub fn simulate_imu(truth: &TrajectorySeries, cfg: &ImuNoiseConfig) -> Result<ImuSeries> {
    if truth.len() < 2 {
        return Err(Error::input("IMU simulation needs a trajectory of >= 2 samples"));
    }
    cfg.validate()?;
    let dims = truth.dims();
    let terms = ImuErrorTerms::draw(cfg, dims);
    let dt = truth.dt();
    let mut rng = rng::substream(cfg.seed, stream::IMU, 1);
    let mut accel = truth.accelerations.clone();
    for (i, mut row) in accel.rows_mut().into_iter().enumerate() {
        let sigma = white_noise_sigma(cfg.noise_density, dt[i]);
        for (k, a) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *a = *a * terms.scale + terms.bias[k] + sigma * z;
        }
    }
    ImuSeries::new(dt, accel, cfg.temperature)
}
