use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Everything needed to generate one synthetic deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Number of trajectory samples.
    pub samples: usize,
    /// 2 for horizontal-only fitting, 3 to carry height through the IMU path.
    pub dims: usize,
    pub floor: Floor,
    /// TRP antenna positions in meters (x, y, z).
    pub trps: Vec<[f64; 3]>,
    pub antennas_per_trp: usize,
    /// Antenna spacing along x within one TRP, meters.
    pub antenna_spacing: f64,
    pub ue_height: f64,
    pub carrier: CarrierConfig,
    pub channel: ChannelConfig,
    pub walker: WalkerConfig,
    pub control_points: ControlPointSpec,
    pub imu: ImuNoiseConfig,
    /// Fraction of kept samples held out for testing.
    pub test_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            samples: 600,
            dims: 2,
            floor: Floor {
                width: 6.0,
                height: 4.0,
            },
            trps: vec![[0.0, 0.0, 2.5], [6.0, 0.0, 2.5], [3.0, 4.0, 2.5]],
            antennas_per_trp: 1,
            antenna_spacing: 0.05,
            ue_height: 1.0,
            carrier: CarrierConfig::default(),
            channel: ChannelConfig::default(),
            walker: WalkerConfig::default(),
            control_points: ControlPointSpec::default(),
            imu: ImuNoiseConfig::default(),
            test_fraction: 0.1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor.width > 0.0 && self.floor.height > 0.0) {
            return Err(Error::config("floor extents must be positive"));
        }
        if self.samples < 2 {
            return Err(Error::config("a scenario needs at least 2 samples"));
        }
        if self.dims != 2 && self.dims != 3 {
            return Err(Error::config(format!("dims must be 2 or 3, got {}", self.dims)));
        }
        if self.trps.is_empty() {
            return Err(Error::config("at least one TRP is required"));
        }
        if self.antennas_per_trp == 0 {
            return Err(Error::config("antennas_per_trp must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::config("test_fraction must lie in [0, 1)"));
        }
        self.carrier.validate()?;
        self.walker.validate()?;
        self.imu.validate()?;
        self.control_points.validate()?;
        if self.channel.reflections > 4 {
            return Err(Error::config("at most 4 wall reflections are modelled"));
        }
        Ok(())
    }

    pub fn antenna_position(&self, trp: usize, antenna: usize) -> [f64; 3] {
        let [x, y, z] = self.trps[trp];
        [x + antenna as f64 * self.antenna_spacing, y, z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Floor {
    pub width: f64,
    pub height: f64,
}

impl Floor {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0.0..=self.width).contains(&p[0]) && (0.0..=self.height).contains(&p[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarrierConfig {
    pub bandwidth_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub subcarriers: usize,
    /// Only every `pilot_stride`-th subcarrier carries a pilot.
    pub pilot_stride: usize,
}

impl Default for CarrierConfig {
    fn default() -> Self {
        Self {
            bandwidth_hz: 100e6,
            subcarrier_spacing_hz: 30e3,
            subcarriers: 3264,
            pilot_stride: 4,
        }
    }
}

impl CarrierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 || self.pilot_stride == 0 {
            return Err(Error::config("subcarriers and pilot_stride must be positive"));
        }
        if !(self.subcarrier_spacing_hz > 0.0) {
            return Err(Error::config("subcarrier spacing must be positive"));
        }
        if self.subcarriers as f64 * self.subcarrier_spacing_hz > self.bandwidth_hz * 1.0001 {
            return Err(Error::config("occupied subcarriers exceed the bandwidth"));
        }
        Ok(())
    }

    pub fn pilot_count(&self) -> usize {
        self.subcarriers.div_ceil(self.pilot_stride)
    }

    /// Frequency offset of pilot `p` from the first subcarrier.
    pub fn pilot_frequency(&self, p: usize) -> f64 {
        (p * self.pilot_stride) as f64 * self.subcarrier_spacing_hz
    }

    /// Delay resolution of one CIR bin after the inverse DFT over pilots.
    pub fn bin_duration(&self) -> f64 {
        1.0 / (self.pilot_count() as f64 * self.pilot_stride as f64 * self.subcarrier_spacing_hz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Number of single-bounce wall reflections (walls x=0, x=W, y=0, y=H in order).
    pub reflections: usize,
    pub reflection_coefficient: f64,
    /// Injected per-link SNR on the pilot subtones.
    pub snr_db: f64,
    /// Carrier frequency used for path phases; 0 keeps only the baseband
    /// delay phase across pilots.
    pub carrier_frequency_hz: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            reflections: 4,
            reflection_coefficient: 0.5,
            snr_db: 20.0,
            carrier_frequency_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkerConfig {
    /// Start position; the floor center when absent.
    pub start: Option<[f64; 2]>,
    pub step_size: f64,
    /// Step length is uniform in `step_size * (1 ± step_jitter)`.
    pub step_jitter: f64,
    /// Time between samples, seconds.
    pub step_duration: f64,
    /// Heading changes by a uniform draw in ±max_turn radians per step.
    pub max_turn: f64,
    /// Steer back through the start position after this many steps away;
    /// 0 disables homing.
    pub return_after: usize,
}

impl Default for WalkerConfig {
    fn default() -> Self {
        Self {
            start: None,
            step_size: 0.05,
            step_jitter: 0.1,
            step_duration: 0.16,
            max_turn: 0.25,
            return_after: 150,
        }
    }
}

impl WalkerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_duration > 0.0) {
            return Err(Error::config("walker step size and duration must be positive"));
        }
        if !(0.0..1.0).contains(&self.step_jitter) || self.max_turn < 0.0 {
            return Err(Error::config("walker jitter must be in [0, 1) and max_turn >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Placement {
    /// Fiducials at the ground-truth positions of these sample indices.
    Samples { indices: Vec<usize> },
    /// `count` fiducials at random sample positions; the first sits at the
    /// trajectory start when `include_start` is set.
    Random { count: usize, include_start: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlPointSpec {
    pub placement: Placement,
    pub radius: f64,
    /// Standard deviation of Gaussian noise on measured control positions.
    pub noise_sigma: f64,
}

impl Default for ControlPointSpec {
    fn default() -> Self {
        Self {
            placement: Placement::Samples { indices: vec![0] },
            radius: 0.20,
            noise_sigma: 0.0,
        }
    }
}

impl ControlPointSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::config("control-point radius and noise must be >= 0"));
        }
        let count = match &self.placement {
            Placement::Samples { indices } => indices.len(),
            Placement::Random { count, .. } => *count,
        };
        if count == 0 {
            return Err(Error::config("at least one control point is required"));
        }
        Ok(())
    }

    pub fn site_count(&self) -> usize {
        match &self.placement {
            Placement::Samples { indices } => indices.len(),
            Placement::Random { count, .. } => *count,
        }
    }
}

/// Accelerometer error model. Defaults are the smartphone-grade values used
/// throughout the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuNoiseConfig {
    /// Percent per degree Celsius.
    pub temperature_scale_factor: f64,
    /// m/s^2.
    pub constant_bias: f64,
    /// m/s^2 per degree Celsius.
    pub temperature_bias: f64,
    /// m/s^2 per sqrt(Hz).
    pub noise_density: f64,
    pub reference_temperature: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for ImuNoiseConfig {
    fn default() -> Self {
        Self {
            temperature_scale_factor: 0.008,
            constant_bias: 0.1962,
            temperature_bias: 0.0014715,
            noise_density: 0.0012361,
            reference_temperature: 25.0,
            temperature: 25.0,
            seed: 0,
        }
    }
}

impl ImuNoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            temperature_scale_factor: 0.0,
            constant_bias: 0.0,
            temperature_bias: 0.0,
            noise_density: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.temperature_scale_factor,
            self.constant_bias,
            self.temperature_bias,
            self.noise_density,
        ];
        if all.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::config("IMU noise magnitudes must be >= 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imu_defaults_match_sensor_table() {
        let c = ImuNoiseConfig::default();
        assert_eq!(c.temperature_scale_factor, 0.008);
        assert_eq!(c.constant_bias, 0.1962);
        assert_eq!(c.temperature_bias, 0.0014715);
        assert_eq!(c.noise_density, 0.0012361);
        assert_eq!(c.temperature, c.reference_temperature);
    }

    #[test]
    fn carrier_defaults() {
        let c = CarrierConfig::default();
        assert_eq!(c.pilot_count(), 816);
        // 816 pilots spaced 120 kHz apart
        assert!((c.bin_duration() - 1.0 / 97.92e6).abs() < 1e-18);
    }

    #[test]
    fn validation_rejects_bad_extents() {
        let mut c = ScenarioConfig::default();
        c.floor.width = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ScenarioConfig::default();
        c.walker.step_size = -1.0;
        assert!(c.validate().is_err());
        assert!(ScenarioConfig::default().validate().is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let c = ScenarioConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back: ScenarioConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
