use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csi::PreprocessConfig;
use crate::error::{Error, Result};
use crate::eval::{RefineConfig, SmootherConfig};
use crate::fit::FitConfig;
use crate::model::{TrainConfig, DEFAULT_K};
use crate::sim::{ControlPointSpec, Floor, Placement, ScenarioConfig, WalkerConfig};

/// Swept parameter of an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    /// Gaussian noise on measured control positions (m).
    CpNoiseSigma,
    /// Number of random control points; radius fixed by `cp_radius`.
    CpCount,
    /// Radius of random control points (m); count fixed by the scenario.
    CpRadius,
    /// Reference-link SNR filter (dB).
    SnrThreshold,
}

impl Knob {
    pub fn name(self) -> &'static str {
        match self {
            Knob::CpNoiseSigma => "cp_noise_sigma",
            Knob::CpCount => "cp_count",
            Knob::CpRadius => "cp_radius",
            Knob::SnrThreshold => "snr_threshold",
        }
    }
}

impl std::str::FromStr for Knob {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cp_noise_sigma" => Knob::CpNoiseSigma,
            "cp_count" => Knob::CpCount,
            "cp_radius" => Knob::CpRadius,
            "snr_threshold" => Knob::SnrThreshold,
            _ => return Err(Error::config(format!("unknown ablation knob `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub cp_noise_sigma: Vec<f64>,
    pub cp_count: Vec<usize>,
    pub cp_radius: Vec<f64>,
    pub snr_threshold: Vec<f64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            cp_noise_sigma: vec![0.0, 0.02, 0.05, 0.10],
            cp_count: vec![2, 4, 8, 16],
            cp_radius: vec![0.01, 0.05, 0.10],
            snr_threshold: vec![-10.0, 0.0, 10.0],
        }
    }
}

impl AblationGrid {
    pub fn values(&self, knob: Knob) -> Vec<f64> {
        match knob {
            Knob::CpNoiseSigma => self.cp_noise_sigma.clone(),
            Knob::CpCount => self.cp_count.iter().map(|&c| c as f64).collect(),
            Knob::CpRadius => self.cp_radius.clone(),
            Knob::SnrThreshold => self.snr_threshold.clone(),
        }
    }
}

/// One experiment: scenario, every stage's settings, and the seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub preprocess: PreprocessConfig,
    pub fit: FitConfig,
    pub train: TrainConfig,
    /// Epochs for the truth-label baseline; other models use `train.epochs`.
    pub supervised_epochs: usize,
    /// Epochs per refinement iteration; the first entry trains the plain
    /// pseudo-label model.
    pub refine_epochs: Vec<usize>,
    /// Smooth test predictions before scoring.
    pub smooth: bool,
    pub smoother: SmootherConfig,
    pub knn_k: usize,
    /// Train the truth-label, dead-reckoning-label and k-NN baselines.
    pub baselines: bool,
    pub seeds: Vec<u64>,
    /// Radius used by the control-point count sweep.
    pub cp_radius: f64,
    pub ablation: AblationGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            preprocess: PreprocessConfig::default(),
            fit: FitConfig::default(),
            train: TrainConfig::default(),
            supervised_epochs: 600,
            refine_epochs: vec![100, 200, 300, 400],
            smooth: true,
            smoother: SmootherConfig::default(),
            knn_k: DEFAULT_K,
            baselines: true,
            seeds: (0..30).collect(),
            cp_radius: 0.20,
            ablation: AblationGrid::default(),
        }
    }
}

pub const PRESETS: [&str; 3] = ["desk", "simulated", "warehouse"];

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.fit.validate()?;
        self.train.validate()?;
        self.smoother.validate()?;
        if self.supervised_epochs == 0 {
            return Err(Error::config("supervised_epochs must be >= 1"));
        }
        if self.refine_epochs.is_empty() || self.refine_epochs.contains(&0) {
            return Err(Error::config("refine_epochs must be a nonempty list of positive counts"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.knn_k == 0 {
            return Err(Error::config("knn_k must be >= 1"));
        }
        if self.preprocess.feature_bins == 0 {
            return Err(Error::config("feature_bins must be >= 1"));
        }
        if self.scenario.test_fraction <= 0.0 {
            return Err(Error::config("test_fraction must be positive to score models"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes to TOML")
    }

    pub fn refine_config(&self) -> RefineConfig {
        RefineConfig {
            epochs: self.refine_epochs.clone(),
            train: self.train.clone(),
            fit: self.fit.clone(),
            smoothing: self.smoothing(),
        }
    }

    pub fn smoothing(&self) -> Option<SmootherConfig> {
        self.smooth.then_some(self.smoother)
    }

    /// Named scenario presets. Model settings keep their defaults.
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        match name {
            "desk" => {}
            "simulated" => {
                cfg.scenario = ScenarioConfig {
                    name: "simulated".into(),
                    samples: 4000,
                    floor: Floor {
                        width: 20.0,
                        height: 12.0,
                    },
                    trps: vec![
                        [0.0, 0.0, 3.0],
                        [20.0, 0.0, 3.0],
                        [0.0, 12.0, 3.0],
                        [20.0, 12.0, 3.0],
                    ],
                    walker: WalkerConfig {
                        step_size: 0.20,
                        return_after: 0,
                        ..WalkerConfig::default()
                    },
                    control_points: ControlPointSpec {
                        placement: Placement::Random {
                            count: 3,
                            include_start: true,
                        },
                        ..ControlPointSpec::default()
                    },
                    ..ScenarioConfig::default()
                };
            }
            "warehouse" => {
                cfg.scenario = ScenarioConfig {
                    name: "warehouse".into(),
                    samples: 10_000,
                    floor: Floor {
                        width: 12.0,
                        height: 8.0,
                    },
                    trps: vec![
                        [0.0, 0.0, 3.0],
                        [12.0, 0.0, 3.0],
                        [0.0, 8.0, 3.0],
                        [12.0, 8.0, 3.0],
                    ],
                    walker: WalkerConfig {
                        step_size: 0.034,
                        step_duration: 0.16,
                        return_after: 250,
                        ..WalkerConfig::default()
                    },
                    ..ScenarioConfig::default()
                };
            }
            _ => {
                return Err(Error::config(format!(
                    "unknown preset `{name}` (expected one of {PRESETS:?})"
                )))
            }
        }
        Ok(cfg)
    }
}
