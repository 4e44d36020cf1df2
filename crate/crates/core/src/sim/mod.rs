//! Synthetic deployments: ground-truth walks, accelerometer noise, control
//! points, and multipath channel responses.

mod channel;
mod config;
mod control;
mod imu;
mod trajectory;

pub use channel::{synth_csi, ChannelDataset};
pub use config::{
    CarrierConfig, ChannelConfig, ControlPointSpec, Floor, ImuNoiseConfig, Placement,
    ScenarioConfig, WalkerConfig, SPEED_OF_LIGHT,
};
pub use control::{control_sites, place_control_points, ControlPoint};
pub use imu::{simulate_imu, white_noise_sigma, ImuErrorTerms, ImuSeries};
pub use trajectory::{simulate_trajectory, TrajectorySeries};
