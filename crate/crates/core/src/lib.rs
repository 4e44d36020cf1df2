//! Indoor localization from channel state information, supervised by
//! pseudo-labels obtained from accelerometer data and sparse control points.

pub mod csi;
pub mod error;
pub mod eval;
pub mod fit;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
