//! Forward/backward IMU integration between control points and the
//! self-supervised correction fit that turns it into pseudo-labels.

mod integrate;
mod loss;
mod optimize;
mod trajectory;

pub use integrate::{dead_reckon, integrate_backward, integrate_forward, AnchorState, Segment};
pub use loss::{fb_loss, FbLoss, LossWeights, SegmentAnchors};
pub use optimize::{fit_segment, FitConfig, SegmentFit, StepRule};
pub use trajectory::{
    dead_reckon_trajectory, fit_trajectory, segment_bounds, ModelAnchors, SegmentDiagnostics,
    SegmentKind, TrajectoryFit,
};
