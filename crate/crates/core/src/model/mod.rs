//! CSI-to-position regressors: a fully connected network trained with Adam
//! on smooth-L1, and a k-nearest-neighbour baseline.

mod adam;
mod checkpoint;
mod knn;
mod mlp;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use knn::{KnnModel, DEFAULT_K};
pub use mlp::{pad_targets, smooth_l1, target_mean, Mlp};
pub use train::{augment_labels, predict, train_mlp, EpochStats, LabelKind, TrainConfig, TrainOutcome};

/// Magic bytes and version of the checkpoint format.
pub mod checkpoint_format {
    pub use super::checkpoint::{MAGIC, VERSION};
}
