//! Experiment orchestration: configs and presets, stage functions, the
//! content-hash cached stage runner, seed sweeps and ablations.

mod config;
mod persist;
mod report;
mod runner;
mod stages;

pub use config::{AblationGrid, ExperimentConfig, Knob, PRESETS};
pub use stages::{
    fit_labels, fit_seed, labelled_span, prepare, refine, refine_data, run_replication, simulate, simulate_motion, split_rows, summarize,
    train_baselines, BaselineErrors, Baselines, IterationRecord, Labels, MethodResult, Prepared, ReplicationSummary, Simulated,
    DR_LABELS, IMU_SUPERVISED, IMU_SUPERVISED_IR, KNN, SUPERVISED,
};
pub use persist::{
    labels_from_container, labels_to_container, prepared_from_container, prepared_to_container, simulated_from_container,
    simulated_to_container,
};
pub use report::{ablation_config, reproduce_tables, run_ablation, AblationRow, AblationSummaryRow, Tables};
pub use runner::{Runner, Stage, StageRecord};
