//! Error metrics, trajectory smoothing, iterative refinement and result tables.

mod metrics;
mod refine;
mod smoother;
mod tables;

pub use metrics::{horizontal_error, percentile, ErrorReport, ErrorSummary, SeedStats};
pub use refine::{evaluate_predictions, refinement_loop, train_and_score, RefineConfig, RefineData, RefineIteration};
pub use smoother::{rts_smooth, SmootherConfig};
pub use tables::{format_table, write_table, TableRow};
