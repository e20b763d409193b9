//! MNIST benchmark harness for the normalization layers in [`ebn`].
//!
//! The network is a fully-connected classifier,
//! `784 → [linear 128 → norm → ReLU] × 4 → linear 10`, trained with SGD
//! (momentum 0.5) for 50 epochs. The learning rate follows the linear
//! scaling rule `base_lr · batch_size / 128`, and the headline metric is
//! the mean test accuracy over the final five epochs.

pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod report;
pub mod train;

pub use config::TrainConfig;
pub use data::{load_mnist, Dataset, Mnist};
pub use error::{BenchError, Result};
pub use model::{build_model, EvalGraph, Mlp};
pub use report::{report_final, run_suite, FinalSummary, SuiteMatrix, SuiteTable};
pub use train::{run_training, MetricRow, TrainOutcome};
