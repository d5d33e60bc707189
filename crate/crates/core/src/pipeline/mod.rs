//! Dataset ingestion, two-phase training, evaluation and inspection.

pub mod data;
pub mod metrics;
pub mod model;
pub mod train;
pub mod workspace;

pub use data::{load_dataset, write_dataset, Dataset, Label, Sample, SampleRecord};
pub use metrics::Metrics;
pub use model::{forward_sample, predict, prepare_all, prepare_sample, Model, Prepared, Resources};
pub use train::{epoch_log_csv, evaluate, train, EpochLog};
pub use workspace::{run, RunOutcome, Workspace};
