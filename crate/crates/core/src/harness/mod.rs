//! Run configuration, the training loop and experiment drivers.

pub mod config;
pub mod experiments;
pub mod train;

pub use config::{parse_config, DatasetSpec, RunConfig};
pub use experiments::{
    ols_slope, render_table1, run_depth_sweep, run_depth_sweep_on, run_table1, run_table1_on, spearman, Sweep,
    SweepRow, Table1, Table1Row,
};
pub use train::{evaluate, load_dataset, load_model, probe, probe_inputs, train, train_on, EpochRecord, RunArtifacts, RunLog};
