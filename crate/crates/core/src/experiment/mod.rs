//! Batch audit runs: configuration, orchestration, persistence and plot data.

pub mod config;
pub mod plot;
pub mod run;

pub use config::{
    load_config, parse_config, validate_value, CorpusConfig, DefenseConfig, DpSection,
    ExperimentConfig, Task, Violation,
};
pub use plot::{emit_plot_data, sequence_csv, SEQUENCE_HEADER, SWEEP_HEADER};
pub use run::{
    config_hash, load_report, run_experiment, CellReport, CellResult, CellTiming, Failure,
    RunOptions, RunOutput, RunReport, SeedReport, ENGINE_VERSION, REPORT_VERSION,
};
