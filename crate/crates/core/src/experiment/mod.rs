//! Configuration-driven microactuator experiment: data generation, training, open-loop
//! validation, controller synthesis, certification, closed-loop simulation and the data-size
//! sweep. Stage results are cached by input digest so interrupted runs resume.

mod config;
mod pipeline;
mod report;

pub use config::{
    derive_seed, ClosedLoopConfig, DesignConfig, Excitation, ExperimentConfig, FilterSettings, Sampling, SweepConfig,
    TrainingConfig, CONFIG_SCHEMA_VERSION,
};
pub use pipeline::{
    certify_design, closed_loop, filter_data, generate_data, open_loop, plant, read_model_artifact,
    resistance_estimate, sample_times, structure, synthesize, train_model, ClosedLoopRun, Experiment, OpenLoop,
    StageStatus, TrainedModel,
};
pub use report::{CertificateSummary, ClosedLoopSummary, DesignSummary, RunReport, SweepRow, REPORT_SCHEMA_VERSION};
