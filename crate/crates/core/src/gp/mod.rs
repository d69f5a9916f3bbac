//! GP-PHS: a Gaussian-process prior over the Hamiltonian pushed through the PHS structure.

mod data;
mod hyper;
mod kernel;
mod likelihood;
mod model;
mod structure;
mod train;

pub use data::{estimate_derivatives, savgol_coefficients, RegressionDataset, TrajectoryDataset};
pub use hyper::Hyperparameters;
pub use kernel::{
    gram_matrix, phs_kernel_block, se_gradient_wrt_second, se_hessian, se_kernel, BASE_JITTER, MAX_JITTER,
};
pub use likelihood::{mean_adjusted_outputs, nlml};
pub use model::{GpPhsModel, ModelDocument, MODEL_SCHEMA_VERSION};
pub use structure::PhsStructure;
pub use train::{initial_hyperparameters, train, StartOutcome, TrainSettings, TrainingRun};
