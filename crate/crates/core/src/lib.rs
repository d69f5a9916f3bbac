//! Learning partially unknown port-Hamiltonian systems with Gaussian processes and
//! synthesizing robust IDA-PBC controllers from the learned posterior.
//!
//! * [`phs`]: plant models, RK4 simulation and trajectories.
//! * [`gp`]: the structured GP-PHS kernel, marginal-likelihood training and posterior queries.
//! * [`control`]: left annihilators, desired Hamiltonian design, the robust control law and
//!   grid certificates.
//! * [`experiment`]: the configuration-driven microactuator experiment.

pub mod control;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod numeric;
pub mod optim;
pub mod phs;

pub use error::{Error, Result};
