//! Robust IDA-PBC on top of a learned (or exact) port-Hamiltonian model.
//!
//! The design follows the non-parametrized matching route: the rows of `J_d − R_d` selected by the
//! left annihilator of `G` are copied from the model, the actuated rows get a new dissipation
//! `1/r_d`, and `H_d` is the model Hamiltonian plus `(x_k − c)²` on the actuated coordinate.

mod annihilator;
mod certify;
mod design;
mod law;
mod model;

pub use annihilator::{left_annihilator, Annihilator};
pub use certify::{certify, BoxDomain, Certificate, Grid, DEFAULT_TOL_MATCH};
pub use design::{desired_hamiltonian, solve_equilibrium_shift, DesignTemplate, DesiredDesign};
pub use law::{
    control_input, matching_residual, robustness_margin, robustness_margin_with_variance, ClosedLoop, Controller,
    DesiredDynamics,
};
pub use model::{ControlModel, Exact};

#[cfg(test)]
pub(crate) mod testing {
    use nalgebra::{DMatrix, DVector};

    use super::{ControlModel, Exact};
    use crate::phs::{Microactuator, MicroactuatorParams};

    pub fn plant() -> Microactuator {
        Microactuator::new(MicroactuatorParams::default()).unwrap()
    }

    pub fn exact() -> Exact<Microactuator> {
        Exact::new(plant())
    }

    /// The exact plant with a synthetic, state-dependent variance.
    pub struct Uncertain(pub Exact<Microactuator>);

    impl ControlModel for Uncertain {
        fn state_dim(&self) -> usize {
            3
        }
        fn input_dim(&self) -> usize {
            1
        }
        fn structure_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
            self.0.structure_matrix(x)
        }
        fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
            self.0.input_matrix(x)
        }
        fn has_constant_input_matrix(&self) -> bool {
            true
        }
        fn hamiltonian(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
            self.0.hamiltonian(x)
        }
        fn variance(&self, x: &DVector<f64>) -> DVector<f64> {
            x.map(|v| 0.01 * (1.0 + v * v))
        }
        fn digest(&self) -> String {
            "uncertain".into()
        }
    }
}
