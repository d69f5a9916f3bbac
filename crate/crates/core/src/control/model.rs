use nalgebra::{DMatrix, DVector};

use crate::gp::GpPhsModel;
use crate::phs::PortHamiltonian;

/// What the controller needs from a model of the plant.
pub trait ControlModel: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// `Ĵ(x) − R̂(x)`.
    fn structure_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn has_constant_input_matrix(&self) -> bool;
    /// Mean Hamiltonian value and gradient.
    fn hamiltonian(&self, x: &DVector<f64>) -> (f64, DVector<f64>);
    /// Mean of `ẋ` with `u = 0`.
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        self.structure_matrix(x) * self.hamiltonian(x).1
    }
    /// Per-dimension variance of `ẋ`.
    fn variance(&self, x: &DVector<f64>) -> DVector<f64>;
    fn variance_batch(&self, xs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        xs.iter().map(|x| self.variance(x)).collect()
    }
    /// Identifies the model in certificates.
    fn digest(&self) -> String;
}

impl ControlModel for GpPhsModel {
    fn state_dim(&self) -> usize {
        GpPhsModel::state_dim(self)
    }
    fn input_dim(&self) -> usize {
        GpPhsModel::input_dim(self)
    }
    fn structure_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.structure().jr(x, self.hyperparameters())
    }
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        GpPhsModel::input_matrix(self, x)
    }
    fn has_constant_input_matrix(&self) -> bool {
        self.structure().has_constant_input_matrix()
    }
    fn hamiltonian(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        self.posterior_hamiltonian(x)
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        self.drift_mean(x)
    }
    fn variance(&self, x: &DVector<f64>) -> DVector<f64> {
        self.posterior_variance(x)
    }
    fn variance_batch(&self, xs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        self.posterior_variance_batch(xs)
    }
    fn digest(&self) -> String {
        self.gram_digest().to_string()
    }
}

/// A known plant used as a model with zero uncertainty.
#[derive(Debug, Clone)]
pub struct Exact<P> {
    pub plant: P,
    /// Whether `G` may be treated as constant; the plant trait cannot tell.
    pub constant_input: bool,
}

impl<P> Exact<P> {
    pub fn new(plant: P) -> Self {
        Self {
            plant,
            constant_input: true,
        }
    }
}

impl<P: PortHamiltonian> ControlModel for Exact<P> {
    fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }
    fn input_dim(&self) -> usize {
        self.plant.input_dim()
    }
    fn structure_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.plant.interconnection(x) - self.plant.dissipation(x)
    }
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.plant.input_matrix(x)
    }
    fn has_constant_input_matrix(&self) -> bool {
        self.constant_input
    }
    fn hamiltonian(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.plant.hamiltonian(x), self.plant.grad_hamiltonian(x))
    }
    fn variance(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
    fn digest(&self) -> String {
        "exact".to_string()
    }
}
