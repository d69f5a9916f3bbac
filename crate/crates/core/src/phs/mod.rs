//! Port-Hamiltonian plants: `ẋ = [J(x) − R(x)]∇H(x) + G(x)u`, `y = G(x)ᵀ∇H(x)`.

mod microactuator;
mod simulate;
mod trajectory;

pub use microactuator::{Microactuator, MicroactuatorParams};
pub use simulate::{sample, simulate, VectorField};
pub use trajectory::Trajectory;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::numeric::{fd_gradient, min_symmetric_eigenvalue, skew_violation};

/// Tolerance on `‖J + Jᵀ‖_∞` for a structurally valid plant.
pub const SKEW_TOLERANCE: f64 = 1e-12;
/// Smallest admissible eigenvalue of `R`.
pub const PSD_TOLERANCE: f64 = -1e-10;
/// Relative tolerance between the analytic gradient and central differences of `H`.
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

/// An input-state-output port-Hamiltonian system.
///
/// Implementors are immutable, so a plant can be shared freely between threads.
pub trait PortHamiltonian: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Interconnection matrix `J(x)`; skew-symmetric.
    fn interconnection(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Dissipation matrix `R(x)`; symmetric positive semidefinite.
    fn dissipation(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Port matrix `G(x)`, `n × m`.
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn hamiltonian(&self, x: &DVector<f64>) -> f64;
    fn grad_hamiltonian(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// Evaluates `[J(x) − R(x)]∇H(x) + G(x)u`.
pub fn eval_dynamics<P: PortHamiltonian + ?Sized>(sys: &P, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("state", sys.state_dim(), x.len())?;
    check_dim("input", sys.input_dim(), u.len())?;
    let jr = sys.interconnection(x) - sys.dissipation(x);
    let mut dx = jr * sys.grad_hamiltonian(x);
    if !u.is_empty() {
        dx += sys.input_matrix(x) * u;
    }
    Ok(dx)
}

/// Evaluates the collocated output `y = G(x)ᵀ∇H(x)`.
pub fn output_port<P: PortHamiltonian + ?Sized>(sys: &P, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("state", sys.state_dim(), x.len())?;
    Ok(sys.input_matrix(x).transpose() * sys.grad_hamiltonian(x))
}

/// Structural findings over a set of probe states.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub probes: usize,
    /// Largest `‖J(x) + J(x)ᵀ‖_∞`.
    pub max_skew_violation: f64,
    /// Smallest eigenvalue of `R(x)` (symmetric part) over all probes.
    pub min_dissipation_eigenvalue: f64,
    /// Largest relative mismatch between `∇H` and central differences of `H`.
    pub max_gradient_mismatch: f64,
}

impl StructureReport {
    pub fn is_valid(&self) -> bool {
        self.max_skew_violation <= SKEW_TOLERANCE
            && self.min_dissipation_eigenvalue >= PSD_TOLERANCE
            && self.max_gradient_mismatch <= GRADIENT_TOLERANCE
    }
}

/// Checks skew-symmetry of `J`, positive semidefiniteness of `R` and the supplied gradient of `H`
/// at every probe.
pub fn check_structure<P: PortHamiltonian + ?Sized>(sys: &P, probes: &[DVector<f64>]) -> Result<StructureReport> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument(
            "check_structure needs at least one probe".into(),
        ));
    }
    let mut report = StructureReport {
        probes: probes.len(),
        max_skew_violation: 0.0,
        min_dissipation_eigenvalue: f64::INFINITY,
        max_gradient_mismatch: 0.0,
    };
    for x in probes {
        check_dim("probe", sys.state_dim(), x.len())?;
        report.max_skew_violation = report.max_skew_violation.max(skew_violation(&sys.interconnection(x)));
        report.min_dissipation_eigenvalue = report
            .min_dissipation_eigenvalue
            .min(min_symmetric_eigenvalue(&sys.dissipation(x)));
        let analytic = sys.grad_hamiltonian(x);
        let numeric = fd_gradient(|v| sys.hamiltonian(v), x, 1e-5);
        let mismatch = (&analytic - &numeric).amax() / analytic.amax().max(1.0);
        report.max_gradient_mismatch = report.max_gradient_mismatch.max(mismatch);
    }
    Ok(report)
}

/// Linear port-Hamiltonian system with constant matrices and `H(x) = ½xᵀQx`.
#[derive(Debug, Clone)]
pub struct QuadraticPhs {
    pub j: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl QuadraticPhs {
    pub fn new(j: DMatrix<f64>, r: DMatrix<f64>, g: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        for (what, m) in [("J", &j), ("R", &r), ("Q", &q)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidArgument(format!("{what} must be {n}x{n}")));
            }
        }
        check_dim("rows of G", n, g.nrows())?;
        Ok(Self { j, r, g, q })
    }

    /// `ẋ = −x` written as `H = ½x²`, `J = 0`, `R = 1`, `G = 0`.
    pub fn scalar_decay() -> Self {
        Self {
            j: DMatrix::zeros(1, 1),
            r: DMatrix::identity(1, 1),
            g: DMatrix::zeros(1, 0),
            q: DMatrix::identity(1, 1),
        }
    }
}

impl PortHamiltonian for QuadraticPhs {
    fn state_dim(&self) -> usize {
        self.q.nrows()
    }
    fn input_dim(&self) -> usize {
        self.g.ncols()
    }
    fn interconnection(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.j.clone()
    }
    fn dissipation(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.r.clone()
    }
    fn input_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.g.clone()
    }
    fn hamiltonian(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x))
    }
    fn grad_hamiltonian(&self, x: &DVector<f64>) -> DVector<f64> {
        0.5 * (&self.q + self.q.transpose()) * x
    }
}
