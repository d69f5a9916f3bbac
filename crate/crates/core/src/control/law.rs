use nalgebra::{DMatrix, DVector};

use super::{desired_hamiltonian, ControlModel, DesiredDesign};
use crate::error::{check_dim, Error, Result};
use crate::phs::{eval_dynamics, PortHamiltonian, VectorField};

/// `G⊥·[μ(ẋ)|_{u=0} − (J_d − R_d)∇H_d]`.
pub fn matching_residual<M: ControlModel + ?Sized>(
    model: &M,
    design: &DesiredDesign,
    x: &DVector<f64>,
) -> DVector<f64> {
    let (_, grad) = desired_hamiltonian(design, model, x);
    &design.gperp * (model.drift(x) - design.closed_loop_matrix() * grad)
}

/// `∇H_dᵀR_d∇H_d − Σᵢ βᵢ·var(ẋᵢ)·|∂ᵢH_d|`: the worst case of the dissipation inequality over
/// perturbations `|ηᵢ| ≤ βᵢ·var(ẋᵢ)`. Non-negative values certify the inequality at `x`.
pub fn robustness_margin<M: ControlModel + ?Sized>(
    model: &M,
    design: &DesiredDesign,
    beta: &[f64],
    x: &DVector<f64>,
) -> f64 {
    robustness_margin_with_variance(model, design, beta, x, &model.variance(x))
}

/// [`robustness_margin`] with a precomputed posterior variance.
pub fn robustness_margin_with_variance<M: ControlModel + ?Sized>(
    model: &M,
    design: &DesiredDesign,
    beta: &[f64],
    x: &DVector<f64>,
    variance: &DVector<f64>,
) -> f64 {
    let (_, grad) = desired_hamiltonian(design, model, x);
    let dissipation = grad.dot(&(&design.rd * &grad));
    let bound: f64 = (0..grad.len()).map(|i| beta[i] * variance[i] * grad[i].abs()).sum();
    dissipation - bound
}

/// The control law with its pseudo-inverse `(ĜᵀĜ)⁻¹Ĝᵀ` precomputed (constant `Ĝ`).
#[derive(Debug, Clone)]
pub struct Controller<'a, M: ?Sized> {
    model: &'a M,
    design: &'a DesiredDesign,
    pinv: DMatrix<f64>,
    closed_loop: DMatrix<f64>,
}

impl<'a, M: ControlModel + ?Sized> Controller<'a, M> {
    pub fn new(model: &'a M, design: &'a DesiredDesign) -> Result<Self> {
        check_dim("design state dimension", model.state_dim(), design.state_dim())?;
        if !model.has_constant_input_matrix() {
            return Err(Error::StateDependentInput);
        }
        let x_d = design.equilibrium();
        let g = model.input_matrix(&x_d);
        let gram = g.transpose() * &g;
        let chol = gram.cholesky().ok_or_else(|| Error::RankLoss {
            point: design.x_d.clone(),
        })?;
        Ok(Self {
            model,
            design,
            pinv: chol.solve(&g.transpose()),
            closed_loop: design.closed_loop_matrix(),
        })
    }

    pub fn model(&self) -> &'a M {
        self.model
    }

    pub fn design(&self) -> &'a DesiredDesign {
        self.design
    }

    /// `u = (ĜᵀĜ)⁻¹Ĝᵀ((J_d − R_d)∇H_d − μ(ẋ)|_{u=0})`.
    pub fn input(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.model.state_dim(), x.len())?;
        let (_, grad) = desired_hamiltonian(self.design, self.model, x);
        let mismatch = &self.closed_loop * grad - self.model.drift(x);
        Ok(&self.pinv * mismatch)
    }
}

/// One-shot form of [`Controller::input`].
pub fn control_input<M: ControlModel + ?Sized>(
    model: &M,
    design: &DesiredDesign,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    Controller::new(model, design)?.input(x)
}

/// The true plant driven by the control law; an autonomous vector field (input dimension 0).
pub struct ClosedLoop<'a, P: ?Sized, M: ?Sized> {
    pub plant: &'a P,
    pub controller: Controller<'a, M>,
}

impl<'a, P: PortHamiltonian + ?Sized, M: ControlModel + ?Sized> ClosedLoop<'a, P, M> {
    pub fn new(plant: &'a P, model: &'a M, design: &'a DesiredDesign) -> Result<Self> {
        check_dim("plant state dimension", model.state_dim(), plant.state_dim())?;
        check_dim("plant input dimension", model.input_dim(), plant.input_dim())?;
        Ok(Self {
            plant,
            controller: Controller::new(model, design)?,
        })
    }
}

impl<P: PortHamiltonian + ?Sized, M: ControlModel + ?Sized> VectorField for ClosedLoop<'_, P, M> {
    fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }
    fn input_dim(&self) -> usize {
        0
    }
    fn rhs(&self, x: &DVector<f64>, _u: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.controller.input(x)?;
        eval_dynamics(self.plant, x, &u)
    }
}

/// The target closed loop `ẋ = (J_d − R_d)∇H_d(x)`.
pub struct DesiredDynamics<'a, M: ?Sized> {
    pub model: &'a M,
    pub design: &'a DesiredDesign,
}

impl<M: ControlModel + ?Sized> VectorField for DesiredDynamics<'_, M> {
    fn state_dim(&self) -> usize {
        self.design.state_dim()
    }
    fn input_dim(&self) -> usize {
        0
    }
    fn rhs(&self, x: &DVector<f64>, _u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.design.state_dim(), x.len())?;
        let (_, grad) = desired_hamiltonian(self.design, self.model, x);
        Ok(self.design.closed_loop_matrix() * grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::testing::{exact, plant, Uncertain};
    use crate::control::{solve_equilibrium_shift, DesignTemplate, Exact};
    use crate::phs::{simulate, QuadraticPhs};
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design() -> DesiredDesign {
        solve_equilibrium_shift(&exact(), &DesignTemplate::microactuator(), 0.5).unwrap()
    }

    fn random_points(seed: u64, count: usize) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)))
            .collect()
    }

    #[test]
    fn matching_identity_for_template_design() {
        let (model, design) = (exact(), design());
        for x in random_points(0, 200) {
            assert!(matching_residual(&model, &design, &x).amax() <= 1e-8);
        }
        assert_eq!(matching_residual(&model, &design, &design.equilibrium()).amax(), 0.0);
    }

    #[test]
    fn perturbed_dissipation_shows_in_residual() {
        let model = exact();
        let mut design = design();
        design.rd[(1, 1)] += 1.0;
        for x in random_points(1, 50) {
            let (_, grad) = desired_hamiltonian(&design, &model, &x);
            let res = matching_residual(&model, &design, &x);
            assert!(res[0].abs() <= 1e-12);
            assert!((res[1] - grad[1]).abs() <= 1e-12 * grad[1].abs().max(1.0));
        }
    }

    #[test]
    fn margin_matches_corner_enumeration() {
        let model = Uncertain(exact());
        let design = design();
        let beta = [2.0, 1.5, 0.5];
        for x in random_points(2, 200) {
            let (_, grad) = desired_hamiltonian(&design, &model, &x);
            let var = model.variance(&x);
            let dissipation = grad.dot(&(&design.rd * &grad));
            let mut worst = f64::INFINITY;
            for corner in 0..8u32 {
                let eta = DVector::from_fn(3, |i, _| {
                    let s = if corner >> i & 1 == 1 { 1.0 } else { -1.0 };
                    s * beta[i] * var[i]
                });
                worst = worst.min(dissipation - grad.dot(&eta));
            }
            let margin = robustness_margin(&model, &design, &beta, &x);
            assert!((margin - worst).abs() <= 1e-12 * worst.abs().max(1.0));
        }
    }

    #[test]
    fn margin_without_uncertainty_is_dissipation() {
        let (model, design) = (exact(), design());
        for x in random_points(3, 50) {
            let (_, grad) = desired_hamiltonian(&design, &model, &x);
            let margin = robustness_margin(&model, &design, &[2.0; 3], &x);
            assert_eq!(margin, grad.dot(&(&design.rd * &grad)));
            assert!(margin >= 0.0);
        }
        assert_eq!(
            robustness_margin(&model, &design, &[2.0; 3], &design.equilibrium()),
            0.0
        );
    }

    #[test]
    fn control_input_closed_form() {
        let (model, design) = (exact(), design());
        let controller = Controller::new(&model, &design).unwrap();
        for x in random_points(4, 50) {
            let (_, grad) = desired_hamiltonian(&design, &model, &x);
            let mismatch = design.closed_loop_matrix() * grad - model.drift(&x);
            let u = controller.input(&x).unwrap();
            assert!((u[0] - mismatch[2]).abs() <= 1e-12 * mismatch[2].abs().max(1.0));
        }
        // At x_d the law supplies the holding voltage x₁x₃.
        let hold = controller.input(&design.equilibrium()).unwrap()[0];
        assert!((hold - 0.5 * design.x_d[2]).abs() < 1e-12);
    }

    #[test]
    fn control_input_is_linear_in_mismatch() {
        // Scaling H by 2 scales both the drift and ∇H_d − ζ′; with c shifted accordingly the
        // mismatch doubles.
        let design = design();
        let model = exact();
        let x = dvector![0.3, -0.4, 1.2];
        let u = control_input(&model, &design, &x).unwrap();
        let controller = Controller::new(&model, &design).unwrap();
        assert_eq!(controller.input(&x).unwrap(), u);
        let (_, grad) = desired_hamiltonian(&design, &model, &x);
        let mismatch = design.closed_loop_matrix() * &grad - model.drift(&x);
        let pinv = dvector![0.0, 0.0, 1.0].transpose();
        assert!(((&pinv * &mismatch * 2.0)[0] - 2.0 * u[0]).abs() < 1e-12);
    }

    #[test]
    fn singular_input_matrix_rejected() {
        let quad = QuadraticPhs::new(
            nalgebra::DMatrix::zeros(3, 3),
            nalgebra::DMatrix::identity(3, 3),
            nalgebra::DMatrix::zeros(3, 1),
            nalgebra::DMatrix::identity(3, 3),
        )
        .unwrap();
        let model = Exact::new(quad);
        assert!(matches!(
            Controller::new(&model, &design()),
            Err(Error::RankLoss { .. })
        ));
    }

    #[test]
    fn oracle_closed_loop_follows_desired_dynamics() {
        let (model, design) = (exact(), design());
        let plant = plant();
        let closed = ClosedLoop::new(&plant, &model, &design).unwrap();
        let desired = DesiredDynamics {
            model: &model,
            design: &design,
        };
        let x0 = dvector![0.0, 0.0, 1.0];
        let none = |_: f64| DVector::zeros(0);
        let a = simulate(&closed, &x0, none, 1.0, 1e-3).unwrap();
        let b = simulate(&desired, &x0, none, 1.0, 1e-3).unwrap();
        for (xa, xb) in a.states.iter().zip(&b.states) {
            assert!((xa - xb).amax() < 1e-9);
        }
    }
}
