use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::certify::BoxDomain;
use super::{left_annihilator, Annihilator, ControlModel};
use crate::error::{check_dim, Error, Result};
use crate::numeric::{fd_jacobian, matrix_from_rows, matrix_rows, skew_violation};

const STATIONARITY_TOLERANCE: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 100;
const FD_STEP: f64 = 1e-6;

/// Choices that fix a desired closed loop before the equilibrium shift is solved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTemplate {
    /// Desired resistance on the actuated coordinates; their `R_d` entry is `1/r_d`.
    pub r_d: f64,
    /// Coordinate whose equilibrium value is prescribed.
    pub target_coordinate: usize,
    /// Coordinate carrying the shift `ζ(x_k) = (x_k − c)²`.
    pub shift_coordinate: usize,
    /// Newton starts for the shift coordinate.
    pub shift_starts: Vec<f64>,
    pub domain: BoxDomain,
}

impl DesignTemplate {
    /// The microactuator design: prescribe `x₁`, shift on `x₃`, `r_d = 2/3`, box `[−2, 2]³`.
    pub fn microactuator() -> Self {
        Self {
            r_d: 2.0 / 3.0,
            target_coordinate: 0,
            shift_coordinate: 2,
            shift_starts: vec![0.5, 1.0, 1.5, 2.0],
            domain: BoxDomain::cube(3, -2.0, 2.0),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        check_dim("design domain", n, self.domain.dim())?;
        if !(self.r_d > 0.0 && self.r_d.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "r_d must be positive, got {}",
                self.r_d
            )));
        }
        if self.target_coordinate >= n || self.shift_coordinate >= n {
            return Err(Error::InvalidArgument("design coordinates out of range".into()));
        }
        if self.target_coordinate == self.shift_coordinate {
            return Err(Error::InvalidArgument(
                "the prescribed and shifted coordinates must differ".into(),
            ));
        }
        if self.shift_starts.is_empty() {
            return Err(Error::InvalidArgument("no equilibrium-shift starts".into()));
        }
        Ok(())
    }
}

/// A solved design: constant `J_d`, `R_d`, the shift `ζ` and the equilibrium `x_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiredDesign {
    #[serde(with = "rows")]
    pub jd: DMatrix<f64>,
    #[serde(with = "rows")]
    pub rd: DMatrix<f64>,
    #[serde(with = "rows")]
    pub gperp: DMatrix<f64>,
    pub shift_coordinate: usize,
    pub c: f64,
    pub x_d: Vec<f64>,
    pub domain: BoxDomain,
}

impl DesiredDesign {
    /// `J_d − R_d`.
    pub fn closed_loop_matrix(&self) -> DMatrix<f64> {
        &self.jd - &self.rd
    }

    pub fn state_dim(&self) -> usize {
        self.jd.nrows()
    }

    pub fn equilibrium(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x_d)
    }

    pub fn annihilator(&self) -> Annihilator {
        Annihilator {
            gperp: self.gperp.clone(),
        }
    }

    /// Gradient of `ζ`.
    pub fn shift_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let k = self.shift_coordinate;
        let mut g = DVector::zeros(x.len());
        g[k] = 2.0 * (x[k] - self.c);
        g
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.jd.nrows();
        if self.jd.shape() != (n, n) || self.rd.shape() != (n, n) || self.gperp.ncols() != n {
            return Err(Error::InvalidArgument(
                "design matrices have inconsistent shapes".into(),
            ));
        }
        check_dim("equilibrium", n, self.x_d.len())?;
        check_dim("design domain", n, self.domain.dim())?;
        if self.shift_coordinate >= n {
            return Err(Error::InvalidArgument("shift coordinate out of range".into()));
        }
        if skew_violation(&self.jd) > 1e-12 {
            return Err(Error::InvalidArgument("J_d is not skew-symmetric".into()));
        }
        let off_diagonal = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .any(|(i, j)| self.rd[(i, j)] != 0.0);
        if off_diagonal || self.rd.diagonal().iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument(
                "R_d must be diagonal with non-negative entries".into(),
            ));
        }
        if !self.domain.contains(&self.equilibrium()) {
            return Err(Error::InvalidArgument("x_d lies outside the design domain".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let design: Self = serde_json::from_str(text)?;
        design.validate()?;
        Ok(design)
    }
}

/// `H_d(x) = Ĥ(x) + (x_k − c)²` and its gradient.
pub fn desired_hamiltonian<M: ControlModel + ?Sized>(
    design: &DesiredDesign,
    model: &M,
    x: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let (h, grad) = model.hamiltonian(x);
    let k = design.shift_coordinate;
    let value = h + (x[k] - design.c).powi(2);
    (value, grad + design.shift_gradient(x))
}

/// Builds `J_d − R_d` from the model and finds `(c, x_d)` with `∇H_d(x_d) = 0` and the
/// prescribed coordinate fixed at `target`.
///
/// Unactuated rows of `J_d − R_d` equal those of `Ĵ − R̂`; actuated rows mirror the unactuated
/// columns (keeping `J_d` skew) and carry `−1/r_d` on the diagonal.
pub fn solve_equilibrium_shift<M: ControlModel + ?Sized>(
    model: &M,
    template: &DesignTemplate,
    target: f64,
) -> Result<DesiredDesign> {
    let n = model.state_dim();
    template.validate(n)?;
    if !model.has_constant_input_matrix() {
        return Err(Error::StateDependentInput);
    }
    let lo = &template.domain.lower;
    let hi = &template.domain.upper;
    let t = template.target_coordinate;
    if !(lo[t]..=hi[t]).contains(&target) {
        return Err(Error::InvalidArgument(format!(
            "target {target} lies outside the design domain"
        )));
    }

    let centre = template.domain.centre();
    let g = model.input_matrix(&centre);
    let annihilator = left_annihilator(&g)?;
    let actuated: Vec<usize> = (0..n).filter(|&i| g.row(i).amax() > 0.0).collect();
    let mut a = model.structure_matrix(&centre);
    for &i in &actuated {
        for j in 0..n {
            a[(i, j)] = if actuated.contains(&j) {
                if i == j {
                    -1.0 / template.r_d
                } else {
                    0.0
                }
            } else {
                -a[(j, i)]
            };
        }
    }
    let jd = (&a - a.transpose()) * 0.5;
    let rd = -(&a + a.transpose()) * 0.5;
    let scale = rd.amax().max(1.0);
    for i in 0..n {
        for j in 0..n {
            if i != j && rd[(i, j)].abs() > 1e-12 * scale {
                return Err(Error::InvalidArgument(
                    "model structure gives a non-diagonal R_d for this template".into(),
                ));
            }
        }
    }
    let rd = DMatrix::from_diagonal(&rd.diagonal());
    if rd.diagonal().iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument(
            "model structure gives a negative R_d entry".into(),
        ));
    }

    let mut design = DesiredDesign {
        jd,
        rd,
        gperp: annihilator.gperp,
        shift_coordinate: template.shift_coordinate,
        c: 0.0,
        x_d: vec![0.0; n],
        domain: template.domain.clone(),
    };

    // Unknowns: every coordinate except the prescribed one, then c.
    let free: Vec<usize> = (0..n).filter(|&i| i != t).collect();
    let unpack = |z: &DVector<f64>| -> (DVector<f64>, f64) {
        let mut x = DVector::zeros(n);
        x[t] = target;
        for (k, &i) in free.iter().enumerate() {
            x[i] = z[k];
        }
        (x, z[n - 1])
    };
    let residual = |z: &DVector<f64>| -> DVector<f64> {
        let (x, c) = unpack(z);
        let k = template.shift_coordinate;
        let mut grad = model.hamiltonian(&x).1;
        grad[k] += 2.0 * (x[k] - c);
        grad
    };

    let mut saddle: Option<Error> = None;
    for &start in &template.shift_starts {
        let mut z = DVector::zeros(n);
        for (k, &i) in free.iter().enumerate() {
            z[k] = if i == template.shift_coordinate {
                start
            } else {
                centre[i]
            };
        }
        z[n - 1] = start;
        let Some(z) = damped_newton(&residual, z) else {
            log::debug!("equilibrium start {start}: Newton did not converge");
            continue;
        };
        let (x, c) = unpack(&z);
        if !template.domain.contains(&x) {
            log::debug!("equilibrium start {start}: stationary point outside the domain");
            continue;
        }
        design.c = c;
        design.x_d = x.iter().copied().collect();
        let hessian = fd_jacobian(|p| desired_hamiltonian(&design, model, p).1, &x, FD_STEP);
        let sym = (&hessian + hessian.transpose()) * 0.5;
        let min_eigenvalue = sym.symmetric_eigenvalues().min();
        if min_eigenvalue > 0.0 {
            return Ok(design);
        }
        saddle.get_or_insert(Error::SaddleRejected {
            point: design.x_d.clone(),
            min_eigenvalue,
        });
    }
    Err(saddle.unwrap_or(Error::DesignInfeasible))
}

fn damped_newton(f: &impl Fn(&DVector<f64>) -> DVector<f64>, mut z: DVector<f64>) -> Option<DVector<f64>> {
    let mut r = f(&z);
    for _ in 0..NEWTON_MAX_ITERS {
        if !r.iter().all(|v| v.is_finite()) {
            return None;
        }
        if r.amax() <= STATIONARITY_TOLERANCE {
            return Some(z);
        }
        let jac = fd_jacobian(f, &z, FD_STEP);
        let step = jac.lu().solve(&(-&r))?;
        let norm = r.norm();
        let mut lambda = 1.0;
        loop {
            let trial = &z + &step * lambda;
            let rt = f(&trial);
            if rt.norm() < norm {
                z = trial;
                r = rt;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-10 {
                return None;
            }
        }
    }
    (r.amax() <= STATIONARITY_TOLERANCE).then_some(z)
}

mod rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Shaped {
        cols: usize,
        rows: Vec<Vec<f64>>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        Shaped {
            cols: m.ncols(),
            rows: matrix_rows(m),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let shaped = Shaped::deserialize(d)?;
        matrix_from_rows(&shaped.rows, shaped.cols).ok_or_else(|| serde::de::Error::custom("ragged matrix rows"))
    }
}
