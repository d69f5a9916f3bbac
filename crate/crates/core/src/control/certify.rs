use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{desired_hamiltonian, matching_residual, robustness_margin_with_variance, ControlModel, DesiredDesign};
use crate::error::{check_dim, Error, Result};

/// Default matching tolerance.
pub const DEFAULT_TOL_MATCH: f64 = 1e-6;
/// Nodes whose dissipation `∇H_dᵀR_d∇H_d` is at most this are counted as dissipation-free.
const DISSIPATION_ZERO: f64 = 1e-12;
const CHUNK: usize = 512;

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let domain = Self { lower, upper };
        domain.validate()?;
        Ok(domain)
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("box upper bounds", self.lower.len(), self.upper.len())?;
        if self
            .lower
            .iter()
            .zip(&self.upper)
            .any(|(l, u)| !(l < u && l.is_finite() && u.is_finite()))
        {
            return Err(Error::InvalidArgument("box bounds must satisfy lower < upper".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim() && (0..x.len()).all(|i| self.lower[i] <= x[i] && x[i] <= self.upper[i])
    }

    pub fn centre(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| 0.5 * (self.lower[i] + self.upper[i]))
    }
}

/// Tensor grid over a box, nodes ordered lexicographically (first axis slowest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub domain: BoxDomain,
    pub counts: Vec<usize>,
}

impl Grid {
    pub fn new(domain: BoxDomain, counts: Vec<usize>) -> Result<Self> {
        domain.validate()?;
        check_dim("grid counts", domain.dim(), counts.len())?;
        if counts.iter().any(|&c| c < 2) {
            return Err(Error::InvalidArgument("grids need at least 2 points per axis".into()));
        }
        Ok(Self { domain, counts })
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node with lexicographic index `k`.
    pub fn node(&self, mut k: usize) -> DVector<f64> {
        let d = self.counts.len();
        let mut x = DVector::zeros(d);
        for axis in (0..d).rev() {
            let c = self.counts[axis];
            let i = k % c;
            k /= c;
            let (lo, hi) = (self.domain.lower[axis], self.domain.upper[axis]);
            x[axis] = if i + 1 == c {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (c - 1) as f64
            };
        }
        x
    }
}

/// Grid evaluation of the matching equation and the robustness inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub grid: Grid,
    pub beta: Vec<f64>,
    pub tol_match: f64,
    pub max_matching_residual: f64,
    pub worst_residual_point: Vec<f64>,
    pub min_robustness_margin: f64,
    pub worst_margin_point: Vec<f64>,
    /// Nodes with a negative robustness margin.
    pub violations: usize,
    /// Nodes where `∇H_dᵀR_d∇H_d` vanishes; reported without any invariant-set claim.
    pub dissipation_zero_nodes: usize,
    pub passed: bool,
    pub model_digest: String,
}

impl Certificate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Evaluates the ∞-norm matching residual and the robustness margin at every grid node.
/// Witness ties go to the lexicographically first node.
pub fn certify<M: ControlModel + ?Sized>(
    model: &M,
    design: &DesiredDesign,
    beta: &[f64],
    grid: &Grid,
    tol_match: f64,
) -> Result<Certificate> {
    let n = model.state_dim();
    check_dim("β", n, beta.len())?;
    check_dim("grid dimension", n, grid.counts.len())?;
    if beta.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(Error::InvalidArgument("β must be non-negative".into()));
    }
    let total = grid.len();
    let mut max_res = f64::NEG_INFINITY;
    let mut worst_res = Vec::new();
    let mut min_margin = f64::INFINITY;
    let mut worst_margin = Vec::new();
    let mut violations = 0;
    let mut dissipation_zero = 0;
    let mut start = 0;
    while start < total {
        let end = (start + CHUNK).min(total);
        let nodes: Vec<DVector<f64>> = (start..end).map(|k| grid.node(k)).collect();
        let variances = model.variance_batch(&nodes);
        for (x, var) in nodes.iter().zip(&variances) {
            let res = matching_residual(model, design, x).amax();
            if res > max_res {
                max_res = res;
                worst_res = x.iter().copied().collect();
            }
            let margin = robustness_margin_with_variance(model, design, beta, x, var);
            if margin < min_margin {
                min_margin = margin;
                worst_margin = x.iter().copied().collect();
            }
            if margin < 0.0 {
                violations += 1;
            }
            let (_, grad) = desired_hamiltonian(design, model, x);
            if grad.dot(&(&design.rd * &grad)) <= DISSIPATION_ZERO {
                dissipation_zero += 1;
            }
        }
        start = end;
    }
    Ok(Certificate {
        grid: grid.clone(),
        beta: beta.to_vec(),
        tol_match,
        passed: max_res <= tol_match && min_margin >= 0.0,
        max_matching_residual: max_res,
        worst_residual_point: worst_res,
        min_robustness_margin: min_margin,
        worst_margin_point: worst_margin,
        violations,
        dissipation_zero_nodes: dissipation_zero,
        model_digest: model.digest(),
    })
}
