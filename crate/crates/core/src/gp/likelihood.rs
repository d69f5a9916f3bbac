use nalgebra::{DMatrix, DVector};

use super::kernel::{factor_gram_unhashed, GramFactor};
use super::{Hyperparameters, PhsStructure, RegressionDataset};
use crate::error::{check_dim, Result};

/// Stacks `ẋ(t_i) − Ĝ(x(t_i))u(t_i)` point-major: all `n` dimensions of sample 1, then sample 2, …
pub fn mean_adjusted_outputs(
    structure: &PhsStructure,
    reg: &RegressionDataset,
    hyper: &Hyperparameters,
) -> Result<DVector<f64>> {
    let n = structure.state_dim();
    check_dim("regression state dimension", n, reg.state_dim())?;
    check_dim("regression input dimension", structure.input_dim(), reg.input_dim())?;
    let mut out = DVector::zeros(n * reg.len());
    for k in 0..reg.len() {
        let x = reg.states.column(k).into_owned();
        let mut target = reg.derivatives.column(k).into_owned();
        if reg.input_dim() > 0 {
            target -= structure.input_matrix(&x, hyper) * reg.inputs.column(k);
        }
        out.rows_mut(k * n, n).copy_from(&target);
    }
    Ok(out)
}

/// `½yᵀK⁻¹y + ½log|K| + (len/2)·log 2π` from a lower Cholesky factor of `K`.
pub(crate) fn gaussian_nll(chol: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let z = chol
        .solve_lower_triangular(y)
        .expect("Cholesky factor has a positive diagonal");
    let log_det_half: f64 = chol.diagonal().iter().map(|d| d.ln()).sum();
    0.5 * z.norm_squared() + log_det_half + 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Negative log marginal likelihood of the mean-adjusted derivative targets under the GP-PHS prior.
pub fn nlml(structure: &PhsStructure, hyper: &Hyperparameters, reg: &RegressionDataset) -> Result<f64> {
    let (value, _) = nlml_with_factor(structure, hyper, reg)?;
    Ok(value)
}

pub(crate) fn nlml_with_factor(
    structure: &PhsStructure,
    hyper: &Hyperparameters,
    reg: &RegressionDataset,
) -> Result<(f64, GramFactor)> {
    hyper.validate(structure)?;
    let y = mean_adjusted_outputs(structure, reg, hyper)?;
    let factor = factor_gram_unhashed(structure, &reg.states, hyper)?;
    Ok((gaussian_nll(&factor.chol, &y), factor))
}
