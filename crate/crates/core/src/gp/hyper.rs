use serde::{Deserialize, Serialize};

use super::PhsStructure;
use crate::error::{Error, Result};

/// Smallest noise variance representable in log-space packing.
const NOISE_FLOOR: f64 = 1e-12;

/// GP-PHS hyperparameters, held in their natural (not log) scale.
///
/// The SE kernel is `exp(−(x − x′)ᵀΛ(x − x′))` with `Λ = diag(l₁², …, l_n²)`, so larger
/// `lengthscales` mean faster decorrelation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub sigma_f: f64,
    pub lengthscales: Vec<f64>,
    pub phi_j: Vec<f64>,
    pub phi_r: Vec<f64>,
    pub phi_g: Vec<f64>,
    /// Per-dimension observation noise variances of the derivative targets.
    pub noise: Vec<f64>,
}

impl Hyperparameters {
    /// Diagonal of `Λ`.
    pub fn lambda(&self) -> Vec<f64> {
        self.lengthscales.iter().map(|l| l * l).collect()
    }

    pub fn validate(&self, structure: &PhsStructure) -> Result<()> {
        let n = structure.state_dim();
        let (nj, nr, ng) = structure.parameter_counts();
        if self.lengthscales.len() != n
            || self.noise.len() != n
            || self.phi_j.len() != nj
            || self.phi_r.len() != nr
            || self.phi_g.len() != ng
        {
            return Err(Error::InvalidArgument(format!(
                "hyperparameter shapes do not fit the structure (n = {n}, φ = ({nj}, {nr}, {ng}))"
            )));
        }
        let positive = std::iter::once(self.sigma_f)
            .chain(self.lengthscales.iter().copied())
            .chain(self.phi_j.iter().copied())
            .chain(self.phi_r.iter().copied())
            .chain(self.phi_g.iter().copied());
        for v in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "σ_f, lengthscales and structural parameters must be positive, got {v}"
                )));
            }
        }
        if self.noise.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("noise variances must be non-negative".into()));
        }
        Ok(())
    }

    /// Number of free (log-space) coordinates.
    pub fn packed_len(&self) -> usize {
        1 + self.lengthscales.len() + self.phi_j.len() + self.phi_r.len() + self.phi_g.len() + self.noise.len()
    }

    /// Log-space coordinates `[ln σ_f, ln l, ln φ_J, ln φ_R, ln φ_G, ln σ_noise]`.
    pub fn to_log_space(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.packed_len());
        v.push(self.sigma_f.ln());
        v.extend(self.lengthscales.iter().map(|x| x.ln()));
        v.extend(self.phi_j.iter().map(|x| x.ln()));
        v.extend(self.phi_r.iter().map(|x| x.ln()));
        v.extend(self.phi_g.iter().map(|x| x.ln()));
        v.extend(self.noise.iter().map(|x| x.max(NOISE_FLOOR).ln()));
        v
    }

    /// Inverse of [`Hyperparameters::to_log_space`], shaped like `self`.
    pub fn from_log_space(&self, packed: &[f64]) -> Self {
        assert_eq!(packed.len(), self.packed_len(), "packed hyperparameter length");
        let mut it = packed.iter().map(|v| v.exp());
        let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
        let sigma_f = take(1)[0];
        Self {
            sigma_f,
            lengthscales: take(self.lengthscales.len()),
            phi_j: take(self.phi_j.len()),
            phi_r: take(self.phi_r.len()),
            phi_g: take(self.phi_g.len()),
            noise: take(self.noise.len()),
        }
    }
}
