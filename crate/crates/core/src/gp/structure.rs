use nalgebra::{dmatrix, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Hyperparameters;
use crate::error::{Error, Result};
use crate::numeric::{matrix_from_rows, min_symmetric_eigenvalue, skew_violation};

/// Known parametric structure of `Ĵ(x|φ_J)`, `R̂(x|φ_R)` and `Ĝ(x|φ_G)`.
///
/// Every structural parameter is strictly positive and optimized in log-space; skew-symmetry of
/// `Ĵ` and positive semidefiniteness of `R̂` hold for every admissible parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhsStructure {
    /// Microactuator layout: `Ĵ = [[0,1,0],[−1,0,0],[0,0,0]]`, `R̂ = diag(0, b̂, 1/r̂)`,
    /// `Ĝ = [0,0,1/r̂]ᵀ`. `φ_R = [b̂, r̂]`, or `[b̂]` when the resistance is known.
    Microactuator { known_resistance: Option<f64> },
    /// Fully known constant matrices, no structural parameters.
    Constant {
        j: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        g: Vec<Vec<f64>>,
    },
}

impl PhsStructure {
    pub fn constant(j: &DMatrix<f64>, r: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<Self> {
        let s = PhsStructure::Constant {
            j: crate::numeric::matrix_rows(j),
            r: crate::numeric::matrix_rows(r),
            g: crate::numeric::matrix_rows(g),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PhsStructure::Microactuator { known_resistance } => match known_resistance {
                Some(r) if !(*r > 0.0 && r.is_finite()) => Err(Error::InvalidArgument(format!(
                    "known resistance must be positive, got {r}"
                ))),
                _ => Ok(()),
            },
            PhsStructure::Constant { .. } => {
                let (j, r, g) = self.constant_matrices()?;
                let n = j.nrows();
                if j.ncols() != n || r.nrows() != n || r.ncols() != n || g.nrows() != n {
                    return Err(Error::InvalidArgument("inconsistent constant structure shapes".into()));
                }
                if skew_violation(&j) > 1e-12 {
                    return Err(Error::InvalidArgument("constant J is not skew-symmetric".into()));
                }
                if (&r - r.transpose()).amax() > 1e-12 || min_symmetric_eigenvalue(&r) < -1e-10 {
                    return Err(Error::InvalidArgument("constant R is not symmetric PSD".into()));
                }
                Ok(())
            }
        }
    }

    fn constant_matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let PhsStructure::Constant { j, r, g } = self else {
            unreachable!("constant_matrices on a non-constant structure")
        };
        let n = j.len();
        let m = g.first().map_or(0, |row| row.len());
        let bad = || Error::InvalidArgument("ragged constant structure matrix".into());
        Ok((
            matrix_from_rows(j, n).ok_or_else(bad)?,
            matrix_from_rows(r, n).ok_or_else(bad)?,
            matrix_from_rows(g, m).ok_or_else(bad)?,
        ))
    }

    pub fn state_dim(&self) -> usize {
        match self {
            PhsStructure::Microactuator { .. } => 3,
            PhsStructure::Constant { j, .. } => j.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            PhsStructure::Microactuator { .. } => 1,
            PhsStructure::Constant { g, .. } => g.first().map_or(0, |row| row.len()),
        }
    }

    /// Number of entries in `(φ_J, φ_R, φ_G)`.
    pub fn parameter_counts(&self) -> (usize, usize, usize) {
        match self {
            PhsStructure::Microactuator { known_resistance: None } => (0, 2, 0),
            PhsStructure::Microactuator {
                known_resistance: Some(_),
            } => (0, 1, 0),
            PhsStructure::Constant { .. } => (0, 0, 0),
        }
    }

    /// Whether `Ĝ` is independent of the state.
    pub fn has_constant_input_matrix(&self) -> bool {
        true
    }

    fn resistance(&self, hyper: &Hyperparameters) -> f64 {
        match self {
            PhsStructure::Microactuator {
                known_resistance: Some(r),
            } => *r,
            _ => hyper.phi_r[1],
        }
    }

    pub fn interconnection(&self, _x: &DVector<f64>, _hyper: &Hyperparameters) -> DMatrix<f64> {
        match self {
            PhsStructure::Microactuator { .. } => dmatrix![
                0.0, 1.0, 0.0;
                -1.0, 0.0, 0.0;
                0.0, 0.0, 0.0
            ],
            PhsStructure::Constant { j, .. } => matrix_from_rows(j, j.len()).expect("validated"),
        }
    }

    pub fn dissipation(&self, _x: &DVector<f64>, hyper: &Hyperparameters) -> DMatrix<f64> {
        match self {
            PhsStructure::Microactuator { .. } => {
                let r = self.resistance(hyper);
                DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, hyper.phi_r[0], 1.0 / r]))
            }
            PhsStructure::Constant { r, .. } => matrix_from_rows(r, r.len()).expect("validated"),
        }
    }

    pub fn input_matrix(&self, _x: &DVector<f64>, hyper: &Hyperparameters) -> DMatrix<f64> {
        match self {
            PhsStructure::Microactuator { .. } => dmatrix![0.0; 0.0; 1.0 / self.resistance(hyper)],
            PhsStructure::Constant { g, .. } => matrix_from_rows(g, self.input_dim()).expect("validated"),
        }
    }

    /// `Ĵ_R = Ĵ − R̂`.
    pub fn jr(&self, x: &DVector<f64>, hyper: &Hyperparameters) -> DMatrix<f64> {
        self.interconnection(x, hyper) - self.dissipation(x, hyper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn hyper(phi_r: Vec<f64>) -> Hyperparameters {
        Hyperparameters {
            sigma_f: 1.0,
            lengthscales: vec![1.0; 3],
            phi_j: vec![],
            phi_r,
            phi_g: vec![],
            noise: vec![0.0; 3],
        }
    }

    #[test]
    fn microactuator_layout() {
        let s = PhsStructure::Microactuator { known_resistance: None };
        let h = hyper(vec![0.5, 2.0]);
        let x = dvector![0.1, 0.2, 0.3];
        assert_eq!(s.jr(&x, &h), dmatrix![0.0, 1.0, 0.0; -1.0, -0.5, 0.0; 0.0, 0.0, -0.5]);
        assert_eq!(s.input_matrix(&x, &h), dmatrix![0.0; 0.0; 0.5]);
        assert_eq!(s.parameter_counts(), (0, 2, 0));

        let s = PhsStructure::Microactuator {
            known_resistance: Some(1.0),
        };
        assert_eq!(s.input_matrix(&x, &hyper(vec![0.5])), dmatrix![0.0; 0.0; 1.0]);
        assert_eq!(s.parameter_counts(), (0, 1, 0));
    }

    #[test]
    fn constant_structure_validated() {
        let bad_j = dmatrix![0.0, 1.0; 1.0, 0.0];
        let r = DMatrix::identity(2, 2);
        let g = dmatrix![0.0; 1.0];
        assert!(PhsStructure::constant(&bad_j, &r, &g).is_err());
        let j = dmatrix![0.0, 1.0; -1.0, 0.0];
        assert!(PhsStructure::constant(&j, &(-r.clone()), &g).is_err());
        let s = PhsStructure::constant(&j, &r, &g).unwrap();
        assert_eq!(s.state_dim(), 2);
        assert_eq!(s.input_dim(), 1);
    }

    #[test]
    fn serde_tagging() {
        let s = PhsStructure::Microactuator { known_resistance: None };
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, r#"{"kind":"microactuator","known_resistance":null}"#);
        assert_eq!(serde_json::from_str::<PhsStructure>(&text).unwrap(), s);
    }
}
