use nalgebra::{dmatrix, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::PortHamiltonian;
use crate::error::{Error, Result};

/// Physical constants of the electrostatic parallel-plate microactuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroactuatorParams {
    /// Plate area `A`.
    pub area: f64,
    /// Plate mass `m`.
    pub mass: f64,
    /// Permittivity of the gap `ε`.
    pub permittivity: f64,
    /// Rest gap of the spring `x*`.
    pub rest_gap: f64,
    /// Linear damping `b`.
    pub damping: f64,
    /// Input resistance `r`.
    pub resistance: f64,
    /// Quartic spring coefficient `k` in `¼·k·(x₁ − x*)⁴`.
    pub spring_coeff: f64,
}

impl Default for MicroactuatorParams {
    fn default() -> Self {
        Self {
            area: 1.0,
            mass: 1.0,
            permittivity: 1.0,
            rest_gap: 1.0,
            damping: 0.5,
            resistance: 1.0,
            spring_coeff: 10.0,
        }
    }
}

impl MicroactuatorParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("area", self.area),
            ("mass", self.mass),
            ("permittivity", self.permittivity),
            ("rest_gap", self.rest_gap),
            ("damping", self.damping),
            ("resistance", self.resistance),
            ("spring_coeff", self.spring_coeff),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "microactuator parameter {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Electrostatic microactuator with states (air gap, momentum, charge).
///
/// `H(x) = ¼k(x₁ − x*)⁴ + x₂²/(2m) + x₁x₃²/(2Aε)`, `J − R = [[0,1,0],[−1,−b,0],[0,0,−1/r]]`,
/// `G = [0,0,1/r]ᵀ`.
#[derive(Debug, Clone)]
pub struct Microactuator {
    params: MicroactuatorParams,
}

impl Microactuator {
    pub fn new(params: MicroactuatorParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &MicroactuatorParams {
        &self.params
    }

    fn capacitance_scale(&self) -> f64 {
        self.params.area * self.params.permittivity
    }
}

impl PortHamiltonian for Microactuator {
    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn interconnection(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        dmatrix![
            0.0, 1.0, 0.0;
            -1.0, 0.0, 0.0;
            0.0, 0.0, 0.0
        ]
    }

    fn dissipation(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            0.0,
            self.params.damping,
            1.0 / self.params.resistance,
        ]))
    }

    fn input_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        dmatrix![0.0; 0.0; 1.0 / self.params.resistance]
    }

    fn hamiltonian(&self, x: &DVector<f64>) -> f64 {
        let p = &self.params;
        let gap = x[0] - p.rest_gap;
        0.25 * p.spring_coeff * gap.powi(4)
            + x[1] * x[1] / (2.0 * p.mass)
            + x[0] * x[2] * x[2] / (2.0 * self.capacitance_scale())
    }

    fn grad_hamiltonian(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let gap = x[0] - p.rest_gap;
        let ae = self.capacitance_scale();
        DVector::from_vec(vec![
            p.spring_coeff * gap.powi(3) + x[2] * x[2] / (2.0 * ae),
            x[1] / p.mass,
            x[0] * x[2] / ae,
        ])
    }
}
