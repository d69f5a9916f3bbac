use serde::{Deserialize, Serialize};

use crate::control::Certificate;
use crate::error::Result;
use crate::gp::Hyperparameters;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub x_d: Vec<f64>,
    pub c: f64,
    pub r_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub passed: bool,
    pub nodes: usize,
    pub max_matching_residual: f64,
    pub worst_residual_point: Vec<f64>,
    pub min_robustness_margin: f64,
    pub worst_margin_point: Vec<f64>,
    pub violations: usize,
    pub dissipation_zero_nodes: usize,
}

impl From<&Certificate> for CertificateSummary {
    fn from(c: &Certificate) -> Self {
        Self {
            passed: c.passed,
            nodes: c.grid.len(),
            max_matching_residual: c.max_matching_residual,
            worst_residual_point: c.worst_residual_point.clone(),
            min_robustness_margin: c.min_robustness_margin,
            worst_margin_point: c.worst_margin_point.clone(),
            violations: c.violations,
            dissipation_zero_nodes: c.dissipation_zero_nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopSummary {
    pub terminal_state: Vec<f64>,
    /// `|x₁(T) − x₁,target|`.
    pub x1_error: f64,
    /// `‖∇H_d(x(T))‖`.
    pub terminal_gradient_norm: f64,
    pub hd_initial: f64,
    pub hd_final: f64,
    /// Largest one-step increase of `H_d`; negative when `H_d` decreases at every step.
    pub max_hd_increase: f64,
    /// Time average of the per-step MSE against the target closed loop.
    pub time_averaged_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub samples: usize,
    pub time_averaged_mse: Option<f64>,
    pub damping_estimate: Option<f64>,
    pub error: Option<String>,
}

/// Summary of a pipeline run. Bit-for-bit reproducible from the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config_digest: String,
    pub seed: u64,
    pub samples: usize,
    pub hyperparameters: Hyperparameters,
    pub damping_estimate: f64,
    pub resistance_estimate: f64,
    pub nlml: f64,
    pub open_loop_rmse: Vec<f64>,
    pub design: DesignSummary,
    pub certificate: CertificateSummary,
    pub closed_loop: ClosedLoopSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepRow>>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
