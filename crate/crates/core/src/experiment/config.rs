use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{BoxDomain, DesignTemplate, DEFAULT_TOL_MATCH};
use crate::error::{Error, Result};
use crate::gp::TrainSettings;
use crate::numeric::sha256_hex;
use crate::phs::MicroactuatorParams;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Sinusoidal excitation `u(t) = amplitude·sin(frequency·t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Excitation {
    pub amplitude: f64,
    pub frequency: f64,
}

impl Excitation {
    pub fn at(&self, t: f64) -> f64 {
        self.amplitude * (self.frequency * t).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub initial_state: Vec<f64>,
    pub t_end: f64,
    pub samples: usize,
    pub noise_variance: f64,
    /// RK4 step used to produce the samples and the open-loop comparison.
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSettings {
    pub window: usize,
    pub poly_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub restarts: usize,
    pub screen_iters: usize,
    pub max_iters: usize,
    pub spread: f64,
    pub xatol: f64,
    pub fatol: f64,
    /// Initial observation-noise variance.
    pub initial_noise: f64,
    /// Fix `r` instead of learning it.
    pub known_resistance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub r_d: f64,
    pub x1_target: f64,
    pub beta: Vec<f64>,
    pub domain: BoxDomain,
    pub grid_counts: Vec<usize>,
    pub tol_match: f64,
    pub shift_starts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedLoopConfig {
    pub initial_state: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
}

/// Everything needed to reproduce a run; with the seed it fully determines every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub plant: MicroactuatorParams,
    pub excitation: Excitation,
    pub sampling: Sampling,
    pub filter: FilterSettings,
    pub training: TrainingConfig,
    pub design: DesignConfig,
    pub closed_loop: ClosedLoopConfig,
    /// `None` disables the data-size sweep.
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    /// The microactuator experiment: 300 noisy samples of the response to `sin t` on `[0, 20]`,
    /// `r_d = 2/3`, `x₁ → 0.5`, `β = 2`, a 21³ grid on `[−2, 2]³` and a 13-unit closed loop.
    pub fn microactuator() -> Self {
        let train = TrainSettings::default();
        let template = DesignTemplate::microactuator();
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            plant: MicroactuatorParams::default(),
            excitation: Excitation {
                amplitude: 1.0,
                frequency: 1.0,
            },
            sampling: Sampling {
                initial_state: vec![0.0, 0.0, 1.0],
                t_end: 20.0,
                samples: 300,
                noise_variance: 1e-3,
                dt: 1e-3,
            },
            filter: FilterSettings {
                window: 9,
                poly_order: 3,
            },
            training: TrainingConfig {
                restarts: train.restarts,
                screen_iters: train.screen_iters,
                max_iters: train.max_iters,
                spread: train.spread,
                xatol: train.xatol,
                fatol: train.fatol,
                initial_noise: 1e-3,
                known_resistance: None,
            },
            design: DesignConfig {
                r_d: template.r_d,
                x1_target: 0.5,
                beta: vec![2.0; 3],
                domain: template.domain,
                grid_counts: vec![21; 3],
                tol_match: DEFAULT_TOL_MATCH,
                shift_starts: template.shift_starts,
            },
            closed_loop: ClosedLoopConfig {
                initial_state: vec![0.0, 0.0, 1.0],
                t_end: 13.0,
                dt: 1e-3,
            },
            sweep: Some(SweepConfig {
                sizes: vec![100, 300, 600],
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: CONFIG_SCHEMA_VERSION,
            });
        }
        self.plant.validate()?;
        let bad = |what: &str| Err(Error::InvalidArgument(format!("config: {what}")));
        let s = &self.sampling;
        if s.initial_state.len() != 3 || self.closed_loop.initial_state.len() != 3 {
            return bad("initial states must have 3 entries");
        }
        if !(s.t_end > 0.0 && s.dt > 0.0 && s.noise_variance >= 0.0) || s.samples < 2 {
            return bad("sampling needs t_end > 0, dt > 0, noise variance ≥ 0 and at least 2 samples");
        }
        if !(self.excitation.amplitude.is_finite() && self.excitation.frequency.is_finite()) {
            return bad("excitation must be finite");
        }
        if self.filter.window.is_multiple_of(2) || self.filter.poly_order >= self.filter.window {
            return bad("filter window must be odd and larger than the polynomial order");
        }
        let t = &self.training;
        if t.restarts == 0 || t.max_iters == 0 || !(t.spread >= 0.0) || !(t.initial_noise > 0.0) {
            return bad("training needs restarts ≥ 1, max_iters ≥ 1, spread ≥ 0 and positive initial noise");
        }
        if matches!(t.known_resistance, Some(r) if !(r > 0.0)) {
            return bad("known resistance must be positive");
        }
        let d = &self.design;
        d.domain.validate()?;
        if d.domain.dim() != 3 || d.beta.len() != 3 || d.grid_counts.len() != 3 {
            return bad("design domain, β and grid counts must be 3-dimensional");
        }
        if !(d.r_d > 0.0) || d.beta.iter().any(|b| !(*b >= 0.0)) || d.grid_counts.iter().any(|&c| c < 2) {
            return bad("design needs r_d > 0, β ≥ 0 and at least 2 grid points per axis");
        }
        if !(d.tol_match >= 0.0) || d.shift_starts.is_empty() {
            return bad("design needs tol_match ≥ 0 and at least one shift start");
        }
        let c = &self.closed_loop;
        if !(c.t_end > 0.0 && c.dt > 0.0) {
            return bad("closed loop needs t_end > 0 and dt > 0");
        }
        if let Some(sweep) = &self.sweep {
            if sweep.sizes.is_empty() {
                return bad("sweep sizes must not be empty (use null to disable)");
            }
        }
        Ok(())
    }

    pub fn train_settings(&self, seed: u64) -> TrainSettings {
        let t = &self.training;
        TrainSettings {
            restarts: t.restarts,
            screen_iters: t.screen_iters,
            max_iters: t.max_iters,
            seed,
            spread: t.spread,
            xatol: t.xatol,
            fatol: t.fatol,
        }
    }

    pub fn design_template(&self) -> DesignTemplate {
        DesignTemplate {
            r_d: self.design.r_d,
            target_coordinate: 0,
            shift_coordinate: 2,
            shift_starts: self.design.shift_starts.clone(),
            domain: self.design.domain.clone(),
        }
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Stage sub-seed: the first 8 bytes of `SHA-256("master/stage/n")`.
pub fn derive_seed(master: u64, stage: &str, n: usize) -> u64 {
    let digest = Sha256::digest(format!("{master}/{stage}/{n}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let config = ExperimentConfig::microactuator();
        config.validate().unwrap();
        let back = ExperimentConfig::from_json(&config.to_json()).unwrap();
        assert_eq!(back, config);
        assert_eq!(back.digest(), config.digest());
    }

    #[test]
    fn digest_tracks_changes() {
        let a = ExperimentConfig::microactuator();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = ExperimentConfig::microactuator();
        c.schema_version = 7;
        assert!(matches!(c.validate(), Err(Error::SchemaVersion { .. })));
        let mut c = ExperimentConfig::microactuator();
        c.filter.window = 8;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::microactuator();
        c.design.grid_counts = vec![21, 1, 21];
        assert!(c.validate().is_err());
        let text = ExperimentConfig::microactuator()
            .to_json()
            .replace("\"seed\"", "\"sed\"");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn seeds_depend_on_all_parts() {
        let s = derive_seed(0, "data", 300);
        assert_eq!(s, derive_seed(0, "data", 300));
        assert_ne!(s, derive_seed(1, "data", 300));
        assert_ne!(s, derive_seed(0, "train", 300));
        assert_ne!(s, derive_seed(0, "data", 100));
    }
}
