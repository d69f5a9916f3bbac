use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::likelihood::nlml_with_factor;
use super::{GpPhsModel, Hyperparameters, PhsStructure, RegressionDataset};
use crate::error::{Error, Result};
use crate::optim::NelderMead;

/// Multi-start Nelder–Mead settings for marginal-likelihood training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub restarts: usize,
    /// Nelder–Mead iterations every start gets before the best one is selected.
    pub screen_iters: usize,
    /// Iteration cap for polishing the selected start.
    pub max_iters: usize,
    pub seed: u64,
    /// Standard deviation of the log-space perturbation applied to starts after the first.
    pub spread: f64,
    pub xatol: f64,
    pub fatol: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            restarts: 8,
            screen_iters: 150,
            max_iters: 1500,
            seed: 0,
            spread: 0.5,
            xatol: 1e-3,
            fatol: 1e-4,
        }
    }
}

/// Outcome of a single optimizer start.
#[derive(Debug, Clone, PartialEq)]
pub struct StartOutcome {
    pub index: usize,
    /// Final NLML, or `None` when the start never produced a factorizable Gram matrix.
    pub nlml: Option<f64>,
    /// Screening evaluations (polishing excluded).
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: GpPhsModel,
    pub nlml: f64,
    pub best_start: usize,
    pub starts: Vec<StartOutcome>,
    /// Best-so-far NLML per iteration of the winning start.
    pub best_so_far: Vec<f64>,
}

/// Data-driven starting point: inverse lengthscales from the state spread, signal scale from the
/// derivative spread, unit structural parameters and the given noise variance.
pub fn initial_hyperparameters(structure: &PhsStructure, reg: &RegressionDataset, noise: f64) -> Hyperparameters {
    let n = structure.state_dim();
    let (nj, nr, ng) = structure.parameter_counts();
    let spread = |row: nalgebra::RowDVector<f64>| -> f64 {
        if row.len() < 2 {
            return 1.0;
        }
        let mean = row.mean();
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (row.len() - 1) as f64;
        let sd = var.sqrt();
        if sd.is_finite() && sd > 1e-9 {
            sd
        } else {
            1.0
        }
    };
    let lengthscales: Vec<f64> = (0..n).map(|i| 1.0 / spread(reg.states.row(i).into_owned())).collect();
    let deriv_scale = (0..n)
        .map(|i| spread(reg.derivatives.row(i).into_owned()))
        .fold(0.0_f64, f64::max);
    let mean_l = lengthscales.iter().sum::<f64>() / n.max(1) as f64;
    let sigma_f = if reg.is_empty() {
        1.0
    } else {
        (deriv_scale / mean_l).max(1e-3)
    };
    Hyperparameters {
        sigma_f,
        lengthscales,
        phi_j: vec![1.0; nj],
        phi_r: vec![1.0; nr],
        phi_g: vec![1.0; ng],
        noise: vec![noise; n],
    }
}

/// Minimizes the NLML over log-space hyperparameters from `restarts` starts. Start 0 is `init`
/// itself; the others perturb it with seeded Gaussian noise. Every start is screened for
/// `screen_iters` iterations, then the best (ties to the lower index) is polished for up to
/// `max_iters`. With a single start the screening phase is skipped.
pub fn train(
    structure: &PhsStructure,
    reg: &RegressionDataset,
    init: &Hyperparameters,
    settings: &TrainSettings,
) -> Result<TrainingRun> {
    structure.validate()?;
    init.validate(structure)?;
    if settings.restarts == 0 {
        return Err(Error::InvalidArgument("at least one training start is required".into()));
    }
    let base = init.to_log_space();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let polish = NelderMead {
        max_iters: settings.max_iters,
        xatol: settings.xatol,
        fatol: settings.fatol,
        ..NelderMead::default()
    };
    let screen = if settings.restarts == 1 {
        polish.clone()
    } else {
        NelderMead {
            max_iters: settings.screen_iters.min(settings.max_iters),
            ..polish.clone()
        }
    };
    let objective = |p: &[f64]| -> f64 {
        let hyper = init.from_log_space(p);
        match nlml_with_factor(structure, &hyper, reg) {
            Ok((v, _)) => v,
            Err(_) => f64::INFINITY,
        }
    };

    let mut starts = Vec::with_capacity(settings.restarts);
    let mut best: Option<(f64, usize, Vec<f64>, Vec<f64>)> = None;
    for index in 0..settings.restarts {
        let x0: Vec<f64> = if index == 0 {
            base.clone()
        } else {
            base.iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + settings.spread * z
                })
                .collect()
        };
        let min = screen.minimize(objective, &x0);
        let value = min.value.is_finite().then_some(min.value);
        log::debug!(
            "start {index}: nlml {:?} after {} evaluations (converged: {})",
            value,
            min.evaluations,
            min.converged
        );
        starts.push(StartOutcome {
            index,
            nlml: value,
            evaluations: min.evaluations,
            converged: min.converged,
        });
        if let Some(v) = value {
            if best.as_ref().is_none_or(|(b, ..)| v < *b) {
                best = Some((v, index, min.x, min.best_so_far));
            }
        }
    }

    let Some((mut value, best_start, mut x, mut best_so_far)) = best else {
        let diagnostics = starts
            .iter()
            .map(|s| format!("start {} ({} evaluations)", s.index, s.evaluations))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::TrainingFailed(format!(
            "no start produced a factorizable Gram matrix: {diagnostics}"
        )));
    };
    if settings.restarts > 1 && !starts[best_start].converged {
        let min = polish.minimize(objective, &x);
        best_so_far.extend(min.best_so_far.iter().map(|v| v.min(value)));
        if min.value <= value {
            value = min.value;
            x = min.x;
        }
    }
    let hyper = init.from_log_space(&x);
    let model = GpPhsModel::fit(structure, reg, &hyper)?;
    Ok(TrainingRun {
        model,
        nlml: value,
        best_start,
        starts,
        best_so_far,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, DMatrix};

    fn scalar_data() -> (PhsStructure, RegressionDataset) {
        let structure = PhsStructure::constant(&dmatrix![0.0], &dmatrix![1.0], &DMatrix::zeros(1, 0)).unwrap();
        let xs: Vec<f64> = (0..15).map(|k| -1.5 + 0.2 * k as f64).collect();
        let states = DMatrix::from_row_slice(1, xs.len(), &xs);
        // H = x²/2 + 0.1·sin(3x), ẋ = −∂H
        let derivs = states.map(|x| -(x + 0.3 * (3.0 * x).cos()));
        let reg = RegressionDataset::new(xs.clone(), states, derivs, DMatrix::zeros(0, xs.len())).unwrap();
        (structure, reg)
    }

    #[test]
    fn training_lowers_the_objective_and_is_deterministic() {
        let (structure, reg) = scalar_data();
        let init = initial_hyperparameters(&structure, &reg, 1e-3);
        let settings = TrainSettings {
            restarts: 3,
            screen_iters: 40,
            max_iters: 300,
            seed: 11,
            ..TrainSettings::default()
        };
        let a = train(&structure, &reg, &init, &settings).unwrap();
        let b = train(&structure, &reg, &init, &settings).unwrap();
        assert_eq!(a.model.hyperparameters(), b.model.hyperparameters());
        assert_eq!(a.nlml.to_bits(), b.nlml.to_bits());
        assert!(a.nlml < super::super::nlml(&structure, &init, &reg).unwrap());
        assert!((super::super::nlml(&structure, a.model.hyperparameters(), &reg).unwrap() - a.nlml).abs() < 1e-9);
        assert_eq!(a.starts.len(), 3);
        assert!(a.best_so_far.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_restarts_rejected() {
        let (structure, reg) = scalar_data();
        let init = initial_hyperparameters(&structure, &reg, 1e-3);
        let settings = TrainSettings {
            restarts: 0,
            ..TrainSettings::default()
        };
        assert!(matches!(
            train(&structure, &reg, &init, &settings),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn non_finite_data_fails_every_start() {
        let (structure, mut reg) = scalar_data();
        reg.derivatives[(0, 3)] = f64::NAN;
        let init = initial_hyperparameters(&structure, &reg, 1e-3);
        let settings = TrainSettings {
            restarts: 2,
            screen_iters: 5,
            max_iters: 10,
            ..TrainSettings::default()
        };
        assert!(matches!(
            train(&structure, &reg, &init, &settings),
            Err(Error::TrainingFailed(_))
        ));
    }
}
