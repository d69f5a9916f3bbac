use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{derive_seed, ExperimentConfig};
use super::report::{CertificateSummary, ClosedLoopSummary, DesignSummary, RunReport, SweepRow, REPORT_SCHEMA_VERSION};
use crate::control::{
    certify, desired_hamiltonian, solve_equilibrium_shift, Certificate, ClosedLoop, Controller, DesiredDesign,
    DesiredDynamics, Grid,
};
use crate::error::{Error, Result};
use crate::gp::{
    estimate_derivatives, initial_hyperparameters, train, GpPhsModel, ModelDocument, PhsStructure, RegressionDataset,
    TrainingRun,
};
use crate::numeric::{fmt_f64, sha256_hex};
use crate::phs::{sample, simulate, Microactuator, Trajectory, VectorField};

/// Spacing, in time units, of the rows written to plot CSVs.
const CSV_TIME_STRIDE: f64 = 0.01;

/// Whether a cached stage result was reused or recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Computed,
    Reused,
}

/// A trained model together with the cache key it is stored under.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: GpPhsModel,
    pub nlml: f64,
    pub key: String,
}

#[derive(Serialize, Deserialize)]
struct CachedModel {
    nlml: f64,
    model: ModelDocument,
}

/// Open-loop comparison between the plant and the posterior-mean dynamics.
#[derive(Debug, Clone)]
pub struct OpenLoop {
    pub truth: Trajectory,
    pub predicted: Trajectory,
    /// Grid indices that fall strictly between sampling instants.
    pub scored: Vec<usize>,
    pub rmse: Vec<f64>,
}

/// Closed-loop run alongside the target closed loop from the same initial state.
#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    /// States with the applied control input.
    pub trajectory: Trajectory,
    pub desired: Trajectory,
    /// `H_d` along `trajectory`.
    pub hd: Vec<f64>,
    /// Mean over state dimensions of the squared deviation from `desired`, per step.
    pub mse: Vec<f64>,
    pub summary: ClosedLoopSummary,
}

pub fn structure(config: &ExperimentConfig) -> PhsStructure {
    PhsStructure::Microactuator {
        known_resistance: config.training.known_resistance,
    }
}

pub fn plant(config: &ExperimentConfig) -> Result<Microactuator> {
    Microactuator::new(config.plant)
}

/// Equally spaced sample instants on `[0, t_end]`.
pub fn sample_times(config: &ExperimentConfig, n: usize) -> Vec<f64> {
    let t_end = config.sampling.t_end;
    (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect()
}

/// `n` noisy samples of the plant response to the excitation. Sample spacings below the
/// integration step are rejected.
pub fn generate_data(config: &ExperimentConfig, n: usize) -> Result<Trajectory> {
    let s = &config.sampling;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    let spacing = s.t_end / (n - 1) as f64;
    if spacing < s.dt {
        return Err(Error::InvalidArgument(format!(
            "{n} samples on [0, {}] are spaced {spacing:.3e}, below the integration step {}",
            s.t_end, s.dt
        )));
    }
    let plant = plant(config)?;
    let x0 = DVector::from_column_slice(&s.initial_state);
    let excitation = config.excitation.clone();
    let clean = sample(
        &plant,
        &x0,
        move |t| DVector::from_element(1, excitation.at(t)),
        &sample_times(config, n),
        s.dt,
    )?;
    if s.noise_variance == 0.0 {
        return Ok(clean);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "data", n));
    let noise = Normal::new(0.0, s.noise_variance.sqrt())
        .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
    let states = clean
        .states
        .iter()
        .map(|x| x.map(|v| v + noise.sample(&mut rng)))
        .collect();
    Trajectory::new(clean.times, states, clean.inputs)
}

pub fn filter_data(config: &ExperimentConfig, data: &Trajectory) -> Result<RegressionDataset> {
    estimate_derivatives(data, config.filter.window, config.filter.poly_order)
}

pub fn train_model(config: &ExperimentConfig, reg: &RegressionDataset, n: usize) -> Result<TrainingRun> {
    let structure = structure(config);
    let init = initial_hyperparameters(&structure, reg, config.training.initial_noise);
    train(
        &structure,
        reg,
        &init,
        &config.train_settings(derive_seed(config.seed, "train", n)),
    )
}

/// Estimated resistance: learned, or the configured known value.
pub fn resistance_estimate(config: &ExperimentConfig, model: &GpPhsModel) -> f64 {
    config
        .training
        .known_resistance
        .unwrap_or_else(|| model.hyperparameters().phi_r[1])
}

struct PosteriorMean<'a>(&'a GpPhsModel);

impl VectorField for PosteriorMean<'_> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }
    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.0.drift_mean(x) + self.0.input_matrix(x) * u)
    }
}

/// Simulates plant and posterior mean from the sampling initial state under the excitation and
/// scores the RMSE per dimension at grid times that do not coincide with sampling instants.
pub fn open_loop(config: &ExperimentConfig, model: &GpPhsModel) -> Result<OpenLoop> {
    let s = &config.sampling;
    let plant = plant(config)?;
    let x0 = DVector::from_column_slice(&s.initial_state);
    let exc = config.excitation.clone();
    let input = move |t: f64| DVector::from_element(1, exc.at(t));
    let truth = simulate(&plant, &x0, input.clone(), s.t_end, s.dt)?;
    let predicted = simulate(&PosteriorMean(model), &x0, input, s.t_end, s.dt)?;
    let spacing = s.t_end / (s.samples - 1) as f64;
    let scored: Vec<usize> = truth
        .times
        .iter()
        .enumerate()
        .filter(|(_, &t)| {
            let k = (t / spacing).round();
            (t - k * spacing).abs() > 1e-9 * s.t_end.max(1.0)
        })
        .map(|(j, _)| j)
        .collect();
    let n = truth.state_dim();
    let mut sum = vec![0.0; n];
    for &j in &scored {
        for d in 0..n {
            sum[d] += (truth.states[j][d] - predicted.states[j][d]).powi(2);
        }
    }
    let rmse = sum.iter().map(|v| (v / scored.len().max(1) as f64).sqrt()).collect();
    Ok(OpenLoop {
        truth,
        predicted,
        scored,
        rmse,
    })
}

pub fn synthesize(config: &ExperimentConfig, model: &GpPhsModel) -> Result<DesiredDesign> {
    solve_equilibrium_shift(model, &config.design_template(), config.design.x1_target)
}

pub fn certify_design(config: &ExperimentConfig, model: &GpPhsModel, design: &DesiredDesign) -> Result<Certificate> {
    let grid = Grid::new(config.design.domain.clone(), config.design.grid_counts.clone())?;
    certify(model, design, &config.design.beta, &grid, config.design.tol_match)
}

/// Closed loop of the true plant under the control law, and the target closed loop.
pub fn closed_loop(config: &ExperimentConfig, model: &GpPhsModel, design: &DesiredDesign) -> Result<ClosedLoopRun> {
    let c = &config.closed_loop;
    let plant = plant(config)?;
    let x0 = DVector::from_column_slice(&c.initial_state);
    let none = |_: f64| DVector::zeros(0);
    let field = ClosedLoop::new(&plant, model, design)?;
    let run = simulate(&field, &x0, none, c.t_end, c.dt)?;
    let desired = simulate(&DesiredDynamics { model, design }, &x0, none, c.t_end, c.dt)?;
    closed_loop_from(config, &field.controller, run, desired)
}

fn closed_loop_from(
    config: &ExperimentConfig,
    controller: &Controller<'_, GpPhsModel>,
    run: Trajectory,
    desired: Trajectory,
) -> Result<ClosedLoopRun> {
    let (model, design) = (controller.model(), controller.design());
    let inputs = run
        .states
        .iter()
        .map(|x| controller.input(x))
        .collect::<Result<Vec<_>>>()?;
    let hd: Vec<f64> = run
        .states
        .iter()
        .map(|x| desired_hamiltonian(design, model, x).0)
        .collect();
    let n = run.state_dim() as f64;
    let mse: Vec<f64> = run
        .states
        .iter()
        .zip(&desired.states)
        .map(|(a, b)| (a - b).norm_squared() / n)
        .collect();
    let terminal = run.final_state().clone();
    let summary = ClosedLoopSummary {
        terminal_state: terminal.iter().copied().collect(),
        x1_error: (terminal[0] - config.design.x1_target).abs(),
        terminal_gradient_norm: desired_hamiltonian(design, model, &terminal).1.norm(),
        hd_initial: hd[0],
        hd_final: *hd.last().expect("non-empty"),
        max_hd_increase: hd.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max),
        time_averaged_mse: mse.iter().sum::<f64>() / mse.len() as f64,
    };
    let trajectory = Trajectory::new(run.times, run.states, inputs)?;
    Ok(ClosedLoopRun {
        trajectory,
        desired,
        hd,
        mse,
        summary,
    })
}

/// Runs the experiment stages against an output directory, reusing cached stage results whose
/// inputs are unchanged.
pub struct Experiment {
    config: ExperimentConfig,
    digest: String,
    out: PathBuf,
    cache: PathBuf,
    stages: Vec<(String, StageStatus)>,
}

impl Experiment {
    /// Validates `config` and creates `out` (and `out/cache`).
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let out = out.into();
        let cache = out.join("cache");
        fs::create_dir_all(&cache).map_err(|e| Error::io(&cache, e))?;
        Ok(Self {
            digest: config.digest(),
            config,
            out,
            cache,
            stages: Vec::new(),
        })
    }

    /// Uses a different cache directory, e.g. one shared between output directories.
    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.cache = dir;
        Ok(self)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn config_digest(&self) -> &str {
        &self.digest
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    /// Stages run so far, in order.
    pub fn stages(&self) -> &[(String, StageStatus)] {
        &self.stages
    }

    fn record(&mut self, stage: impl Into<String>, status: StageStatus) {
        let stage = stage.into();
        log::info!("{stage}: {status:?}");
        self.stages.push((stage, status));
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf> {
        self.write(name, &format!("# config-digest: {}\n{body}", self.digest))
    }

    fn write_json<T: Serialize>(&self, name: &str, field: &str, payload: &T) -> Result<PathBuf> {
        let doc = json!({ "config_digest": self.digest, field: payload });
        self.write(name, &serde_json::to_string_pretty(&doc)?)
    }

    fn is_main(&self, n: usize) -> bool {
        n == self.config.sampling.samples
    }

    /// Noisy training trajectory with `n` samples; written to `data.csv` for the configured size.
    pub fn data(&mut self, n: usize) -> Result<Trajectory> {
        let data = generate_data(&self.config, n).map_err(|e| e.at_stage("generate-data"))?;
        if self.is_main(n) {
            let mut buf = Vec::new();
            data.write_csv(&mut buf)?;
            self.write_csv("data.csv", &String::from_utf8(buf).expect("utf-8 csv"))?;
        }
        self.record(format!("generate-data[{n}]"), StageStatus::Computed);
        Ok(data)
    }

    pub fn regression(&mut self, n: usize) -> Result<RegressionDataset> {
        let data = self.data(n)?;
        let reg = filter_data(&self.config, &data).map_err(|e| e.at_stage("filter"))?;
        if self.is_main(n) {
            let mut buf = Vec::new();
            reg.write_csv(&mut buf)?;
            self.write_csv("regression.csv", &String::from_utf8(buf).expect("utf-8 csv"))?;
        }
        self.record(format!("filter[{n}]"), StageStatus::Computed);
        Ok(reg)
    }

    fn model_key(&self, n: usize) -> String {
        let c = &self.config;
        let inputs = json!({
            "stage": "train",
            "plant": c.plant,
            "excitation": c.excitation,
            "initial_state": c.sampling.initial_state,
            "t_end": c.sampling.t_end,
            "samples": n,
            "noise_variance": c.sampling.noise_variance,
            "dt": c.sampling.dt,
            "filter": c.filter,
            "training": c.training,
            "data_seed": derive_seed(c.seed, "data", n),
            "train_seed": derive_seed(c.seed, "train", n),
        });
        sha256_hex(inputs.to_string().as_bytes())
    }

    fn cache_path(&self, kind: &str, key: &str) -> PathBuf {
        self.cache.join(format!("{kind}-{key}.json"))
    }

    fn cached<T: for<'de> Deserialize<'de>>(&self, kind: &str, key: &str) -> Option<T> {
        let text = fs::read_to_string(self.cache_path(kind, key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn store<T: Serialize>(&self, kind: &str, key: &str, value: &T) -> Result<()> {
        let path = self.cache_path(kind, key);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_string(value)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Trained model on `n` samples, from the cache when its inputs are unchanged.
    pub fn model(&mut self, n: usize) -> Result<TrainedModel> {
        let key = self.model_key(n);
        let stage = format!("train[{n}]");
        let cached = self
            .cached::<CachedModel>("model", &key)
            .and_then(|c| GpPhsModel::from_document(&c.model).ok().map(|m| (m, c.nlml)));
        let (model, nlml) = match cached {
            Some(hit) => {
                self.record(stage, StageStatus::Reused);
                hit
            }
            None => {
                let reg = self.regression(n)?;
                let run = train_model(&self.config, &reg, n).map_err(|e| e.at_stage("train"))?;
                self.store(
                    "model",
                    &key,
                    &CachedModel {
                        nlml: run.nlml,
                        model: run.model.to_document(),
                    },
                )?;
                self.record(stage, StageStatus::Computed);
                (run.model, run.nlml)
            }
        };
        if self.is_main(n) {
            self.write_json(
                "model.json",
                "model",
                &json!({ "nlml": nlml, "document": model.to_document() }),
            )?;
        }
        Ok(TrainedModel { model, nlml, key })
    }

    pub fn open_loop(&mut self, trained: &TrainedModel) -> Result<OpenLoop> {
        let ol = open_loop(&self.config, &trained.model).map_err(|e| e.at_stage("open-loop"))?;
        let stride = stride(self.config.sampling.dt);
        let mut body = String::from("t,x1,x2,x3,x1_pred,x2_pred,x3_pred\n");
        for &j in ol.scored.iter().filter(|&&j| j % stride == 0) {
            let row: Vec<String> = std::iter::once(ol.truth.times[j])
                .chain(ol.truth.states[j].iter().copied())
                .chain(ol.predicted.states[j].iter().copied())
                .map(fmt_f64)
                .collect();
            body.push_str(&row.join(","));
            body.push('\n');
        }
        self.write_csv("open_loop.csv", &body)?;
        self.record("open-loop", StageStatus::Computed);
        Ok(ol)
    }

    pub fn design(&mut self, trained: &TrainedModel) -> Result<DesiredDesign> {
        let design = synthesize(&self.config, &trained.model).map_err(|e| e.at_stage("synthesize"))?;
        self.write_json("design.json", "design", &design)?;
        self.record("synthesize", StageStatus::Computed);
        Ok(design)
    }

    pub fn certificate(&mut self, trained: &TrainedModel, design: &DesiredDesign) -> Result<Certificate> {
        let key = sha256_hex(
            json!({ "stage": "certify", "model": trained.key, "design": self.config.design })
                .to_string()
                .as_bytes(),
        );
        let cert = match self.cached::<Certificate>("certificate", &key) {
            Some(c) => {
                self.record("certify", StageStatus::Reused);
                c
            }
            None => {
                let c = certify_design(&self.config, &trained.model, design).map_err(|e| e.at_stage("certify"))?;
                self.store("certificate", &key, &c)?;
                self.record("certify", StageStatus::Computed);
                c
            }
        };
        self.write_json("certificate.json", "certificate", &cert)?;
        Ok(cert)
    }

    pub fn closed_loop(&mut self, trained: &TrainedModel, design: &DesiredDesign) -> Result<ClosedLoopRun> {
        let run = closed_loop(&self.config, &trained.model, design).map_err(|e| e.at_stage("closed-loop"))?;
        let stride = stride(self.config.closed_loop.dt);
        let mut body = String::from("t,x1,x2,x3,u1,hd,xd1,xd2,xd3\n");
        for j in (0..run.trajectory.len()).step_by(stride) {
            let row: Vec<String> = std::iter::once(run.trajectory.times[j])
                .chain(run.trajectory.states[j].iter().copied())
                .chain(run.trajectory.inputs[j].iter().copied())
                .chain(std::iter::once(run.hd[j]))
                .chain(run.desired.states[j].iter().copied())
                .map(fmt_f64)
                .collect();
            body.push_str(&row.join(","));
            body.push('\n');
        }
        self.write_csv("closed_loop.csv", &body)?;
        self.record("closed-loop", StageStatus::Computed);
        Ok(run)
    }

    /// Retrains, redesigns and re-simulates for every sweep size; failures are recorded per size.
    /// Writes `sweep.csv` with columns `N,t,mse`.
    pub fn sweep(&mut self) -> Result<Vec<SweepRow>> {
        let sizes = match &self.config.sweep {
            Some(s) => s.sizes.clone(),
            None => return Err(Error::InvalidArgument("the configuration disables the sweep".into())),
        };
        let stride = stride(self.config.closed_loop.dt);
        let mut rows = Vec::with_capacity(sizes.len());
        let mut body = String::from("N,t,mse\n");
        for n in sizes {
            let outcome = (|| -> Result<(TrainedModel, ClosedLoopRun)> {
                let trained = self.model(n)?;
                let design = synthesize(&self.config, &trained.model).map_err(|e| e.at_stage("synthesize"))?;
                let run = closed_loop(&self.config, &trained.model, &design).map_err(|e| e.at_stage("closed-loop"))?;
                Ok((trained, run))
            })();
            match outcome {
                Ok((trained, run)) => {
                    for j in (0..run.mse.len()).step_by(stride) {
                        body.push_str(&format!(
                            "{n},{},{}\n",
                            fmt_f64(run.trajectory.times[j]),
                            fmt_f64(run.mse[j])
                        ));
                    }
                    rows.push(SweepRow {
                        samples: n,
                        time_averaged_mse: Some(run.summary.time_averaged_mse),
                        damping_estimate: Some(trained.model.hyperparameters().phi_r[0]),
                        error: None,
                    });
                    self.record(format!("sweep[{n}]"), StageStatus::Computed);
                }
                Err(e) => {
                    log::warn!("sweep size {n} failed: {e}");
                    rows.push(SweepRow {
                        samples: n,
                        time_averaged_mse: None,
                        damping_estimate: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        self.write_csv("sweep.csv", &body)?;
        Ok(rows)
    }

    /// All stages in order; writes `report.json` and returns the report.
    pub fn pipeline(&mut self) -> Result<RunReport> {
        let n = self.config.sampling.samples;
        let trained = self.model(n)?;
        let ol = self.open_loop(&trained)?;
        let design = self.design(&trained)?;
        let cert = self.certificate(&trained, &design)?;
        let run = self.closed_loop(&trained, &design)?;
        let sweep = match self.config.sweep {
            Some(_) => Some(self.sweep()?),
            None => None,
        };
        let hyper = trained.model.hyperparameters().clone();
        let report = RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config_digest: self.digest.clone(),
            seed: self.config.seed,
            samples: n,
            damping_estimate: hyper.phi_r[0],
            resistance_estimate: resistance_estimate(&self.config, &trained.model),
            hyperparameters: hyper,
            nlml: trained.nlml,
            open_loop_rmse: ol.rmse,
            design: DesignSummary {
                x_d: design.x_d.clone(),
                c: design.c,
                r_d: self.config.design.r_d,
            },
            certificate: CertificateSummary::from(&cert),
            closed_loop: run.summary,
            sweep,
        };
        self.write("report.json", &report.to_json()?)?;
        Ok(report)
    }
}

fn stride(dt: f64) -> usize {
    ((CSV_TIME_STRIDE / dt).round() as usize).max(1)
}

/// Reads back the model written by [`Experiment::model`].
pub fn read_model_artifact(path: &Path) -> Result<GpPhsModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let doc = value
        .get("model")
        .and_then(|m| m.get("document"))
        .ok_or_else(|| Error::Integrity(format!("{} is not a model artifact", path.display())))?;
    GpPhsModel::from_document(&serde_json::from_value(doc.clone())?)
}
