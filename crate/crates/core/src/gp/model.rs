use std::path::Path;

use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{MatMut, MatRef, Par};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kernel::{factor_gram, factor_gram_with_jitter, phs_gram, se_kernel, GramFactor};
use super::likelihood::mean_adjusted_outputs;
use super::{Hyperparameters, PhsStructure, RegressionDataset};
use crate::error::{check_dim, Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// A conditioned GP-PHS: hyperparameters, training states, the Cholesky factor of the regularized
/// Gram matrix and the weight vector `α = K⁻¹Ẋ₀`.
///
/// Immutable once built; posterior queries take `&self` and may run concurrently.
#[derive(Debug, Clone)]
pub struct GpPhsModel {
    structure: PhsStructure,
    hyper: Hyperparameters,
    states: DMatrix<f64>,
    alpha: DVector<f64>,
    chol: DMatrix<f64>,
    jitter: f64,
    gram_digest: String,
    lambda: Vec<f64>,
    train_jr: Vec<DMatrix<f64>>,
    /// `Ĵ_R(x_i)ᵀα_i`, the per-point weights of the posterior on `∇H`.
    weights: Vec<DVector<f64>>,
}

/// Versioned on-disk form of a [`GpPhsModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub structure: PhsStructure,
    pub hyperparameters: Hyperparameters,
    /// Training states, one entry per sample.
    pub states: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    /// Relative diagonal jitter used for the factorization.
    pub jitter: f64,
    /// SHA-256 over the regularized Gram matrix.
    pub gram_digest: String,
}

impl GpPhsModel {
    /// Conditions the prior given by `hyper` on `reg`.
    pub fn fit(structure: &PhsStructure, reg: &RegressionDataset, hyper: &Hyperparameters) -> Result<Self> {
        structure.validate()?;
        hyper.validate(structure)?;
        let targets = mean_adjusted_outputs(structure, reg, hyper)?;
        let factor = factor_gram(structure, &reg.states, hyper)?;
        let alpha = solve_with_factor(&factor.chol, &targets);
        Ok(Self::assemble(
            structure.clone(),
            hyper.clone(),
            reg.states.clone(),
            alpha,
            factor,
        ))
    }

    /// The unconditioned prior (no training data).
    pub fn prior(structure: &PhsStructure, hyper: &Hyperparameters) -> Result<Self> {
        let reg = RegressionDataset::empty(structure.state_dim(), structure.input_dim());
        Self::fit(structure, &reg, hyper)
    }

    fn assemble(
        structure: PhsStructure,
        hyper: Hyperparameters,
        states: DMatrix<f64>,
        alpha: DVector<f64>,
        factor: GramFactor,
    ) -> Self {
        let n = states.nrows();
        let train_jr: Vec<DMatrix<f64>> = (0..states.ncols())
            .map(|i| structure.jr(&states.column(i).into_owned(), &hyper))
            .collect();
        let weights = train_jr
            .iter()
            .enumerate()
            .map(|(i, a)| a.transpose() * alpha.rows(i * n, n))
            .collect();
        Self {
            lambda: hyper.lambda(),
            structure,
            hyper,
            states,
            alpha,
            chol: factor.chol,
            jitter: factor.jitter,
            gram_digest: factor.digest,
            train_jr,
            weights,
        }
    }

    pub fn structure(&self) -> &PhsStructure {
        &self.structure
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    /// Training states, `n × N`.
    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Lower Cholesky factor of the regularized Gram matrix.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn gram_digest(&self) -> &str {
        &self.gram_digest
    }

    pub fn state_dim(&self) -> usize {
        self.structure.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.structure.input_dim()
    }

    pub fn training_len(&self) -> usize {
        self.states.ncols()
    }

    /// The regularized Gram matrix this model was factored from (full, symmetric).
    pub fn regularized_gram(&self) -> DMatrix<f64> {
        let mut gram = phs_gram(&self.structure, &self.states, &self.hyper, false);
        let n = self.state_dim();
        let extra = self.jitter * self.hyper.sigma_f.powi(2);
        for k in 0..gram.nrows() {
            gram[(k, k)] += self.hyper.noise[k % n] + extra;
        }
        gram
    }

    fn jr(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.structure.jr(x, &self.hyper)
    }

    /// `Ĝ(x)` under the trained structural parameters.
    pub fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.structure.input_matrix(x, &self.hyper)
    }

    /// Prior covariance of `ẋ` at `x`: `σ_f²·Ĵ_R(x)·2Λ·Ĵ_Rᵀ(x)`.
    pub fn prior_block(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let jr = self.jr(x);
        let two_lambda = DMatrix::from_diagonal(&DVector::from_iterator(
            self.lambda.len(),
            self.lambda.iter().map(|l| 2.0 * l),
        ));
        &jr * two_lambda * jr.transpose() * self.hyper.sigma_f.powi(2)
    }

    /// `k_phs(X, x)`: `nN × n` cross-covariance between the training targets and `ẋ(x)`.
    pub fn cross_covariance(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.state_dim();
        let count = self.training_len();
        let right = self.jr(x).transpose() * self.hyper.sigma_f.powi(2);
        let mut out = DMatrix::zeros(n * count, n);
        for i in 0..count {
            let xi = self.states.column(i).into_owned();
            let pi = super::se_hessian(&xi, x, &self.lambda);
            out.view_mut((i * n, 0), (n, n))
                .copy_from(&(&self.train_jr[i] * pi * &right));
        }
        out
    }

    /// Posterior mean of `∇H` and `H` at `x` (`H` has zero prior mean).
    pub fn posterior_hamiltonian(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = self.state_dim();
        let sf2 = self.hyper.sigma_f.powi(2);
        let mut value = 0.0;
        let mut grad = DVector::zeros(n);
        let mut scaled = vec![0.0; n];
        for (i, w) in self.weights.iter().enumerate() {
            let xi = self.states.column(i);
            let mut q = 0.0;
            for a in 0..n {
                let d = x[a] - xi[a];
                scaled[a] = self.lambda[a] * d;
                q += scaled[a] * d;
            }
            let k = sf2 * (-q).exp();
            let sw: f64 = (0..n).map(|a| scaled[a] * w[a]).sum();
            value += 2.0 * k * sw;
            for a in 0..n {
                grad[a] += k * (2.0 * self.lambda[a] * w[a] - 4.0 * scaled[a] * sw);
            }
        }
        (value, grad)
    }

    /// Posterior mean of the input-free drift, `Ĵ_R(x)·μ(∇H | x, D)`.
    pub fn drift_mean(&self, x: &DVector<f64>) -> DVector<f64> {
        self.jr(x) * self.posterior_hamiltonian(x).1
    }

    /// Posterior variance of each component of `ẋ` at `x`, clamped at zero.
    pub fn posterior_variance(&self, x: &DVector<f64>) -> DVector<f64> {
        let prior = self.prior_block(x).diagonal();
        if self.training_len() == 0 {
            return prior;
        }
        let cross = self.cross_covariance(x);
        let v = self
            .chol
            .solve_lower_triangular(&cross)
            .expect("Cholesky factor has a positive diagonal");
        DVector::from_fn(prior.len(), |d, _| (prior[d] - v.column(d).norm_squared()).max(0.0))
    }

    /// [`GpPhsModel::posterior_variance`] for many points, solving against the factor in blocks.
    pub fn posterior_variance_batch(&self, xs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        const CHUNK: usize = 128;
        let n = self.state_dim();
        let size = self.chol.nrows();
        if size == 0 {
            return xs.iter().map(|x| self.prior_block(x).diagonal()).collect();
        }
        let chol = MatRef::from_column_major_slice(self.chol.as_slice(), size, size);
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(CHUNK) {
            let mut rhs = DMatrix::zeros(size, n * chunk.len());
            for (c, x) in chunk.iter().enumerate() {
                rhs.view_mut((0, c * n), (size, n)).copy_from(&self.cross_covariance(x));
            }
            let cols = rhs.ncols();
            solve_lower_triangular_in_place(
                chol,
                MatMut::from_column_major_slice_mut(rhs.as_mut_slice(), size, cols),
                Par::Seq,
            );
            for (c, x) in chunk.iter().enumerate() {
                let prior = self.prior_block(x).diagonal();
                out.push(DVector::from_fn(n, |d, _| {
                    (prior[d] - rhs.column(c * n + d).norm_squared()).max(0.0)
                }));
            }
        }
        out
    }

    /// Posterior mean and variance of `ẋ` at `x` under input `u`.
    pub fn posterior_dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        check_dim("state", self.state_dim(), x.len())?;
        check_dim("input", self.input_dim(), u.len())?;
        let mut mean = self.drift_mean(x);
        if !u.is_empty() {
            mean += self.input_matrix(x) * u;
        }
        Ok((mean, self.posterior_variance(x)))
    }

    /// Prior value of `exp(−‖x − x′‖²_Λ)` under this model's lengthscales.
    pub fn se_kernel(&self, x: &DVector<f64>, x2: &DVector<f64>) -> f64 {
        se_kernel(x, x2, &self.lambda)
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            schema_version: MODEL_SCHEMA_VERSION,
            structure: self.structure.clone(),
            hyperparameters: self.hyper.clone(),
            states: self.states.column_iter().map(|c| c.iter().copied().collect()).collect(),
            alpha: self.alpha.iter().copied().collect(),
            jitter: self.jitter,
            gram_digest: self.gram_digest.clone(),
        }
    }

    /// Rebuilds a model, refactoring the Gram matrix and checking it against the stored digest.
    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: doc.schema_version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        doc.structure.validate()?;
        doc.hyperparameters.validate(&doc.structure)?;
        let n = doc.structure.state_dim();
        if doc.states.iter().any(|s| s.len() != n) || doc.alpha.len() != n * doc.states.len() {
            return Err(Error::Integrity("model states/alpha have inconsistent shapes".into()));
        }
        let states = DMatrix::from_fn(n, doc.states.len(), |i, k| doc.states[k][i]);
        let factor = factor_gram_with_jitter(&doc.structure, &states, &doc.hyperparameters, doc.jitter)?;
        if factor.digest != doc.gram_digest {
            return Err(Error::Integrity("regularized Gram matrix digest mismatch".into()));
        }
        Ok(Self::assemble(
            doc.structure.clone(),
            doc.hyperparameters.clone(),
            states,
            DVector::from_vec(doc.alpha.clone()),
            factor,
        ))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_document())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_document(&serde_json::from_str(&text)?)
    }
}

fn solve_with_factor(chol: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if rhs.is_empty() {
        return rhs.clone();
    }
    let z = chol
        .solve_lower_triangular(rhs)
        .expect("Cholesky factor has a positive diagonal");
    chol.tr_solve_lower_triangular(&z)
        .expect("Cholesky factor has a positive diagonal")
}
