//! The squared-exponential kernel, its mixed Hessian, and the PHS kernel built from it.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch};
use faer::{MatMut, Par};
use nalgebra::{DMatrix, DVector};

use super::{Hyperparameters, PhsStructure};
use crate::error::{Error, Result};

/// Jitter, relative to `σ_f²`, added to the Gram diagonal on the first factorization attempt.
pub const BASE_JITTER: f64 = 1e-8;
/// Largest relative jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-4;

/// `exp(−(x − x′)ᵀΛ(x − x′))` with `lambda` the diagonal of `Λ`.
pub fn se_kernel(x: &DVector<f64>, x2: &DVector<f64>, lambda: &[f64]) -> f64 {
    let mut q = 0.0;
    for i in 0..lambda.len() {
        let d = x[i] - x2[i];
        q += lambda[i] * d * d;
    }
    (-q).exp()
}

/// Mixed second derivative `Π_ij = ∂²/∂x_i∂x′_j exp(−‖x − x′‖²_Λ)`
/// `= [2Λ_ii δ_ij − 4Λ_iiΛ_jj d_i d_j]·exp(−dᵀΛd)`, `d = x − x′`.
///
/// This is the covariance of `∇H(x)` and `∇H(x′)` for a unit-scale SE prior on `H`.
pub fn se_hessian(x: &DVector<f64>, x2: &DVector<f64>, lambda: &[f64]) -> DMatrix<f64> {
    let n = lambda.len();
    let mut out = DMatrix::zeros(n, n);
    fill_se_hessian(x.as_slice(), x2.as_slice(), lambda, &mut out);
    out
}

fn fill_se_hessian(x: &[f64], x2: &[f64], lambda: &[f64], out: &mut DMatrix<f64>) {
    let n = lambda.len();
    let mut scaled = [0.0f64; 16];
    let mut heap;
    let scaled: &mut [f64] = if n <= 16 {
        &mut scaled[..n]
    } else {
        heap = vec![0.0; n];
        &mut heap
    };
    let mut q = 0.0;
    for i in 0..n {
        let d = x[i] - x2[i];
        scaled[i] = lambda[i] * d;
        q += scaled[i] * d;
    }
    let k = (-q).exp();
    for j in 0..n {
        for i in 0..n {
            let diag = if i == j { 2.0 * lambda[i] } else { 0.0 };
            out[(i, j)] = (diag - 4.0 * scaled[i] * scaled[j]) * k;
        }
    }
}

/// `∇_{x′} exp(−‖x − x′‖²_Λ) = 2Λ(x − x′)·exp(−‖x − x′‖²_Λ)`.
pub fn se_gradient_wrt_second(x: &DVector<f64>, x2: &DVector<f64>, lambda: &[f64]) -> DVector<f64> {
    let k = se_kernel(x, x2, lambda);
    DVector::from_fn(lambda.len(), |i, _| 2.0 * lambda[i] * (x[i] - x2[i]) * k)
}

/// Prior covariance `Cov(ẋ(x), ẋ(x′)) = σ_f²·Ĵ_R(x)·Π(x, x′)·Ĵ_Rᵀ(x′)`.
pub fn phs_kernel_block(
    structure: &PhsStructure,
    x: &DVector<f64>,
    x2: &DVector<f64>,
    hyper: &Hyperparameters,
) -> DMatrix<f64> {
    let pi = se_hessian(x, x2, &hyper.lambda());
    structure.jr(x, hyper) * pi * structure.jr(x2, hyper).transpose() * hyper.sigma_f.powi(2)
}

/// Noise-free PHS kernel matrix over the columns of `states`, point-major ordering.
/// With `lower_only`, blocks above the diagonal are left zero.
///
/// `Ĵ_R` does not depend on the state for any [`PhsStructure`], so with `A = Ĵ_R` and
/// `w = AΛ(x_i − x_j)` each block is `σ_f²·k·(2AΛAᵀ − 4wwᵀ)`.
pub(crate) fn phs_gram(
    structure: &PhsStructure,
    states: &DMatrix<f64>,
    hyper: &Hyperparameters,
    lower_only: bool,
) -> DMatrix<f64> {
    let n = states.nrows();
    let count = states.ncols();
    let size = n * count;
    let mut gram = DMatrix::zeros(size, size);
    if count == 0 {
        return gram;
    }
    let lambda = hyper.lambda();
    let sf2 = hyper.sigma_f.powi(2);
    let a = structure.jr(&states.column(0).into_owned(), hyper);
    let a_lambda = &a * DMatrix::from_diagonal(&DVector::from_column_slice(&lambda));
    let m = &a_lambda * a.transpose() * 2.0;
    let v = &a_lambda * states;

    let mut w = vec![0.0; n];
    for j in 0..count {
        let xj = states.column(j);
        let vj = v.column(j);
        for i in j..count {
            let xi = states.column(i);
            let mut q = 0.0;
            for d in 0..n {
                let diff = xi[d] - xj[d];
                q += lambda[d] * diff * diff;
            }
            let k = sf2 * (-q).exp();
            let vi = v.column(i);
            for d in 0..n {
                w[d] = vi[d] - vj[d];
            }
            for c in 0..n {
                let col = j * n + c;
                for r in 0..n {
                    gram[(i * n + r, col)] = k * (m[(r, c)] - 4.0 * w[r] * w[c]);
                }
            }
        }
    }
    if !lower_only {
        for c in 0..size {
            for r in (c + 1)..size {
                gram[(c, r)] = gram[(r, c)];
            }
        }
    }
    gram
}

fn add_noise_and_jitter(gram: &mut DMatrix<f64>, hyper: &Hyperparameters, jitter: f64) {
    let n = hyper.noise.len();
    let extra = jitter * hyper.sigma_f.powi(2);
    for k in 0..gram.nrows() {
        gram[(k, k)] += hyper.noise[k % n] + extra;
    }
}

/// Regularized Gram matrix `K_phs + diag(noise) + 1e−8·σ_f²·I` (full, symmetric).
pub fn gram_matrix(structure: &PhsStructure, states: &DMatrix<f64>, hyper: &Hyperparameters) -> DMatrix<f64> {
    let mut gram = phs_gram(structure, states, hyper, false);
    add_noise_and_jitter(&mut gram, hyper, BASE_JITTER);
    gram
}

/// In-place lower Cholesky factor; the strict upper triangle is zeroed. Returns `false` when the
/// matrix is not numerically positive definite.
pub(crate) fn cholesky_lower_in_place(a: &mut DMatrix<f64>) -> bool {
    let size = a.nrows();
    if size == 0 {
        return true;
    }
    let ok = {
        let view = MatMut::from_column_major_slice_mut(a.as_mut_slice(), size, size);
        let par = Par::Seq;
        let mut mem = MemBuffer::new(cholesky_in_place_scratch::<f64>(size, par, Default::default()));
        let stack = MemStack::new(&mut mem);
        cholesky_in_place(view, Default::default(), par, stack, Default::default()).is_ok()
    };
    if ok {
        for c in 1..size {
            for r in 0..c {
                a[(r, c)] = 0.0;
            }
        }
    }
    ok && a.diagonal().iter().all(|d| *d > 0.0 && d.is_finite())
}

/// A factored regularized Gram matrix.
#[derive(Debug, Clone)]
pub(crate) struct GramFactor {
    pub chol: DMatrix<f64>,
    /// Relative jitter that made the factorization succeed.
    pub jitter: f64,
    /// Digest of the regularized (factored) Gram matrix; empty when not requested.
    pub digest: String,
}

/// Factors the regularized Gram matrix, escalating jitter ×10 from [`BASE_JITTER`] up to
/// [`MAX_JITTER`].
pub(crate) fn factor_gram(
    structure: &PhsStructure,
    states: &DMatrix<f64>,
    hyper: &Hyperparameters,
) -> Result<GramFactor> {
    factor_escalating(structure, states, hyper, true)
}

/// [`factor_gram`] without the digest, for objective evaluations.
pub(crate) fn factor_gram_unhashed(
    structure: &PhsStructure,
    states: &DMatrix<f64>,
    hyper: &Hyperparameters,
) -> Result<GramFactor> {
    factor_escalating(structure, states, hyper, false)
}

fn factor_escalating(
    structure: &PhsStructure,
    states: &DMatrix<f64>,
    hyper: &Hyperparameters,
    hashed: bool,
) -> Result<GramFactor> {
    let base = phs_gram(structure, states, hyper, true);
    let mut jitter = BASE_JITTER;
    loop {
        let mut regularized = base.clone();
        add_noise_and_jitter(&mut regularized, hyper, jitter);
        let digest = if hashed {
            lower_digest(&regularized)
        } else {
            String::new()
        };
        if cholesky_lower_in_place(&mut regularized) {
            return Ok(GramFactor {
                chol: regularized,
                jitter,
                digest,
            });
        }
        if jitter >= MAX_JITTER * (1.0 - 1e-9) {
            return Err(Error::IndefiniteGram { jitter });
        }
        jitter *= 10.0;
    }
}

/// Factors with a fixed relative jitter (used when reloading a serialized model).
pub(crate) fn factor_gram_with_jitter(
    structure: &PhsStructure,
    states: &DMatrix<f64>,
    hyper: &Hyperparameters,
    jitter: f64,
) -> Result<GramFactor> {
    let mut regularized = phs_gram(structure, states, hyper, true);
    add_noise_and_jitter(&mut regularized, hyper, jitter);
    let digest = lower_digest(&regularized);
    if cholesky_lower_in_place(&mut regularized) {
        Ok(GramFactor {
            chol: regularized,
            jitter,
            digest,
        })
    } else {
        Err(Error::IndefiniteGram { jitter })
    }
}

// The factorization only reads the lower triangle, so that is what the digest covers.
fn lower_digest(m: &DMatrix<f64>) -> String {
    let mut lower = m.clone();
    lower.fill_upper_triangle(0.0, 1);
    crate::numeric::matrix_digest(&lower)
}
