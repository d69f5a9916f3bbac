use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold below which an eigenvalue of `GGᵀ` counts as zero.
const RANK_TOLERANCE: f64 = 1e-10;
/// Entries this close to −1, 0 or 1 are snapped when snapping keeps `G⊥G = 0`.
const SNAP_TOLERANCE: f64 = 1e-12;

/// Full-rank left annihilator `G⊥` of a constant input matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annihilator {
    /// `(n − m) × n`, orthonormal rows.
    pub gperp: DMatrix<f64>,
}

/// Orthonormal basis of the left null space of `g`, in a canonical (reduced row echelon, then
/// Gram–Schmidt) form so that the result does not depend on eigen-solver sign conventions.
pub fn left_annihilator(g: &DMatrix<f64>) -> Result<Annihilator> {
    let (n, m) = g.shape();
    if m > n {
        return Err(Error::NoAnnihilator { rank: m, expected: 0 });
    }
    let ggt = g * g.transpose();
    let eig = ggt.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let null: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i].abs() <= RANK_TOLERANCE * scale)
        .collect();
    let rank = n - null.len();
    if rank != m {
        return Err(Error::NoAnnihilator { rank, expected: n - m });
    }
    let k = null.len();
    let mut basis = DMatrix::from_fn(k, n, |r, c| eig.eigenvectors[(c, null[r])]);
    row_reduce(&mut basis);
    if m > 0 {
        // Eigenvectors of GGᵀ carry errors of order ε·cond(G)²; project them back exactly.
        let gtg = g.transpose() * g;
        let correction = gtg
            .cholesky()
            .ok_or(Error::NoAnnihilator { rank, expected: n - m })?
            .solve(&g.transpose());
        basis = &basis - (&basis * g) * correction;
    }
    gram_schmidt_rows(&mut basis);

    let snapped = basis.map(|v| {
        let r = v.round();
        if r.abs() <= 1.0 && (v - r).abs() <= SNAP_TOLERANCE {
            r
        } else {
            v
        }
    });
    let gperp = if (&snapped * g).amax() == 0.0 { snapped } else { basis };
    Ok(Annihilator { gperp })
}

fn row_reduce(a: &mut DMatrix<f64>) {
    let (rows, cols) = a.shape();
    let mut lead = 0;
    for col in 0..cols {
        if lead == rows {
            break;
        }
        let pivot = (lead..rows)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .expect("non-empty range");
        if a[(pivot, col)].abs() <= 1e-12 {
            continue;
        }
        a.swap_rows(lead, pivot);
        let p = a[(lead, col)];
        for c in 0..cols {
            a[(lead, c)] /= p;
        }
        for r in 0..rows {
            if r != lead {
                let f = a[(r, col)];
                if f != 0.0 {
                    for c in 0..cols {
                        a[(r, c)] -= f * a[(lead, c)];
                    }
                }
            }
        }
        lead += 1;
    }
}

fn gram_schmidt_rows(a: &mut DMatrix<f64>) {
    for i in 0..a.nrows() {
        for j in 0..i {
            let d = a.row(i).dot(&a.row(j));
            let rj = a.row(j).into_owned();
            let updated = a.row(i) - rj * d;
            a.row_mut(i).copy_from(&updated);
        }
        let norm = a.row(i).norm();
        a.row_mut(i).unscale_mut(norm);
    }
}
