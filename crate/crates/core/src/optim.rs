//! Derivative-free minimization with the Nelder–Mead simplex method.

/// Nelder–Mead settings. With `adaptive` set, the expansion, contraction and shrink coefficients
/// scale with the dimension (Gao & Han), which behaves much better above a handful of parameters.
#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_iters: usize,
    /// Convergence when every vertex is within `xatol` (∞-norm) of the best one...
    pub xatol: f64,
    /// ...and every vertex value is within `fatol` of the best value.
    pub fatol: f64,
    /// Edge length of the initial axis-aligned simplex.
    pub initial_step: f64,
    pub adaptive: bool,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            xatol: 1e-4,
            fatol: 1e-6,
            initial_step: 0.5,
            adaptive: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best simplex value after each iteration, starting with the initial simplex.
    pub best_so_far: Vec<f64>,
}

impl NelderMead {
    /// Minimizes `f` starting from `x0`. Non-finite objective values are treated as `+∞`.
    pub fn minimize(&self, mut f: impl FnMut(&[f64]) -> f64, x0: &[f64]) -> Minimum {
        let d = x0.len();
        let mut evaluations = 0usize;
        let mut eval = |x: &[f64]| {
            evaluations += 1;
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };
        if d == 0 {
            let value = eval(x0);
            return Minimum {
                x: Vec::new(),
                value,
                iterations: 0,
                evaluations: 1,
                converged: true,
                best_so_far: vec![value],
            };
        }

        let dim = d as f64;
        let (reflect, expand, contract, shrink) = if self.adaptive {
            (1.0, 1.0 + 2.0 / dim, 0.75 - 0.5 / dim, 1.0 - 1.0 / dim)
        } else {
            (1.0, 2.0, 0.5, 0.5)
        };

        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
        simplex.push((x0.to_vec(), eval(x0)));
        for i in 0..d {
            let mut v = x0.to_vec();
            v[i] += self.initial_step;
            let fv = eval(&v);
            simplex.push((v, fv));
        }
        sort_simplex(&mut simplex);

        let mut best_so_far = vec![simplex[0].1];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.max_iters {
            if self.has_converged(&simplex) {
                converged = true;
                break;
            }
            iterations += 1;

            let mut centroid = vec![0.0; d];
            for (v, _) in &simplex[..d] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / dim;
                }
            }
            let worst = simplex[d].clone();
            let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect() };

            let xr = along(reflect);
            let fr = eval(&xr);
            let mut do_shrink = false;
            if fr < simplex[0].1 {
                let xe = along(reflect * expand);
                let fe = eval(&xe);
                simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[d - 1].1 {
                simplex[d] = (xr, fr);
            } else if fr < worst.1 {
                let xc = along(reflect * contract);
                let fc = eval(&xc);
                if fc <= fr {
                    simplex[d] = (xc, fc);
                } else {
                    do_shrink = true;
                }
            } else {
                let xcc = along(-contract);
                let fcc = eval(&xcc);
                if fcc < worst.1 {
                    simplex[d] = (xcc, fcc);
                } else {
                    do_shrink = true;
                }
            }

            if do_shrink {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, x)| b + shrink * (x - b)).collect();
                    let fv = eval(&v);
                    *vertex = (v, fv);
                }
            }
            sort_simplex(&mut simplex);
            best_so_far.push(simplex[0].1);
        }
        if !converged {
            converged = self.has_converged(&simplex);
        }

        let (x, value) = simplex.swap_remove(0);
        Minimum {
            x,
            value,
            iterations,
            evaluations,
            converged,
            best_so_far,
        }
    }

    fn has_converged(&self, simplex: &[(Vec<f64>, f64)]) -> bool {
        let (best, fbest) = (&simplex[0].0, simplex[0].1);
        if !fbest.is_finite() {
            return false;
        }
        simplex[1..].iter().all(|(v, fv)| {
            (fv - fbest).abs() <= self.fatol && v.iter().zip(best).all(|(a, b)| (a - b).abs() <= self.xatol)
        })
    }
}

// Stable sort keeps ties in insertion order, so runs are reproducible.
fn sort_simplex(simplex: &mut [(Vec<f64>, f64)]) {
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
}
