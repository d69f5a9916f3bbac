use nalgebra::DVector;

use super::{eval_dynamics, PortHamiltonian, Trajectory};
use crate::error::{check_dim, Error, Result};

/// Anything that can be integrated: `ẋ = f(x, u)`.
pub trait VectorField {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
}

impl<P: PortHamiltonian + ?Sized> VectorField for P {
    fn state_dim(&self) -> usize {
        PortHamiltonian::state_dim(self)
    }
    fn input_dim(&self) -> usize {
        PortHamiltonian::input_dim(self)
    }
    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        eval_dynamics(self, x, u)
    }
}

fn rk4_step<F, U>(field: &F, input: &U, t: f64, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: VectorField + ?Sized,
    U: Fn(f64) -> DVector<f64>,
{
    let half = t + 0.5 * h;
    let u_half = input(half);
    let k1 = field.rhs(x, &input(t))?;
    let k2 = field.rhs(&(x + &k1 * (0.5 * h)), &u_half)?;
    let k3 = field.rhs(&(x + &k2 * (0.5 * h)), &u_half)?;
    let k4 = field.rhs(&(x + &k3 * h), &input(t + h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

fn check_finite(x: &DVector<f64>, time: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::IntegrationBlowup { time })
    }
}

/// Integrates `field` with classic fixed-step RK4 on the grid `t_k = k·dt`, `k = 0..=round(t_end/dt)`.
pub fn simulate<F, U>(field: &F, x0: &DVector<f64>, input: U, t_end: f64, dt: f64) -> Result<Trajectory>
where
    F: VectorField + ?Sized,
    U: Fn(f64) -> DVector<f64>,
{
    if !(dt > 0.0 && dt.is_finite()) || !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "simulate needs dt > 0 and t_end > 0 (got dt = {dt}, t_end = {t_end})"
        )));
    }
    check_dim("initial state", field.state_dim(), x0.len())?;
    let steps = ((t_end / dt).round() as usize).max(1);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    check_finite(&x, 0.0)?;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let u = input(t);
        check_dim("input", field.input_dim(), u.len())?;
        times.push(t);
        states.push(x.clone());
        inputs.push(u);
        if k < steps {
            x = rk4_step(field, &input, t, &x, dt)?;
            check_finite(&x, (k + 1) as f64 * dt)?;
        }
    }
    Trajectory::new(times, states, inputs)
}

/// Integrates `field` and reports the state at each of the requested `times`.
///
/// Each interval between consecutive sample times is split into the smallest number of equal RK4
/// steps no longer than `max_dt`. The first sample time carries `x0`.
pub fn sample<F, U>(field: &F, x0: &DVector<f64>, input: U, times: &[f64], max_dt: f64) -> Result<Trajectory>
where
    F: VectorField + ?Sized,
    U: Fn(f64) -> DVector<f64>,
{
    if times.is_empty() {
        return Err(Error::InvalidArgument("no sample times".into()));
    }
    if !(max_dt > 0.0 && max_dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("max_dt must be positive, got {max_dt}")));
    }
    check_dim("initial state", field.state_dim(), x0.len())?;
    let mut states = Vec::with_capacity(times.len());
    let mut inputs = Vec::with_capacity(times.len());
    let mut x = x0.clone();
    check_finite(&x, times[0])?;
    for (i, &t) in times.iter().enumerate() {
        if i > 0 {
            let t0 = times[i - 1];
            let span = t - t0;
            if !(span > 0.0) {
                return Err(Error::InvalidArgument(
                    "sample times must be strictly increasing".into(),
                ));
            }
            let substeps = (span / max_dt - 1e-9).ceil().max(1.0) as usize;
            let h = span / substeps as f64;
            for s in 0..substeps {
                let ts = t0 + s as f64 * h;
                x = rk4_step(field, &input, ts, &x, h)?;
                check_finite(&x, ts + h)?;
            }
        }
        let u = input(t);
        check_dim("input", field.input_dim(), u.len())?;
        states.push(x.clone());
        inputs.push(u);
    }
    Trajectory::new(times.to_vec(), states, inputs)
}
