use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::fmt_f64;
use crate::phs::Trajectory;

/// Noisy state observations with inputs, as recorded from the plant.
pub type TrajectoryDataset = Trajectory;

/// Column-aligned states, state derivatives and inputs used for GP regression.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    pub times: Vec<f64>,
    /// `n × N`, one column per sample.
    pub states: DMatrix<f64>,
    /// `n × N`.
    pub derivatives: DMatrix<f64>,
    /// `m × N`.
    pub inputs: DMatrix<f64>,
}

impl RegressionDataset {
    pub fn new(times: Vec<f64>, states: DMatrix<f64>, derivatives: DMatrix<f64>, inputs: DMatrix<f64>) -> Result<Self> {
        let count = times.len();
        if states.ncols() != count || derivatives.ncols() != count || inputs.ncols() != count {
            return Err(Error::InvalidArgument(format!(
                "regression columns differ: {} times, {} states, {} derivatives, {} inputs",
                count,
                states.ncols(),
                derivatives.ncols(),
                inputs.ncols()
            )));
        }
        if states.nrows() != derivatives.nrows() {
            return Err(Error::InvalidArgument(
                "states and derivatives differ in dimension".into(),
            ));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&states) || !finite(&derivatives) || !finite(&inputs) {
            return Err(Error::InvalidArgument(
                "regression dataset contains non-finite values".into(),
            ));
        }
        Ok(Self {
            times,
            states,
            derivatives,
            inputs,
        })
    }

    /// An empty dataset of the given dimensions.
    pub fn empty(state_dim: usize, input_dim: usize) -> Self {
        Self {
            times: Vec::new(),
            states: DMatrix::zeros(state_dim, 0),
            derivatives: DMatrix::zeros(state_dim, 0),
            inputs: DMatrix::zeros(input_dim, 0),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    /// Writes `t,x1..xn,xdot1..xdotn,u1..um` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("xdot{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![fmt_f64(self.times[k])];
            row.extend(self.states.column(k).iter().map(|&v| fmt_f64(v)));
            row.extend(self.derivatives.column(k).iter().map(|&v| fmt_f64(v)));
            row.extend(self.inputs.column(k).iter().map(|&v| fmt_f64(v)));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<regression csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let header = r.headers()?.clone();
        let n = header.iter().filter(|h| h.starts_with("xdot")).count();
        let m = header.iter().filter(|h| h.starts_with('u')).count();
        if header.get(0) != Some("t") || header.len() != 1 + 2 * n + m {
            return Err(Error::InvalidArgument(format!(
                "unexpected regression header {header:?}"
            )));
        }
        let mut times = Vec::new();
        let mut columns = Vec::new();
        for record in r.records() {
            let values = record?
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidArgument(format!("bad number in regression csv: {e}")))?;
            if values.len() != header.len() {
                return Err(Error::InvalidArgument("short regression row".into()));
            }
            times.push(values[0]);
            columns.push(values[1..].to_vec());
        }
        let count = times.len();
        let pick = |offset: usize, rows: usize| DMatrix::from_fn(rows, count, |i, k| columns[k][offset + i]);
        Self::new(times, pick(0, n), pick(n, n), pick(2 * n, m))
    }
}

/// Savitzky–Golay convolution weights for the `deriv`-th derivative at the window centre, in units
/// of samples (divide by `h^deriv` for physical units).
pub fn savgol_coefficients(window: usize, poly_order: usize, deriv: usize) -> Result<Vec<f64>> {
    if window.is_multiple_of(2) || window < poly_order + 2 || deriv > poly_order {
        return Err(Error::InvalidArgument(format!(
            "Savitzky–Golay needs an odd window ≥ order + 2 and deriv ≤ order (window {window}, order {poly_order}, deriv {deriv})"
        )));
    }
    let half = (window / 2) as f64;
    let vander = DMatrix::from_fn(window, poly_order + 1, |k, j| (k as f64 - half).powi(j as i32));
    let normal = vander.transpose() * &vander;
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("ill-conditioned Savitzky–Golay design".into()))?;
    // Row `deriv` of (VᵀV)⁻¹Vᵀ fits the deriv-th Taylor coefficient; multiply by deriv!.
    let fit = chol.solve(&vander.transpose());
    let factorial: f64 = (1..=deriv).map(|k| k as f64).product();
    Ok(fit.row(deriv).iter().map(|c| c * factorial).collect())
}

/// Smooths and differentiates each state dimension with a Savitzky–Golay filter.
///
/// Samples whose full window does not fit are dropped; the smoothed states populate `X`, and the
/// inputs are carried over unfiltered.
pub fn estimate_derivatives(data: &TrajectoryDataset, window: usize, poly_order: usize) -> Result<RegressionDataset> {
    let count = data.len();
    if window.is_multiple_of(2) || window < poly_order + 2 {
        return Err(Error::InvalidArgument(format!(
            "filter window must be odd and ≥ order + 2 (window {window}, order {poly_order})"
        )));
    }
    if count <= window {
        return Err(Error::InvalidArgument(format!(
            "need more samples than the filter window ({count} ≤ {window})"
        )));
    }
    let step = (data.times[count - 1] - data.times[0]) / (count - 1) as f64;
    let jitter = data
        .times
        .windows(2)
        .map(|w| ((w[1] - w[0]) - step).abs() / step)
        .fold(0.0, f64::max);
    if jitter > 1e-9 {
        return Err(Error::UnsupportedGrid { jitter });
    }

    let smooth = savgol_coefficients(window, poly_order, 0)?;
    let slope = savgol_coefficients(window, poly_order, 1)?;
    let half = window / 2;
    let kept = count - 2 * half;
    let n = data.state_dim();
    let m = data.input_dim();
    let mut states = DMatrix::zeros(n, kept);
    let mut derivatives = DMatrix::zeros(n, kept);
    let mut inputs = DMatrix::zeros(m, kept);
    let mut times = Vec::with_capacity(kept);
    for (col, centre) in (half..count - half).enumerate() {
        times.push(data.times[centre]);
        let mut x = DVector::zeros(n);
        let mut dx = DVector::zeros(n);
        for (k, (cs, cd)) in smooth.iter().zip(&slope).enumerate() {
            let sample = &data.states[centre - half + k];
            x.axpy(*cs, sample, 1.0);
            dx.axpy(*cd / step, sample, 1.0);
        }
        states.set_column(col, &x);
        derivatives.set_column(col, &dx);
        inputs.set_column(col, &data.inputs[centre]);
    }
    RegressionDataset::new(times, states, derivatives, inputs)
}
