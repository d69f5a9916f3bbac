use std::io::{Read, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::numeric::fmt_f64;

/// Sampled states and inputs on a strictly increasing time grid (milliseconds).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<DVector<f64>>, inputs: Vec<DVector<f64>>) -> Result<Self> {
        if times.len() != states.len() || times.len() != inputs.len() {
            return Err(Error::InvalidArgument(format!(
                "trajectory lengths differ: {} times, {} states, {} inputs",
                times.len(),
                states.len(),
                inputs.len()
            )));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(format!(
                "trajectory times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        let n = states.first().map_or(0, |s| s.len());
        let m = inputs.first().map_or(0, |u| u.len());
        if states.iter().any(|s| s.len() != n) || inputs.iter().any(|u| u.len() != m) {
            return Err(Error::InvalidArgument("ragged trajectory samples".into()));
        }
        Ok(Self { times, states, inputs })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is empty")
    }

    /// Writes `t,x1,...,xn,u1,...,um` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![fmt_f64(self.times[k])];
            row.extend(self.states[k].iter().map(|&v| fmt_f64(v)));
            row.extend(self.inputs[k].iter().map(|&v| fmt_f64(v)));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
        Ok(())
    }

    /// Reads the layout written by [`Trajectory::write_csv`]; lines starting with `#` are skipped.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let header = r.headers()?.clone();
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let m = header.iter().filter(|h| h.starts_with('u')).count();
        if header.get(0) != Some("t") || header.len() != 1 + n + m {
            return Err(Error::InvalidArgument(format!(
                "unexpected trajectory header {header:?}"
            )));
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        for record in r.records() {
            let record = record?;
            let values = record
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidArgument(format!("bad number in trajectory csv: {e}")))?;
            if values.len() != 1 + n + m {
                return Err(Error::InvalidArgument("short trajectory row".into()));
            }
            times.push(values[0]);
            states.push(DVector::from_column_slice(&values[1..1 + n]));
            inputs.push(DVector::from_column_slice(&values[1 + n..]));
        }
        Self::new(times, states, inputs)
    }
}
