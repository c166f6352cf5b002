use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Time-stamped states and inputs, optionally with per-step controller
/// wall-clock durations.
///
/// `inputs[k]` is the input applied from `times[k]`; a trajectory may carry
/// one fewer input than states (the final state has no input).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub controller_ns: Option<Vec<u64>>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, x: Vec<f64>) {
        self.times.push(t);
        self.states.push(x);
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// Copy without the first `n` samples.
    pub fn skip(&self, n: usize) -> Trajectory {
        let n_in = n.min(self.inputs.len());
        Trajectory {
            times: self.times.iter().skip(n).copied().collect(),
            states: self.states.iter().skip(n).cloned().collect(),
            inputs: self.inputs.iter().skip(n_in).cloned().collect(),
            controller_ns: self
                .controller_ns
                .as_ref()
                .map(|ns| ns.iter().skip(n_in).copied().collect()),
        }
    }

    /// Strictly increasing timestamps.
    pub fn check_monotone(&self) -> Result<()> {
        if self.times.windows(2).all(|w| w[1] > w[0]) {
            Ok(())
        } else {
            Err(Error::TimeGrid("timestamps are not strictly increasing".into()))
        }
    }

    /// Writes `t, x0.., u0.., [controller_ns]`. Rows without an input
    /// leave the input cells empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        if self.controller_ns.is_some() {
            header.push("controller_ns".into());
        }
        w.write_record(&header)?;
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(f64::to_string));
            match self.inputs.get(k) {
                Some(u) => row.extend(u.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat(String::new()).take(m)),
            }
            if let Some(ns) = &self.controller_ns {
                row.push(ns.get(k).map(u64::to_string).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Trajectory> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let m = header.iter().filter(|h| h.starts_with('u')).count();
        let timed = header.iter().any(|h| h == "controller_ns");
        let mut traj = Trajectory::new();
        if timed {
            traj.controller_ns = Some(Vec::new());
        }
        for record in r.records() {
            let record = record?;
            let num = |i: usize| -> Result<f64> {
                record[i]
                    .parse()
                    .map_err(|e| Error::ModelFormat(format!("bad number {:?}: {e}", &record[i])))
            };
            let t = num(0)?;
            let x = (1..=n).map(num).collect::<Result<Vec<_>>>()?;
            traj.push(t, x);
            if m > 0 && !record[n + 1].is_empty() {
                traj.inputs
                    .push((n + 1..n + 1 + m).map(num).collect::<Result<Vec<_>>>()?);
            }
            if let Some(ns) = traj.controller_ns.as_mut() {
                let cell = &record[n + m + 1];
                if !cell.is_empty() {
                    ns.push(cell.parse().map_err(|e| {
                        Error::ModelFormat(format!("bad controller_ns {cell:?}: {e}"))
                    })?);
                }
            }
        }
        Ok(traj)
    }
}
