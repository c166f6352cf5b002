use std::io::{Read, Write};

use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// A state with its residual regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub target: Vec<f64>,
}

/// Trajectories of the true system in original (unextended) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub sample_rate: f64,
    pub duration: f64,
    pub seed: u64,
}

const REL_GRID_TOL: f64 = 1e-9;

/// One-step finite-difference residual targets
/// `(x_{k+1} - x_k) / (t_{k+1} - t_k) - f(x_k, u_k)`; the last sample has no
/// target.
pub fn finite_diff_targets<D: Dynamics>(traj: &Trajectory, nominal: &D) -> Result<Vec<Sample>> {
    let n = traj.len();
    if n < 2 {
        return Err(Error::Empty("trajectory needs at least two samples"));
    }
    if traj.inputs.len() < n - 1 {
        return Err(Error::Dimension {
            what: "trajectory inputs",
            expected: n - 1,
            got: traj.inputs.len(),
        });
    }
    let dt0 = traj.times[1] - traj.times[0];
    if !(dt0 > 0.0) {
        return Err(Error::TimeGrid(format!("non-positive time step {dt0}")));
    }
    for w in traj.times.windows(2) {
        let dt = w[1] - w[0];
        if !(dt > 0.0) || ((dt - dt0) / dt0).abs() > REL_GRID_TOL {
            return Err(Error::TimeGrid(format!("non-uniform step {dt} (first step {dt0})")));
        }
    }
    let mut out = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let dt = traj.times[k + 1] - traj.times[k];
        let (x, next) = (&traj.states[k], &traj.states[k + 1]);
        let f = nominal.rhs(x, &traj.inputs[k]);
        let target = (0..x.len()).map(|i| (next[i] - x[i]) / dt - f[i]).collect();
        out.push(Sample {
            x: x.clone(),
            target,
        });
    }
    Ok(out)
}

impl Dataset {
    pub fn sample_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Targets of every trajectory, in order.
    pub fn targets<D: Dynamics>(&self, nominal: &D) -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for traj in &self.trajectories {
            out.extend(finite_diff_targets(traj, nominal)?);
        }
        Ok(out)
    }

    /// Splits off the last `fraction` of the trajectories.
    pub fn split_holdout(&self, fraction: f64) -> (Dataset, Dataset) {
        let n = self.trajectories.len();
        let held = ((n as f64) * fraction).round() as usize;
        let held = held.min(n);
        let mut train = self.clone();
        let test_trajs = train.trajectories.split_off(n - held);
        let test = Dataset {
            trajectories: test_trajs,
            ..self.clone_meta()
        };
        (train, test)
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            trajectories: Vec::new(),
            sample_rate: self.sample_rate,
            duration: self.duration,
            seed: self.seed,
        }
    }

    /// One row per sample: `trajectory_id, t, x0.., u0..`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.trajectories.first().map_or(0, Trajectory::state_dim);
        let m = self.trajectories.first().map_or(0, Trajectory::input_dim);
        let mut header = vec!["trajectory_id".to_string(), "t".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        w.write_record(&header)?;
        for (id, traj) in self.trajectories.iter().enumerate() {
            for k in 0..traj.len() {
                let mut row = vec![id.to_string(), traj.times[k].to_string()];
                row.extend(traj.states[k].iter().map(f64::to_string));
                let u = traj.inputs.get(k).ok_or(Error::Dimension {
                    what: "dataset inputs",
                    expected: traj.len(),
                    got: traj.inputs.len(),
                })?;
                row.extend(u.iter().map(f64::to_string));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the delimited format; the sample rate is inferred from the
    /// first trajectory and `seed` is left at zero.
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("trajectory_id") || header.get(1) != Some("t") {
            return Err(Error::ModelFormat(
                "dataset header must start with trajectory_id,t".into(),
            ));
        }
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let m = header.iter().filter(|h| h.starts_with('u')).count();
        if header.len() != 2 + n + m {
            return Err(Error::ModelFormat(format!("unexpected dataset header {header:?}")));
        }
        let mut trajectories: Vec<Trajectory> = Vec::new();
        let mut current: Option<u64> = None;
        for record in r.records() {
            let record = record?;
            let num = |i: usize| -> Result<f64> {
                record[i]
                    .parse()
                    .map_err(|e| Error::ModelFormat(format!("bad number {:?}: {e}", &record[i])))
            };
            let id: u64 = record[0]
                .parse()
                .map_err(|e| Error::ModelFormat(format!("bad trajectory id: {e}")))?;
            if current != Some(id) {
                trajectories.push(Trajectory::new());
                current = Some(id);
            }
            let traj = trajectories.last_mut().expect("pushed above");
            let x = (2..2 + n).map(num).collect::<Result<Vec<_>>>()?;
            let u = (2 + n..2 + n + m).map(num).collect::<Result<Vec<_>>>()?;
            traj.push(num(1)?, x);
            traj.inputs.push(u);
        }
        for traj in &trajectories {
            traj.check_monotone()?;
        }
        let (sample_rate, duration) = match trajectories.first() {
            Some(t) if t.len() >= 2 => {
                let dt = t.times[1] - t.times[0];
                (1.0 / dt, dt * t.len() as f64)
            }
            _ => (0.0, 0.0),
        };
        Ok(Dataset {
            trajectories,
            sample_rate,
            duration,
            seed: 0,
        })
    }
}
