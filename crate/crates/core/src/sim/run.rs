use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::controller::Controller;
use super::integrate::{rk4_step, rk4_step_timed};
use super::reference::Reference;
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::flat_map::FlatnessDiffeomorphism;
use crate::pure_feedback::PureFeedbackModel;
use crate::trajectory::Trajectory;

/// Mean Euclidean distance between the first two state coordinates and the
/// reference over every sample of `traj`.
pub fn position_error(traj: &Trajectory, reference: &Reference) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::Empty("trajectory for position error"));
    }
    let total: f64 = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, x)| {
            let p = reference.position_at(t);
            (x[0] - p[0]).hypot(x[1] - p[1])
        })
        .sum();
    Ok(total / traj.len() as f64)
}

/// Number of steps of size `dt` covering `duration`.
pub fn step_count(duration: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(duration > 0.0) {
        return Err(Error::TimeGrid(format!("duration {duration} with step {dt}")));
    }
    Ok((duration / dt - 1e-9).ceil() as usize)
}

/// Median and standard deviation of per-step controller times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub median_ns: f64,
    pub mean_ns: f64,
    pub std_ns: f64,
    pub samples: usize,
}

impl TimingStats {
    /// Statistics over `ns` after discarding the first `warmup` entries.
    pub fn from_samples(ns: &[u64], warmup: usize) -> Option<Self> {
        let rest = ns.get(warmup..).filter(|r| !r.is_empty())?;
        let mut sorted: Vec<f64> = rest.iter().map(|&v| v as f64).collect();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Some(TimingStats {
            median_ns: median,
            mean_ns: mean,
            std_ns: var.sqrt(),
            samples: n,
        })
    }
}

/// Replays the flat-map input of the reference on `plant`.
///
/// The input is re-synthesized at every RK4 stage time, so the rollout is
/// exact up to integration error whenever the diffeomorphism matches the
/// plant. The initial state is the flat-map state of the reference at `t = 0`.
pub fn open_loop_rollout<M, D>(
    plant: &D,
    diffeo: &FlatnessDiffeomorphism<M>,
    reference: &Reference,
    dt: f64,
    duration: f64,
) -> Result<Trajectory>
where
    M: PureFeedbackModel,
    D: Dynamics + ?Sized,
{
    let r = diffeo.beta();
    let input_at = |t: f64| diffeo.input_from_flat(&reference.jets(t, r)?);
    let n = step_count(duration, dt)?;
    let (x0, u0) = diffeo.state_and_input(&reference.jets(0.0, r)?)?;
    let mut traj = Trajectory::new();
    traj.push(0.0, x0);
    traj.inputs.push(u0);
    for k in 0..n {
        let t = k as f64 * dt;
        let x = traj.states.last().expect("seeded with the initial state");
        let next = rk4_step_timed(plant, t, x, dt, input_at)?;
        let t_next = (k + 1) as f64 * dt;
        traj.push(t_next, next);
        if k + 1 < n {
            traj.inputs.push(input_at(t_next)?);
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedLoopConfig {
    pub duration: f64,
    pub control_dt: f64,
    pub plant_dt: f64,
    /// Controller calls excluded from timing statistics.
    pub timing_warmup: usize,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        ClosedLoopConfig {
            duration: 14.0,
            control_dt: 0.01,
            plant_dt: 1e-3,
            timing_warmup: 100,
        }
    }
}

impl ClosedLoopConfig {
    fn substeps(&self) -> Result<usize> {
        let ratio = self.control_dt / self.plant_dt;
        let n = ratio.round();
        if !(n >= 1.0) || (ratio - n).abs() > 1e-9 * ratio {
            return Err(Error::TimeGrid(format!(
                "control step {} is not a multiple of plant step {}",
                self.control_dt, self.plant_dt
            )));
        }
        Ok(n as usize)
    }
}

/// Outcome of a closed-loop simulation. A controller failure stops the run
/// and leaves the trajectory up to the failing step.
#[derive(Debug)]
pub struct ClosedLoopRun {
    pub trajectory: Trajectory,
    pub failure: Option<Error>,
}

impl ClosedLoopRun {
    pub fn into_result(self) -> Result<Trajectory> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self.trajectory),
        }
    }

    pub fn timing(&self, warmup: usize) -> Option<TimingStats> {
        TimingStats::from_samples(self.trajectory.controller_ns.as_deref()?, warmup)
    }
}

/// Zero-order-hold loop: the controller runs every `control_dt`, the plant
/// is integrated with RK4 sub-steps of `plant_dt`.
pub fn closed_loop_run<D, C>(
    plant: &D,
    controller: &mut C,
    x0: &[f64],
    config: &ClosedLoopConfig,
) -> Result<ClosedLoopRun>
where
    D: Dynamics + ?Sized,
    C: Controller + ?Sized,
{
    let n = step_count(config.duration, config.control_dt)?;
    let substeps = config.substeps()?;
    let mut traj = Trajectory::new();
    traj.controller_ns = Some(Vec::with_capacity(n));
    traj.push(0.0, x0.to_vec());
    if let Err(e) = controller.reset(0.0, x0) {
        return Ok(ClosedLoopRun {
            trajectory: traj,
            failure: Some(e),
        });
    }
    let mut x = x0.to_vec();
    for k in 0..n {
        let t = k as f64 * config.control_dt;
        let start = Instant::now();
        let u = controller.control(t, &x);
        let elapsed = start.elapsed().as_nanos() as u64;
        let u = match u {
            Ok(u) => u,
            Err(e) => {
                return Ok(ClosedLoopRun {
                    trajectory: traj,
                    failure: Some(e),
                })
            }
        };
        for _ in 0..substeps {
            x = rk4_step(plant, &x, &u, config.plant_dt)?;
        }
        traj.inputs.push(u);
        traj.controller_ns.as_mut().expect("set above").push(elapsed);
        traj.push((k + 1) as f64 * config.control_dt, x.clone());
    }
    Ok(ClosedLoopRun {
        trajectory: traj,
        failure: None,
    })
}
