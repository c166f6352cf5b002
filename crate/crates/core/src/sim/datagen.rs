use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::integrate::rk4_step;
use super::run::step_count;
use crate::error::{Error, Result};
use crate::quadrotor::{OriginalPlant, QuadrotorParams};
use crate::residual::Dataset;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataGenConfig {
    pub trajectories: usize,
    /// Seconds per trajectory.
    pub duration: f64,
    /// Samples (and input updates) per second.
    pub sample_rate: f64,
    pub plant_dt: f64,
    /// Half-widths of the initial-state box `[p, v, theta, omega]`.
    pub initial_box: [f64; 6],
    pub thrust_range: [f64; 2],
    pub torque_range: [f64; 2],
    pub seed: u64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        DataGenConfig {
            trajectories: 3000,
            duration: 0.5,
            sample_rate: 100.0,
            plant_dt: 1e-3,
            initial_box: [1.0, 1.0, 0.5, 0.5, 0.05, 0.1],
            thrust_range: [8.98, 10.98],
            torque_range: [-0.5, 0.5],
            seed: 0,
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Random-input trajectories of the true original plant. Each sample
/// carries the input held over the following sample period.
pub fn generate_training_data(params: &QuadrotorParams, config: &DataGenConfig) -> Result<Dataset> {
    let dt = 1.0 / config.sample_rate;
    let samples = step_count(config.duration, dt)?;
    let ratio = dt / config.plant_dt;
    let substeps = ratio.round() as usize;
    if substeps == 0 || (ratio - substeps as f64).abs() > 1e-9 * ratio {
        return Err(Error::TimeGrid(format!(
            "sample period {dt} is not a multiple of plant step {}",
            config.plant_dt
        )));
    }
    let plant = OriginalPlant::truth(*params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trajectories = Vec::with_capacity(config.trajectories);
    for _ in 0..config.trajectories {
        let mut x: Vec<f64> = config
            .initial_box
            .iter()
            .map(|&w| uniform(&mut rng, -w, w))
            .collect();
        let mut traj = Trajectory::new();
        for k in 0..samples {
            let u = vec![
                uniform(&mut rng, config.thrust_range[0], config.thrust_range[1]),
                uniform(&mut rng, config.torque_range[0], config.torque_range[1]),
            ];
            traj.push(k as f64 * dt, x.clone());
            if k + 1 < samples {
                for _ in 0..substeps {
                    x = rk4_step(&plant, &x, &u, config.plant_dt)?;
                }
            }
            traj.inputs.push(u);
        }
        trajectories.push(traj);
    }
    Ok(Dataset {
        trajectories,
        sample_rate: config.sample_rate,
        duration: config.duration,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> DataGenConfig {
        DataGenConfig {
            trajectories: 20,
            seed,
            ..DataGenConfig::default()
        }
    }

    #[test]
    fn dataset_shape() {
        let ds = generate_training_data(&QuadrotorParams::default(), &small(1)).unwrap();
        assert_eq!(ds.trajectories.len(), 20);
        for t in &ds.trajectories {
            assert_eq!(t.len(), 50);
            assert_eq!(t.inputs.len(), 50);
            assert_eq!(t.state_dim(), 6);
            assert_eq!(t.input_dim(), 2);
            assert!(t.inputs.iter().all(|u| (8.98..10.98).contains(&u[0]) && u[1].abs() <= 0.5));
            assert!(t.states[0].iter().zip([1.0, 1.0, 0.5, 0.5, 0.05, 0.1]).all(|(x, w)| x.abs() <= w));
        }
    }

    #[test]
    fn hover_without_drag_is_constant() {
        let params = QuadrotorParams::default().without_drag();
        let config = DataGenConfig {
            trajectories: 2,
            initial_box: [0.0; 6],
            thrust_range: [params.hover_thrust(); 2],
            torque_range: [0.0; 2],
            ..DataGenConfig::default()
        };
        let ds = generate_training_data(&params, &config).unwrap();
        for t in &ds.trajectories {
            assert!(t.states.iter().all(|x| x.iter().all(|v| *v == 0.0)));
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = generate_training_data(&QuadrotorParams::default(), &small(7)).unwrap();
        let b = generate_training_data(&QuadrotorParams::default(), &small(7)).unwrap();
        let c = generate_training_data(&QuadrotorParams::default(), &small(8)).unwrap();
        let (mut wa, mut wb) = (Vec::new(), Vec::new());
        a.write_csv(&mut wa).unwrap();
        b.write_csv(&mut wb).unwrap();
        assert_eq!(wa, wb);
        assert_ne!(a, c);
    }
}
