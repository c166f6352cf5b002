use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Sample};
use super::mlp::{MlpBlock, MlpGrad};
use super::{LowerTriangularResidual, ResidualBlock};
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Which residual blocks get a network; the rest stay zero.
    pub learned_blocks: Vec<bool>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 256,
            seed: 0,
            hidden: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learned_blocks: vec![true, true, false, false],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub initial_loss: f64,
    /// Full-dataset summed loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Adam moments over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grad.len(), self.first.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * grad[i];
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.first[i] / bc1;
            let vhat = self.second[i] / bc2;
            params[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
        }
    }
}

/// Per-block gradients; `None` for blocks without parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGrad {
    pub blocks: Vec<Option<MlpGrad>>,
}

impl ResidualGrad {
    /// Flattened in the order of [`LowerTriangularResidual::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.blocks.iter().flatten() {
            g.flatten_into(&mut out);
        }
        out
    }
}

fn check_targets(res: &LowerTriangularResidual, sample: &Sample) -> Result<()> {
    let m = res.width();
    for (i, on) in res.enabled().iter().enumerate() {
        if *on && (sample.target.len() < (i + 1) * m || sample.x.len() < (i + 1) * m) {
            return Err(Error::Structure(format!(
                "block {i} needs {} state/target rows, sample has {}/{}",
                (i + 1) * m,
                sample.x.len(),
                sample.target.len()
            )));
        }
    }
    Ok(())
}

/// Summed squared error over the enabled blocks' rows.
pub fn loss<'a, I>(res: &LowerTriangularResidual, samples: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let m = res.width();
    let mut total = 0.0;
    for s in samples {
        check_targets(res, s)?;
        for i in (0..res.relative_degree()).filter(|&i| res.enabled()[i]) {
            if let Some(out) = res.block_output(i, &s.x[..(i + 1) * m]) {
                let rows = &s.target[i * m..(i + 1) * m];
                total += rows.iter().zip(&out).map(|(t, o)| (t - o) * (t - o)).sum::<f64>();
            }
        }
    }
    Ok(total)
}

pub fn loss_on_dataset<D: Dynamics>(
    res: &LowerTriangularResidual,
    dataset: &Dataset,
    nominal: &D,
) -> Result<f64> {
    loss(res, &dataset.targets(nominal)?)
}

/// Exact gradient of the summed loss over `batch` by reverse accumulation.
pub fn grad<'a, I>(res: &LowerTriangularResidual, batch: I) -> Result<ResidualGrad>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let m = res.width();
    let mut blocks: Vec<Option<MlpGrad>> = res
        .blocks()
        .iter()
        .map(|b| match b {
            ResidualBlock::Mlp(mlp) => Some(MlpGrad::zeros(mlp)),
            _ => None,
        })
        .collect();
    let mut dout = vec![0.0; m];
    for s in batch {
        check_targets(res, s)?;
        for (i, slot) in blocks.iter_mut().enumerate() {
            let (Some(g), ResidualBlock::Mlp(mlp)) = (slot.as_mut(), &res.blocks()[i]) else {
                continue;
            };
            if !res.enabled()[i] {
                continue;
            }
            let cache = mlp.forward_cached(&s.x[..(i + 1) * m]);
            for (o, d) in dout.iter_mut().enumerate() {
                *d = 2.0 * (cache.out[o] - s.target[i * m + o]);
            }
            mlp.backward(&cache, &dout, g);
        }
    }
    Ok(ResidualGrad { blocks })
}

fn input_statistics(samples: &[Sample], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for d in 0..dim {
            mean[d] += s.x[d];
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; dim];
    for s in samples {
        for d in 0..dim {
            var[d] += (s.x[d] - mean[d]).powi(2);
        }
    }
    let scale = var.into_iter().map(|v| (v / n).sqrt()).collect();
    (mean, scale)
}

/// Trains a lower-triangular residual with Adam on shuffled minibatches.
/// Deterministic for a fixed `config.seed`.
pub fn train(
    samples: &[Sample],
    r: usize,
    m: usize,
    config: &TrainConfig,
) -> Result<(LowerTriangularResidual, TrainingLog)> {
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if config.learned_blocks.len() != r {
        return Err(Error::Structure(format!(
            "learned block mask has {} entries, model has {r} blocks",
            config.learned_blocks.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut res = LowerTriangularResidual::zero(r, m);
    for (i, learn) in config.learned_blocks.iter().enumerate() {
        if *learn {
            let dim = (i + 1) * m;
            let mut mlp = MlpBlock::new(dim, config.hidden, m, &mut rng);
            let (mean, scale) = input_statistics(samples, dim.min(samples[0].x.len()));
            if mean.len() != dim {
                return Err(Error::Structure(format!(
                    "block {i} reads {dim} coordinates, samples have {}",
                    samples[0].x.len()
                )));
            }
            mlp.set_normalization(mean, scale);
            res = res.with_block(i, ResidualBlock::Mlp(mlp));
        }
    }

    let initial_loss = loss(&res, samples)?;
    let mut params = res.parameters();
    let mut adam = AdamState::new(
        params.len(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let batch_size = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let g = grad(&res, chunk.iter().map(|&k| &samples[k]))?.flatten();
            adam.update(&mut params, &g);
            res.set_parameters(&params);
        }
        let l = loss(&res, samples)?;
        if !l.is_finite() {
            return Err(Error::Diverged { epoch, loss: l });
        }
        debug!("epoch {epoch}: loss {l:.6e}");
        epoch_losses.push(l);
    }
    info!(
        "trained residual (seed {}): loss {:.4e} -> {:.4e}",
        config.seed,
        initial_loss,
        epoch_losses.last().copied().unwrap_or(initial_loss)
    );
    Ok((
        res,
        TrainingLog {
            initial_loss,
            epoch_losses,
        },
    ))
}

/// Finite-difference targets from `dataset` against `nominal`, then [`train`].
pub fn train_on_dataset<D: Dynamics>(
    dataset: &Dataset,
    nominal: &D,
    r: usize,
    m: usize,
    config: &TrainConfig,
) -> Result<(LowerTriangularResidual, TrainingLog)> {
    train(&dataset.targets(nominal)?, r, m, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fabricated(res: &LowerTriangularResidual, n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let target = res.eval(&x);
                Sample { x, target }
            })
            .collect()
    }

    fn network(seed: u64) -> LowerTriangularResidual {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut res = LowerTriangularResidual::zero(4, 2);
        for i in 0..2 {
            let mut mlp = MlpBlock::new((i + 1) * 2, 32, 2, &mut rng);
            mlp.b1.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
            mlp.b2 = vec![0.05, -0.02];
            mlp.set_normalization(vec![0.1; (i + 1) * 2], vec![0.8; (i + 1) * 2]);
            res = res.with_block(i, ResidualBlock::Mlp(mlp));
        }
        res
    }

    /// Central differences over every parameter (the oracle for [`grad`]).
    fn fd_gradient(res: &LowerTriangularResidual, batch: &[Sample], h: f64) -> Vec<f64> {
        let p = res.parameters();
        let mut probe = res.clone();
        (0..p.len())
            .map(|k| {
                let mut q = p.clone();
                q[k] = p[k] + h;
                probe.set_parameters(&q);
                let up = loss(&probe, batch).unwrap();
                q[k] = p[k] - h;
                probe.set_parameters(&q);
                let down = loss(&probe, batch).unwrap();
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let res = network(4);
        let mut batch = fabricated(&res, 10, 5);
        for s in &mut batch {
            s.target.iter_mut().for_each(|t| *t += 0.3);
        }
        let analytic = grad(&res, &batch).unwrap().flatten();
        let fd = fd_gradient(&res, &batch, 1e-5);
        let scale = fd.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        for (a, f) in analytic.iter().zip(&fd) {
            let rel = (a - f).abs() / f.abs().max(1e-3 * scale);
            assert!(rel < 1e-4, "analytic {a} vs fd {f}");
        }
    }

    #[test]
    fn gradient_vanishes_at_zero_loss() {
        let res = network(6);
        let batch = fabricated(&res, 16, 7);
        assert_eq!(loss(&res, &batch).unwrap(), 0.0);
        assert!(grad(&res, &batch).unwrap().flatten().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn output_bias_gradient_is_linear_in_error() {
        let res = network(8);
        let base = fabricated(&res, 10, 9);
        let shift = |c: f64| -> Vec<Sample> {
            base.iter()
                .map(|s| Sample {
                    x: s.x.clone(),
                    target: s.target.iter().map(|t| t - c).collect(),
                })
                .collect()
        };
        let g1 = grad(&res, &shift(0.1)).unwrap();
        let g2 = grad(&res, &shift(0.2)).unwrap();
        let b1 = &g1.blocks[1].as_ref().unwrap().b2;
        let b2 = &g2.blocks[1].as_ref().unwrap().b2;
        for (a, b) in b1.iter().zip(b2) {
            assert!((b - 2.0 * a).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn zero_residual_loss_is_target_energy() {
        let res = LowerTriangularResidual::zero(4, 2).with_block(
            1,
            ResidualBlock::Drag {
                linear: 0.0,
                quadratic: 0.0,
            },
        );
        let samples = vec![Sample {
            x: vec![0.0; 8],
            target: vec![9.0, 9.0, 1.0, 2.0, 9.0, 9.0, 9.0, 9.0],
        }];
        // only block 1 (rows 2..4) is enabled
        assert_eq!(loss(&res, &samples).unwrap(), 5.0);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = AdamState::new(2, 0.1, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -1.0];
        adam.update(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-8);
        assert!((p[1] + 0.9).abs() < 1e-8);
        assert_eq!(adam.step, 1);
    }

    fn zero_target_samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Sample {
                x: (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                target: vec![0.0; 8],
            })
            .collect()
    }

    #[test]
    fn training_is_deterministic() {
        let samples = zero_target_samples(600, 1);
        let config = TrainConfig {
            seed: 3,
            epochs: 3,
            ..TrainConfig::default()
        };
        let (a, log) = train(&samples, 4, 2, &config).unwrap();
        let (b, _) = train(&samples, 4, 2, &config).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        assert_eq!(log.epoch_losses.len(), 3);
    }

    #[test]
    fn zero_targets_drive_output_to_zero() {
        let samples = zero_target_samples(150_000, 1);
        let config = TrainConfig {
            seed: 3,
            ..TrainConfig::default()
        };
        let (res, log) = train(&samples, 4, 2, &config).unwrap();
        assert_eq!(log.epoch_losses.len(), 20);
        let held_out = zero_target_samples(2000, 2);
        let mse = loss(&res, held_out.iter()).unwrap() / (held_out.len() * 8) as f64;
        assert!(mse < 1e-6, "validation mse {mse}");
    }

    #[test]
    fn mask_length_is_checked() {
        let samples = vec![Sample {
            x: vec![0.0; 8],
            target: vec![0.0; 8],
        }];
        let config = TrainConfig {
            learned_blocks: vec![true],
            ..TrainConfig::default()
        };
        assert!(matches!(train(&samples, 4, 2, &config), Err(Error::Structure(_))));
    }
}
