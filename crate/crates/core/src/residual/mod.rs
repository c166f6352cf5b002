//! Lower-triangular residual dynamics and their training pipeline.
//!
//! Block `i` of the residual reads only sub-states `0..=i`, so adding it to a
//! pure-feedback model keeps the model in pure-feedback form with the same
//! flat output.

mod data;
mod io;
mod mlp;
mod train;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::quadrotor::{drag, QuadrotorParams};
use crate::taylor::Scalar;

pub use data::{finite_diff_targets, Dataset, Sample};
pub use io::{load_model, save_model, FORMAT_VERSION};
pub use mlp::{ForwardCache, MlpBlock, MlpGrad};
pub use train::{
    grad, loss, loss_on_dataset, train, train_on_dataset, AdamState, ResidualGrad, TrainConfig,
    TrainingLog,
};

/// One block of a lower-triangular residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResidualBlock {
    Zero,
    /// Network over sub-states `0..=i`.
    Mlp(MlpBlock),
    /// Closed-form drag `-linear x_i - quadratic |x_i| x_i` on the block's
    /// own sub-state.
    Drag { linear: f64, quadratic: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerTriangularResidual {
    r: usize,
    m: usize,
    blocks: Vec<ResidualBlock>,
    enabled: Vec<bool>,
}

impl LowerTriangularResidual {
    /// The identically-zero residual.
    pub fn zero(r: usize, m: usize) -> Self {
        LowerTriangularResidual {
            r,
            m,
            blocks: vec![ResidualBlock::Zero; r],
            enabled: vec![false; r],
        }
    }

    /// Ground-truth quadrotor drag as an exact block-2 closure.
    pub fn quadrotor_drag(params: &QuadrotorParams) -> Self {
        Self::zero(4, 2).with_block(
            1,
            ResidualBlock::Drag {
                linear: params.linear_drag,
                quadratic: params.parasitic_drag,
            },
        )
    }

    /// Linear drag `-(C_r / m) v` only.
    pub fn quadrotor_linear_drag(params: &QuadrotorParams) -> Self {
        Self::zero(4, 2).with_block(
            1,
            ResidualBlock::Drag {
                linear: params.linear_drag / params.mass,
                quadratic: 0.0,
            },
        )
    }

    /// Replaces block `i`; non-zero blocks are enabled.
    pub fn with_block(mut self, i: usize, block: ResidualBlock) -> Self {
        if let ResidualBlock::Mlp(mlp) = &block {
            assert_eq!(mlp.input_dim, (i + 1) * self.m, "block {i} must read sub-states 0..={i}");
            assert_eq!(mlp.output_dim, self.m);
        }
        self.enabled[i] = !matches!(block, ResidualBlock::Zero);
        self.blocks[i] = block;
        self
    }

    pub fn set_enabled(&mut self, i: usize, enabled: bool) {
        self.enabled[i] = enabled;
    }

    pub fn relative_degree(&self) -> usize {
        self.r
    }

    pub fn width(&self) -> usize {
        self.m
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ResidualBlock] {
        &mut self.blocks
    }

    pub fn enabled(&self) -> &[bool] {
        &self.enabled
    }

    pub fn is_zero(&self) -> bool {
        self.blocks
            .iter()
            .zip(&self.enabled)
            .all(|(b, e)| !e || matches!(b, ResidualBlock::Zero))
    }

    /// Output of block `i` given sub-states `0..=i` (at least); `None` when
    /// the block is disabled or identically zero.
    pub fn block_output<T: Scalar>(&self, i: usize, xs: &[T]) -> Option<Vec<T>> {
        if !self.enabled[i] {
            return None;
        }
        let m = self.m;
        match &self.blocks[i] {
            ResidualBlock::Zero => None,
            ResidualBlock::Mlp(mlp) => Some(mlp.forward(&xs[..(i + 1) * m])),
            ResidualBlock::Drag { linear, quadratic } => {
                Some(drag(*linear, *quadratic, &xs[i * m..(i + 1) * m]))
            }
        }
    }

    /// Stacked residual `[D_1(x_1); D_2(x_1, x_2); ...]`.
    pub fn eval<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let m = self.m;
        let mut out = vec![T::constant(0.0); self.r * m];
        for i in 0..self.r {
            if let Some(d) = self.block_output(i, &x[..(i + 1) * m]) {
                out[i * m..(i + 1) * m].copy_from_slice(&d);
            }
        }
        out
    }

    /// Dimension-checked evaluation on a plain state.
    pub fn residual_eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("residual state", self.r * self.m, x.len())?;
        Ok(self.eval(x))
    }

    /// Checks that the block layout matches a model with `(r, m)`.
    pub fn check_structure(&self, r: usize, m: usize) -> Result<()> {
        if self.r != r || self.m != m {
            return Err(Error::Structure(format!(
                "residual has (r, m) = ({}, {}), model has ({r}, {m})",
                self.r, self.m
            )));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if let ResidualBlock::Mlp(mlp) = b {
                if mlp.input_dim != (i + 1) * m || mlp.output_dim != m {
                    return Err(Error::Structure(format!(
                        "block {i} network is {} -> {}, expected {} -> {m}",
                        mlp.input_dim,
                        mlp.output_dim,
                        (i + 1) * m
                    )));
                }
                if mlp.w1.len() != mlp.hidden * mlp.input_dim
                    || mlp.w2.len() != mlp.output_dim * mlp.hidden
                    || mlp.b1.len() != mlp.hidden
                    || mlp.b2.len() != mlp.output_dim
                    || mlp.input_mean.len() != mlp.input_dim
                    || mlp.input_scale.len() != mlp.input_dim
                {
                    return Err(Error::Structure(format!("block {i} weight shapes are inconsistent")));
                }
            }
        }
        Ok(())
    }

    /// Trainable parameters of all network blocks, in block order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in &self.blocks {
            if let ResidualBlock::Mlp(mlp) = b {
                mlp.parameters_into(&mut out);
            }
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let mut rest = params;
        for b in &mut self.blocks {
            if let ResidualBlock::Mlp(mlp) = b {
                rest = mlp.set_parameters(rest);
            }
        }
        assert!(rest.is_empty(), "parameter vector too long");
    }

    /// SHA-256 over the structure and the bit patterns of every parameter.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.r as u64).to_le_bytes());
        h.update((self.m as u64).to_le_bytes());
        for (b, e) in self.blocks.iter().zip(&self.enabled) {
            h.update([*e as u8]);
            let words: Vec<f64> = match b {
                ResidualBlock::Zero => vec![0.0],
                ResidualBlock::Drag { linear, quadratic } => vec![1.0, *linear, *quadratic],
                ResidualBlock::Mlp(mlp) => {
                    let mut w = vec![2.0, mlp.hidden as f64];
                    mlp.parameters_into(&mut w);
                    w.extend_from_slice(&mlp.input_mean);
                    w.extend_from_slice(&mlp.input_scale);
                    w
                }
            };
            for v in words {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taylor::{jacobian, Dual};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_network_residual(seed: u64) -> LowerTriangularResidual {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut res = LowerTriangularResidual::zero(4, 2);
        for i in 0..4 {
            let mut mlp = MlpBlock::new((i + 1) * 2, 8, 2, &mut rng);
            mlp.b2 = vec![0.1, -0.2];
            res = res.with_block(i, ResidualBlock::Mlp(mlp));
        }
        res
    }

    #[test]
    fn disabled_residual_is_zero() {
        let res = LowerTriangularResidual::zero(4, 2);
        assert_eq!(res.residual_eval(&[1.0; 8]).unwrap(), vec![0.0; 8]);
        let mut net = random_network_residual(1);
        for i in 0..4 {
            net.set_enabled(i, false);
        }
        assert_eq!(net.residual_eval(&[0.3; 8]).unwrap(), vec![0.0; 8]);
    }

    #[test]
    fn drag_closure_value() {
        let res = LowerTriangularResidual::quadrotor_drag(&QuadrotorParams::default());
        let x = [0.0, 0.0, 1.0, 0.0, 9.81, 0.0, 0.0, 0.0];
        let out = res.residual_eval(&x).unwrap();
        assert!((out[2] + 0.11).abs() < 1e-15);
        assert_eq!(out[3], 0.0);
        assert!(out[..2].iter().chain(&out[4..]).all(|v| *v == 0.0));
    }

    #[test]
    fn jacobian_is_block_lower_triangular() {
        let res = random_network_residual(2);
        let x = [0.1, -0.4, 0.3, 0.9, 9.0, 0.1, -0.2, 0.5];
        let jac = jacobian::<_, Error>(|z: &[Dual]| Ok(res.eval(z)), &x).unwrap();
        for row in 0..8 {
            for col in 0..8 {
                if col / 2 > row / 2 {
                    assert_eq!(jac[(row, col)], 0.0, "entry ({row}, {col})");
                }
            }
        }
        // diagonal blocks are generically non-zero
        assert!(jac[(6, 6)] != 0.0 || jac[(6, 7)] != 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let res = LowerTriangularResidual::zero(4, 2);
        assert!(matches!(res.residual_eval(&[0.0; 6]), Err(Error::Dimension { .. })));
        assert!(res.check_structure(3, 2).is_err());
        assert!(res.check_structure(4, 2).is_ok());
    }

    #[test]
    fn parameters_round_trip_and_checksum() {
        let mut res = random_network_residual(3);
        let p = res.parameters();
        let sum = res.checksum();
        let mut q = p.clone();
        q[0] += 1e-12;
        res.set_parameters(&q);
        assert_ne!(res.checksum(), sum);
        res.set_parameters(&p);
        assert_eq!(res.checksum(), sum);
    }
}
