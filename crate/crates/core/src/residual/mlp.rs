use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::taylor::Scalar;

/// One-hidden-layer GeLU network with built-in input standardization.
///
/// Weights are row-major: `w1` is `hidden x input_dim`, `w2` is
/// `output_dim x hidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpBlock {
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
}

/// Intermediate values of a plain forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub z: Vec<f64>,
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub out: Vec<f64>,
}

/// Gradients in the same layout as the block parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGrad {
    pub fn zeros(block: &MlpBlock) -> Self {
        MlpGrad {
            w1: vec![0.0; block.w1.len()],
            b1: vec![0.0; block.b1.len()],
            w2: vec![0.0; block.w2.len()],
            b2: vec![0.0; block.b2.len()],
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
    }
}

fn gelu_prime(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)) + x * (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

impl MlpBlock {
    /// Glorot-uniform weights, zero biases, identity normalization.
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, output_dim: usize, rng: &mut R) -> Self {
        let glorot = |fan_in: usize, fan_out: usize, n: usize, rng: &mut R| -> Vec<f64> {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        let w1 = glorot(input_dim, hidden, hidden * input_dim, rng);
        let w2 = glorot(hidden, output_dim, output_dim * hidden, rng);
        MlpBlock {
            input_dim,
            hidden,
            output_dim,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; output_dim],
            input_mean: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn parameters_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
    }

    /// Overwrites the parameters from `src`, returning the unread tail.
    pub fn set_parameters<'a>(&mut self, src: &'a [f64]) -> &'a [f64] {
        let mut rest = src;
        for dst in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        rest
    }

    /// Sets the standardization from per-dimension mean and spread;
    /// degenerate spreads fall back to 1.
    pub fn set_normalization(&mut self, mean: Vec<f64>, scale: Vec<f64>) {
        assert_eq!(mean.len(), self.input_dim);
        assert_eq!(scale.len(), self.input_dim);
        self.input_mean = mean;
        self.input_scale = scale
            .into_iter()
            .map(|s| if s.is_finite() && s > 1e-12 { s } else { 1.0 })
            .collect();
    }

    pub fn forward<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.input_dim);
        let z: Vec<T> = x
            .iter()
            .zip(self.input_mean.iter().zip(&self.input_scale))
            .map(|(&xi, (mu, s))| (xi - *mu) / *s)
            .collect();
        let act: Vec<T> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
                let mut acc = T::constant(self.b1[j]);
                for (zi, w) in z.iter().zip(row) {
                    acc = acc + *zi * *w;
                }
                acc.gelu()
            })
            .collect();
        (0..self.output_dim)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                let mut acc = T::constant(self.b2[o]);
                for (h, w) in act.iter().zip(row) {
                    acc = acc + *h * *w;
                }
                acc
            })
            .collect()
    }

    pub fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        let z: Vec<f64> = x
            .iter()
            .zip(self.input_mean.iter().zip(&self.input_scale))
            .map(|(xi, (mu, s))| (xi - mu) / s)
            .collect();
        let pre: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
                row.iter().zip(&z).fold(self.b1[j], |acc, (w, zi)| acc + zi * w)
            })
            .collect();
        let act: Vec<f64> = pre.iter().map(|&a| a.gelu()).collect();
        let out = (0..self.output_dim)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                row.iter().zip(&act).fold(self.b2[o], |acc, (w, h)| acc + h * w)
            })
            .collect();
        ForwardCache { z, pre, act, out }
    }

    /// Accumulates `d(loss)/d(params)` given `d(loss)/d(out)`.
    pub fn backward(&self, cache: &ForwardCache, dout: &[f64], grad: &mut MlpGrad) {
        let mut dact = vec![0.0; self.hidden];
        for (o, g) in dout.iter().enumerate() {
            grad.b2[o] += g;
            let row = o * self.hidden;
            for j in 0..self.hidden {
                grad.w2[row + j] += g * cache.act[j];
                dact[j] += g * self.w2[row + j];
            }
        }
        for j in 0..self.hidden {
            let dpre = dact[j] * gelu_prime(cache.pre[j]);
            grad.b1[j] += dpre;
            let row = j * self.input_dim;
            for (i, zi) in cache.z.iter().enumerate() {
                grad.w1[row + i] += dpre * zi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taylor::{Dual, Jet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block() -> MlpBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut b = MlpBlock::new(4, 32, 2, &mut rng);
        b.b1.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        b.set_normalization(vec![0.1, -0.2, 0.0, 0.3], vec![0.5, 1.5, 0.7, 2.0]);
        b
    }

    #[test]
    fn scalar_forward_value_slots_match_plain() {
        let b = block();
        let x = [0.3, -0.7, 1.1, 0.05];
        let plain = b.forward(&x);
        let cached = b.forward_cached(&x).out;
        let jets: Vec<Jet> = x.iter().map(|&v| Jet::variable(v, 3)).collect();
        let duals: Vec<Dual> = x.iter().enumerate().map(|(i, &v)| Dual::variable(v, i, 4)).collect();
        let jo = b.forward(&jets);
        let dout = b.forward(&duals);
        for o in 0..2 {
            assert_eq!(plain[o], jo[o].value());
            assert_eq!(plain[o], dout[o].value());
            assert!((plain[o] - cached[o]).abs() < 1e-14);
        }
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for x in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = ((x + h).gelu() - (x - h).gelu()) / (2.0 * h);
            assert!((fd - gelu_prime(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn parameter_round_trip() {
        let mut b = block();
        let mut p = Vec::new();
        b.parameters_into(&mut p);
        assert_eq!(p.len(), b.parameter_count());
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        assert!(b.set_parameters(&shifted).is_empty());
        let mut back = Vec::new();
        b.parameters_into(&mut back);
        assert_eq!(back, shifted);
    }

    #[test]
    fn degenerate_scale_falls_back_to_one() {
        let mut b = block();
        b.set_normalization(vec![0.0; 4], vec![0.0, 2.0, f64::NAN, 1e-20]);
        assert_eq!(b.input_scale, vec![1.0, 2.0, 1.0, 1.0]);
    }
}
