//! Pure-feedback nominal models with known inverse maps.
//!
//! A model with relative degree `r` and block width `m` has state
//! `x = [x_1; ...; x_r]`, each `x_i` in R^m, and dynamics
//! `x_i' = f_i(x_1, ..., x_{i+1})` with `x_{r+1} = u`. The inverse maps
//! satisfy `h_k(x_1, ..., x_k, f_k(x_1, ..., x_{k+1})) = x_{k+1}`.
//!
//! Block indices are zero-based throughout: block `i` reads sub-states
//! `0..=i+1`, inverse map `k` recovers sub-state `k + 1` (sub-state `r` is
//! the input).

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::taylor::{constants, jacobian, Dual, JetError, Scalar};

pub trait PureFeedbackModel: Send + Sync {
    /// Number of blocks `r`.
    fn relative_degree(&self) -> usize;

    /// Block width `m` (also the input dimension).
    fn width(&self) -> usize;

    fn state_dim(&self) -> usize {
        self.relative_degree() * self.width()
    }

    /// Nominal block `i`; `xs` holds sub-states `0..=i+1` concatenated.
    fn block<T: Scalar>(&self, i: usize, xs: &[T]) -> Vec<T>;

    /// Inverse map `k`; `xs` holds sub-states `0..=k`, `xdot` the
    /// derivative of sub-state `k`. Returns sub-state `k + 1`.
    fn inverse<T: Scalar>(&self, k: usize, xs: &[T], xdot: &[T]) -> Result<Vec<T>, JetError>;

    /// Validity of sub-state `k` (`k == r` tests the input).
    fn sub_state_valid(&self, _k: usize, _xk: &[f64]) -> Result<(), String> {
        Ok(())
    }
}

/// Stacked nominal dynamics without dimension or validity checks.
pub fn nominal_rhs<M: PureFeedbackModel, T: Scalar>(model: &M, x: &[T], u: &[T]) -> Vec<T> {
    let (r, m) = (model.relative_degree(), model.width());
    let mut full = Vec::with_capacity((r + 1) * m);
    full.extend_from_slice(x);
    full.extend_from_slice(u);
    let mut out = Vec::with_capacity(r * m);
    for i in 0..r {
        out.extend(model.block(i, &full[..(i + 2) * m]));
    }
    out
}

/// Checks `(x, u)` against the model's validity region.
pub fn check_valid<M: PureFeedbackModel>(model: &M, x: &[f64], u: &[f64]) -> Result<()> {
    let (r, m) = (model.relative_degree(), model.width());
    for k in 0..r {
        model
            .sub_state_valid(k, &x[k * m..(k + 1) * m])
            .map_err(Error::Domain)?;
    }
    model.sub_state_valid(r, u).map_err(Error::Domain)
}

/// Evaluates the stacked nominal dynamics at a valid `(x, u)`.
pub fn eval_dynamics<M: PureFeedbackModel>(model: &M, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("input", model.width(), u.len())?;
    check_valid(model, x, u)?;
    Ok(nominal_rhs(model, x, u))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    /// `|det D_{x_{i+1}} f_i|` per block.
    pub determinants: Vec<f64>,
    pub passed: Vec<bool>,
}

impl RegularityReport {
    pub fn all_passed(&self) -> bool {
        self.passed.iter().all(|&p| p)
    }
}

/// Partial Jacobian of block `i` with respect to its last argument.
pub fn block_partial_jacobian<M: PureFeedbackModel>(
    model: &M,
    i: usize,
    x: &[f64],
    u: &[f64],
) -> Result<DMatrix<f64>> {
    let m = model.width();
    let mut full: Vec<f64> = x.to_vec();
    full.extend_from_slice(u);
    let fixed: Vec<Dual> = constants(&full[..(i + 1) * m]);
    let free = &full[(i + 1) * m..(i + 2) * m];
    jacobian::<_, Error>(
        |z| {
            let mut xs = fixed.clone();
            xs.extend_from_slice(z);
            Ok(model.block(i, &xs))
        },
        free,
    )
}

/// Determinants of the partial Jacobians `D_{x_{i+1}} f_i`; a block passes
/// when the magnitude exceeds `tol`.
pub fn check_regularity<M: PureFeedbackModel>(
    model: &M,
    x: &[f64],
    u: &[f64],
    tol: f64,
) -> Result<RegularityReport> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("input", model.width(), u.len())?;
    let mut determinants = Vec::with_capacity(model.relative_degree());
    for i in 0..model.relative_degree() {
        let jac = block_partial_jacobian(model, i, x, u)?;
        determinants.push(jac.determinant().abs());
    }
    let passed = determinants.iter().map(|d| *d > tol).collect();
    Ok(RegularityReport {
        determinants,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseIdentityReport {
    /// Worst `||h_k(.., f_k(..)) - x_{k+1}||_inf` per block over all samples.
    pub max_violation: Vec<f64>,
    pub samples: usize,
    pub tol: f64,
}

impl InverseIdentityReport {
    pub fn passed(&self) -> bool {
        self.max_violation.iter().all(|v| *v <= self.tol)
    }

    pub fn worst(&self) -> f64 {
        self.max_violation.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks `h_k(x_1..x_k, f_k(x_1..x_{k+1})) = x_{k+1}` on every sample.
/// Violations (including failing inverse maps) are reported, not raised.
pub fn verify_inverse_identity<M: PureFeedbackModel>(
    model: &M,
    samples: &[(Vec<f64>, Vec<f64>)],
    tol: f64,
) -> InverseIdentityReport {
    let (r, m) = (model.relative_degree(), model.width());
    let mut max_violation = vec![0.0_f64; r];
    for (x, u) in samples {
        let mut full = x.clone();
        full.extend_from_slice(u);
        for k in 0..r {
            let fk = model.block(k, &full[..(k + 2) * m]);
            let violation = match model.inverse(k, &full[..(k + 1) * m], &fk) {
                Ok(next) => next
                    .iter()
                    .zip(&full[(k + 1) * m..(k + 2) * m])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
                Err(_) => f64::INFINITY,
            };
            let violation = if violation.is_nan() {
                f64::INFINITY
            } else {
                violation
            };
            max_violation[k] = max_violation[k].max(violation);
        }
    }
    InverseIdentityReport {
        max_violation,
        samples: samples.len(),
        tol,
    }
}

/// Chain of `r` integrators of width `m`: `x_i' = x_{i+1}`, `x_r' = u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntegratorChain {
    pub r: usize,
    pub m: usize,
}

impl IntegratorChain {
    pub fn new(r: usize, m: usize) -> Self {
        assert!(r >= 1 && m >= 1);
        IntegratorChain { r, m }
    }
}

impl PureFeedbackModel for IntegratorChain {
    fn relative_degree(&self) -> usize {
        self.r
    }

    fn width(&self) -> usize {
        self.m
    }

    fn block<T: Scalar>(&self, i: usize, xs: &[T]) -> Vec<T> {
        xs[(i + 1) * self.m..(i + 2) * self.m].to_vec()
    }

    fn inverse<T: Scalar>(&self, _k: usize, _xs: &[T], xdot: &[T]) -> Result<Vec<T>, JetError> {
        Ok(xdot.to_vec())
    }
}
