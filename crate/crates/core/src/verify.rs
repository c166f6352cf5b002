//! Property suites exercised by the `verify` command and the acceptance
//! tests. Each suite measures a worst-case quantity and compares it with a
//! fixed tolerance.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::Dynamics;
use crate::error::Result;
use crate::flat_map::{AugmentedModel, FlatnessDiffeomorphism};
use crate::nmpc::{solve_ocp, OcpConfig, OcpGuess};
use crate::pure_feedback::{verify_inverse_identity, IntegratorChain};
use crate::quadrotor::{sample_valid_point, ExtendedPlant, Quadrotor, QuadrotorParams};
use crate::residual::{grad, loss, train, LowerTriangularResidual, MlpBlock, ResidualBlock, Sample, TrainConfig};
use crate::sim::{
    closed_loop_run, generate_training_data, ClosedLoopConfig, Controller, DataGenConfig,
    DerivativeSource, FlatTrackingController, Reference, DEFAULT_GAINS,
};
use crate::taylor::{jacobian, Dual, Jet, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst measured quantity (error, violation, ...).
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl SuiteResult {
    fn below(name: &'static str, measured: f64, tolerance: f64, detail: String) -> Self {
        SuiteResult {
            name,
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail,
        }
    }
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} measured {:.3e} (tol {:.1e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Flip the sign of the attitude inverse map in the inverse-identity
    /// suite.
    pub fault_injection: bool,
}

/// Central difference of order `k` (1..=4) with two Richardson steps.
pub fn central_difference(f: &dyn Fn(f64) -> f64, t: f64, k: usize, h: f64) -> f64 {
    let raw = |h: f64| match k {
        1 => (f(t + h) - f(t - h)) / (2.0 * h),
        2 => (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h),
        3 => (f(t + 2.0 * h) - 2.0 * f(t + h) + 2.0 * f(t - h) - f(t - 2.0 * h)) / (2.0 * h.powi(3)),
        4 => {
            (f(t + 2.0 * h) - 4.0 * f(t + h) + 6.0 * f(t) - 4.0 * f(t - h) + f(t - 2.0 * h))
                / h.powi(4)
        }
        _ => panic!("difference order {k} is not supported"),
    };
    let first = |h: f64| (4.0 * raw(h / 2.0) - raw(h)) / 3.0;
    (16.0 * first(h / 2.0) - first(h)) / 15.0
}

fn relative_error(exact: f64, approx: f64, floor: f64) -> f64 {
    (exact - approx).abs() / exact.abs().max(floor)
}

/// Residual with random networks on the first two blocks.
pub fn random_network_residual(seed: u64, hidden: usize) -> LowerTriangularResidual {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = LowerTriangularResidual::zero(4, 2);
    for i in 0..2 {
        let mut mlp = MlpBlock::new((i + 1) * 2, hidden, 2, &mut rng);
        for b in mlp.b1.iter_mut().chain(mlp.b2.iter_mut()) {
            *b = rng.gen_range(-0.1..0.1);
        }
        for w in mlp.w2.iter_mut() {
            *w *= 0.1;
        }
        res = res.with_block(i, ResidualBlock::Mlp(mlp));
    }
    res
}

pub fn inverse_identity(options: &VerifyOptions) -> SuiteResult {
    let mut q = Quadrotor::default();
    if options.fault_injection {
        q = q.with_fault_injection();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let samples: Vec<_> = (0..1000).map(|_| sample_valid_point(&mut rng)).collect();
    let report = verify_inverse_identity(&q, &samples, 1e-9);
    SuiteResult::below(
        "inverse identities",
        report.worst(),
        1e-9,
        format!("{} samples, per block {:?}", report.samples, report.max_violation),
    )
}

fn composite<T: Scalar>(t: T) -> T {
    let a = (t * 1.3).sin().exp() * (t * t + 2.0).sqrt();
    let b = t.erf() * 0.3 + 1.0;
    let c = (t * t + 1.0).atan2(-t + 2.0) * t.cos();
    a / b + c
}

/// Jet derivatives of elementary compositions and of the flat-map levels
/// against finite differences.
pub fn jet_chain_rule(options: &VerifyOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x6a);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let t = rng.gen_range(-1.5..1.5);
        let jet = composite(Jet::variable(t, 4));
        for k in 1..=3 {
            let fd = central_difference(&|s| composite(s), t, k, 0.05);
            worst = worst.max(relative_error(jet.derivative(k), fd, 1.0));
        }
    }
    // velocity and attitude levels of the flat map along a reference
    let params = QuadrotorParams::default();
    let diffeo = FlatnessDiffeomorphism::construct(
        Quadrotor::new(params),
        Arc::new(random_network_residual(options.seed, 8)),
    )?;
    let reference = Reference::lemniscate();
    for _ in 0..10 {
        let t = rng.gen_range(0.0..14.0);
        let levels = diffeo.levels(&reference.jets(t, 4)?, 3)?;
        for (level, width) in [(1usize, 2usize), (2, 2)] {
            for c in 0..width {
                let state = |s: f64| {
                    diffeo
                        .levels(&reference.jets(s, 4).expect("order is in range"), 3)
                        .expect("reference stays in the domain")[level][c]
                        .value()
                };
                for k in 1..=2 {
                    let fd = central_difference(&state, t, k, 0.05);
                    let exact = levels[level][c].derivative(k);
                    worst = worst.max(relative_error(exact, fd, 1.0));
                }
            }
        }
    }
    Ok(SuiteResult::below(
        "jet chain rule",
        worst,
        1e-6,
        "compositions and flat-map levels, orders 1-3".into(),
    ))
}

/// Backpropagated training gradient against central differences.
pub fn mlp_gradient(options: &VerifyOptions) -> Result<SuiteResult> {
    let res = random_network_residual(options.seed ^ 0x9b, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x9c);
    let batch: Vec<Sample> = (0..16)
        .map(|_| Sample {
            x: (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            target: (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    let analytic = grad(&res, &batch)?.flatten();
    let params = res.parameters();
    let mut worst = 0.0f64;
    let h = 1e-5;
    let mut probe = res.clone();
    for i in (0..params.len()).step_by(3) {
        let mut p = params.clone();
        p[i] += h;
        probe.set_parameters(&p);
        let up = loss(&probe, &batch)?;
        p[i] -= 2.0 * h;
        probe.set_parameters(&p);
        let down = loss(&probe, &batch)?;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], fd, 1e-2));
    }
    Ok(SuiteResult::below(
        "network gradient",
        worst,
        1e-4,
        format!("{} parameters, every third checked", params.len()),
    ))
}

/// Entries of the residual Jacobian above the block diagonal.
pub fn triangular_zeros(options: &VerifyOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x71);
    let mut res = LowerTriangularResidual::zero(4, 2);
    for i in 0..4 {
        res = res.with_block(i, ResidualBlock::Mlp(MlpBlock::new((i + 1) * 2, 8, 2, &mut rng)));
    }
    let mut worst = 0.0f64;
    let mut lower_nonzero = 0;
    for _ in 0..20 {
        let (x, _) = sample_valid_point(&mut rng);
        let jac = jacobian::<_, crate::Error>(|z: &[Dual]| Ok(res.eval(z)), &x)?;
        for row in 0..8 {
            for col in 0..8 {
                if col / 2 > row / 2 {
                    worst = worst.max(jac[(row, col)].abs());
                } else if jac[(row, col)] != 0.0 {
                    lower_nonzero += 1;
                }
            }
        }
    }
    let mut result = SuiteResult::below(
        "triangular Jacobian",
        worst,
        0.0,
        format!("{lower_nonzero} non-zero entries on or below the diagonal blocks"),
    );
    result.passed &= lower_nonzero > 0;
    Ok(result)
}

/// The recursion against the closed-form attitude level with linear drag.
pub fn closed_form_attitude(options: &VerifyOptions) -> Result<SuiteResult> {
    let params = QuadrotorParams::default();
    let drag = LowerTriangularResidual::quadrotor_linear_drag(&params);
    let diffeo = FlatnessDiffeomorphism::construct(Quadrotor::new(params), Arc::new(drag))?;
    let c = params.linear_drag / params.mass;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x3f);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let y: Vec<Jet> = (0..2)
            .map(|_| {
                let d: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
                Jet::lift(rng.gen_range(-2.0..2.0), &d).expect("finite")
            })
            .collect();
        let levels = diffeo.levels(&y, 3)?;
        let (v, a) = (
            [y[0].derivative(1), y[1].derivative(1)],
            [y[0].derivative(2), y[1].derivative(2)],
        );
        let ax = a[0] + c * v[0];
        let ay = a[1] + c * v[1] + params.gravity;
        let thrust = params.mass * ax.hypot(ay);
        let theta = (-ax).atan2(ay);
        worst = worst
            .max((levels[2][0].value() - thrust).abs())
            .max((levels[2][1].value() - theta).abs());
    }
    Ok(SuiteResult::below(
        "closed-form attitude level",
        worst,
        1e-9,
        "100 random flat-output stacks".into(),
    ))
}

/// `d/dt x(t) - f(x(t), u(t)) - D(x(t))` along references, with the state
/// derivative taken by finite differences of the flat-map state.
pub fn dynamic_consistency(options: &VerifyOptions) -> Result<SuiteResult> {
    let params = QuadrotorParams::default();
    let q = Quadrotor::new(params);
    let residuals = [
        LowerTriangularResidual::zero(4, 2),
        LowerTriangularResidual::quadrotor_drag(&params),
        random_network_residual(options.seed ^ 0x55, 16),
    ];
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x56);
    for res in residuals {
        let diffeo = FlatnessDiffeomorphism::construct(q, Arc::new(res))?;
        for reference in [Reference::circle(), Reference::lemniscate()] {
            for _ in 0..10 {
                let t = rng.gen_range(0.5..13.5);
                let (x, u) = diffeo.state_and_input(&reference.jets(t, 4)?)?;
                let rhs = diffeo.augmented().rhs(&x, &u);
                for i in 0..x.len() {
                    let state = |s: f64| {
                        diffeo
                            .state_from_flat(&reference.jets(s, 4).expect("order is in range"))
                            .expect("reference stays in the domain")[i]
                    };
                    let fd = central_difference(&state, t, 1, 0.02);
                    worst = worst.max((fd - rhs[i]).abs());
                }
            }
        }
    }
    Ok(SuiteResult::below(
        "dynamic consistency",
        worst,
        1e-5,
        "nominal, exact drag and network residuals".into(),
    ))
}

/// On-reference flat control equals the open-loop flat-map input.
pub fn controller_consistency(options: &VerifyOptions) -> Result<SuiteResult> {
    let params = QuadrotorParams::default();
    let diffeo = FlatnessDiffeomorphism::construct(
        Quadrotor::new(params),
        Arc::new(random_network_residual(options.seed ^ 0x21, 16)),
    )?;
    let mut worst = 0.0f64;
    for reference in [Reference::circle(), Reference::lemniscate()] {
        let mut ctrl = FlatTrackingController::new(
            diffeo.clone(),
            reference,
            &DEFAULT_GAINS,
            DerivativeSource::Algebraic,
            0.01,
        )?;
        for k in 0..140 {
            let t = k as f64 * 0.1;
            let (x, u_open) = diffeo.state_and_input(&reference.jets(t, 4)?)?;
            let u = ctrl.control(t, &x)?;
            for (a, b) in u.iter().zip(&u_open) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
        }
    }
    Ok(SuiteResult::below(
        "controller consistency",
        worst,
        1e-10,
        "circle and lemniscate, 140 samples each".into(),
    ))
}

/// Receding-horizon solver on a double integrator against a dense
/// condensed least-squares solve of the same problem.
pub fn double_integrator_ocp(_options: &VerifyOptions) -> Result<SuiteResult> {
    let model = AugmentedModel::new(
        IntegratorChain::new(2, 1),
        Arc::new(LowerTriangularResidual::zero(2, 1)),
    )?;
    let config = OcpConfig::default();
    let (steps, dt) = (config.steps, config.dt());
    let x0 = [0.3, -0.5];
    let reference: Vec<Vec<f64>> = (0..=steps)
        .map(|k| vec![(1.7 * k as f64 * dt).sin()])
        .collect();
    let guess = OcpGuess {
        states: vec![x0.to_vec(); steps + 1],
        inputs: vec![vec![0.0]; steps],
    };
    let sol = solve_ocp(&model, &x0, &reference, guess, &config)?;

    // position at knot k: p_k = x0_p + k dt x0_v + sum_j g_kj u_j
    let mut g = DMatrix::<f64>::zeros(steps + 1, steps);
    let mut free = DVector::<f64>::zeros(steps + 1);
    for k in 0..=steps {
        free[k] = x0[0] + k as f64 * dt * x0[1];
        for j in 0..k {
            g[(k, j)] = dt * dt * (0.5 + (k - j - 1) as f64);
        }
    }
    let mut weights = DVector::from_element(steps + 1, config.output_weight * dt);
    weights[steps] = config.terminal_weight;
    let target = DVector::from_fn(steps + 1, |k, _| reference[k][0] - free[k]);
    let w = DMatrix::from_diagonal(&weights);
    let hessian = g.transpose() * &w * &g
        + DMatrix::<f64>::identity(steps, steps) * (config.input_weight * dt);
    let rhs = g.transpose() * &w * target;
    let oracle = hessian
        .cholesky()
        .ok_or_else(|| crate::Error::LinearSolve("oracle normal equations".into()))?
        .solve(&rhs);
    let worst = sol
        .inputs
        .iter()
        .zip(oracle.iter())
        .map(|(u, o)| (u[0] - o).abs())
        .fold(0.0f64, f64::max);
    let mut result = SuiteResult::below(
        "double integrator optimum",
        worst,
        1e-6,
        format!(
            "{} iterations, converged {}, max defect {:.1e}",
            sol.iterations, sol.converged, sol.max_defect
        ),
    );
    result.passed &= sol.converged;
    Ok(result)
}

/// Training, data generation and closed-loop simulation repeated with the
/// same seed must agree bit for bit.
pub fn reproducibility(options: &VerifyOptions) -> Result<SuiteResult> {
    let params = QuadrotorParams::default();
    let data_config = DataGenConfig {
        trajectories: 40,
        seed: options.seed,
        ..DataGenConfig::default()
    };
    let train_config = TrainConfig {
        epochs: 2,
        seed: options.seed,
        ..TrainConfig::default()
    };
    let nominal = crate::quadrotor::OriginalPlant::nominal(params);
    let run = || -> Result<(String, Vec<u64>)> {
        let data = generate_training_data(&params, &data_config)?;
        let (res, _) = train(&data.targets(&nominal)?, 4, 2, &train_config)?;
        let checksum = res.checksum();
        let diffeo = FlatnessDiffeomorphism::construct(Quadrotor::new(params), Arc::new(res))?;
        let reference = Reference::circle();
        let mut ctrl = FlatTrackingController::new(
            diffeo.clone(),
            reference,
            &DEFAULT_GAINS,
            DerivativeSource::Algebraic,
            0.01,
        )?;
        let (x0, _) = diffeo.state_and_input(&reference.jets(0.0, 4)?)?;
        ctrl.reset(0.0, &x0)?;
        let config = ClosedLoopConfig {
            duration: 2.0,
            ..ClosedLoopConfig::default()
        };
        let traj = closed_loop_run(&ExtendedPlant::truth(params), &mut ctrl, &x0, &config)?
            .into_result()?;
        let mut bits: Vec<u64> = traj.states.iter().flatten().map(|v| v.to_bits()).collect();
        bits.extend(data.trajectories.iter().flat_map(|t| t.states.iter().flatten()).map(|v| v.to_bits()));
        Ok((checksum, bits))
    };
    let (a, b) = (run()?, run()?);
    let mismatches = a.1.iter().zip(&b.1).filter(|(p, q)| p != q).count()
        + usize::from(a.0 != b.0)
        + a.1.len().abs_diff(b.1.len());
    Ok(SuiteResult::below(
        "seeded reproducibility",
        mismatches as f64,
        0.0,
        format!("model checksum {}", &a.0[..16]),
    ))
}

pub fn run_all(options: &VerifyOptions) -> Result<VerifyReport> {
    let suites = vec![
        inverse_identity(options),
        jet_chain_rule(options)?,
        mlp_gradient(options)?,
        triangular_zeros(options)?,
        closed_form_attitude(options)?,
        dynamic_consistency(options)?,
        controller_consistency(options)?,
        double_integrator_ocp(options)?,
        reproducibility(options)?,
    ];
    Ok(VerifyReport { suites })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_on_a_clean_build() {
        let report = run_all(&VerifyOptions::default()).unwrap();
        eprintln!("{report}");
        assert!(report.passed(), "\n{report}");
    }

    #[test]
    fn fault_injection_breaks_inverse_identity() {
        let report = inverse_identity(&VerifyOptions {
            fault_injection: true,
            ..VerifyOptions::default()
        });
        assert!(!report.passed);
    }
}
