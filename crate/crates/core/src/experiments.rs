//! Seeded experiment pipeline: data generation, training, open-loop replay
//! and closed-loop tracking with the flat controller and NMPC, plus
//! mean / sample-std aggregation over seeds.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flat_map::FlatnessDiffeomorphism;
use crate::nmpc::{NmpcController, OcpConfig, SolveStats};
use crate::quadrotor::{ExtendedPlant, OriginalPlant, Quadrotor, QuadrotorParams};
use crate::residual::{loss, train, Dataset, LowerTriangularResidual, TrainConfig, TrainingLog};
use crate::sim::{
    closed_loop_run, generate_training_data, open_loop_rollout, position_error, ClosedLoopConfig,
    Controller, DataGenConfig, DerivativeSource, FlatTrackingController, Reference, ReferenceKind,
    TimingStats, DEFAULT_GAINS,
};
use crate::trajectory::Trajectory;

/// Reference, horizon and controller settings shared by every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub references: Vec<ReferenceKind>,
    pub duration: f64,
    pub open_loop_dt: f64,
    pub closed_loop: ClosedLoopConfig,
    pub gains: Vec<f64>,
    pub derivative_source: DerivativeSource,
    pub nmpc: OcpConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            references: vec![ReferenceKind::Circle, ReferenceKind::Lemniscate],
            duration: 14.0,
            open_loop_dt: 0.01,
            closed_loop: ClosedLoopConfig::default(),
            gains: DEFAULT_GAINS.to_vec(),
            derivative_source: DerivativeSource::Algebraic,
            nmpc: OcpConfig::default(),
        }
    }
}

impl ScenarioConfig {
    fn closed_loop(&self) -> ClosedLoopConfig {
        ClosedLoopConfig {
            duration: self.duration,
            ..self.closed_loop
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Nominal,
    Truth,
    Learned,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Nominal => "nominal",
            ModelKind::Truth => "truth",
            ModelKind::Learned => "learned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    OpenLoop,
    Flat,
    Nmpc,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::OpenLoop => "open_loop",
            ControllerKind::Flat => "flat",
            ControllerKind::Nmpc => "nmpc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmpcSummary {
    pub solves: usize,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub not_converged: usize,
}

/// One simulated run. `error` is the mean position error over every sample
/// after the initial one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub controller: ControllerKind,
    pub model: ModelKind,
    pub seed: Option<u64>,
    pub reference: ReferenceKind,
    pub error: Option<f64>,
    pub failure: Option<String>,
    pub timing: Option<TimingStats>,
    pub nmpc: Option<NmpcSummary>,
    /// Per-tick NMPC solve statistics.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub solves: Vec<SolveStats>,
}

impl RunRecord {
    pub fn label(&self) -> String {
        format!("{}/{}", self.controller.name(), self.model.name())
    }
}

pub fn diffeo_for(params: QuadrotorParams, residual: LowerTriangularResidual) -> Result<FlatnessDiffeomorphism<Quadrotor>> {
    FlatnessDiffeomorphism::construct(Quadrotor::new(params), Arc::new(residual))
}

pub fn nominal_diffeo(params: QuadrotorParams) -> Result<FlatnessDiffeomorphism<Quadrotor>> {
    diffeo_for(params, LowerTriangularResidual::zero(4, 2))
}

/// Diffeomorphism with the exact drag closure.
pub fn truth_diffeo(params: QuadrotorParams) -> Result<FlatnessDiffeomorphism<Quadrotor>> {
    diffeo_for(params, LowerTriangularResidual::quadrotor_drag(&params))
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub seed: u64,
    pub residual: LowerTriangularResidual,
    pub log: TrainingLog,
    /// Per-sample squared error of the velocity block on a fresh dataset.
    pub validation_mse: f64,
}

/// Validation trajectories per seed, a tenth of the training set.
fn validation_config(data: &DataGenConfig, seed: u64) -> DataGenConfig {
    DataGenConfig {
        trajectories: (data.trajectories / 10).max(1),
        seed: seed ^ 0x5eed_0000_0000_0001,
        ..data.clone()
    }
}

/// Generates a dataset for `seed` and trains on it with the same seed.
pub fn train_seed(
    params: &QuadrotorParams,
    data: &DataGenConfig,
    training: &TrainConfig,
    seed: u64,
) -> Result<(Dataset, TrainedModel)> {
    let dataset = generate_training_data(params, &DataGenConfig { seed, ..data.clone() })?;
    let model = train_on(params, &dataset, data, training, seed)?;
    Ok((dataset, model))
}

pub fn train_on(
    params: &QuadrotorParams,
    dataset: &Dataset,
    data: &DataGenConfig,
    training: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    let nominal = OriginalPlant::nominal(*params);
    let samples = dataset.targets(&nominal)?;
    let (residual, log) = train(&samples, 4, 2, &TrainConfig { seed, ..training.clone() })?;
    let validation = generate_training_data(params, &validation_config(data, seed))?;
    let held_out = validation.targets(&nominal)?;
    let mut velocity_only = residual.clone();
    for i in 0..velocity_only.relative_degree() {
        if i != 1 {
            velocity_only.set_enabled(i, false);
        }
    }
    let validation_mse = loss(&velocity_only, &held_out)? / held_out.len() as f64;
    Ok(TrainedModel {
        seed,
        residual,
        log,
        validation_mse,
    })
}

fn record(
    controller: ControllerKind,
    model: ModelKind,
    seed: Option<u64>,
    reference: &Reference,
) -> RunRecord {
    RunRecord {
        controller,
        model,
        seed,
        reference: reference.kind,
        error: None,
        failure: None,
        timing: None,
        nmpc: None,
        solves: Vec::new(),
    }
}

/// Replays the model's flat-map input on the true plant.
pub fn open_loop(
    params: &QuadrotorParams,
    diffeo: &FlatnessDiffeomorphism<Quadrotor>,
    model: ModelKind,
    seed: Option<u64>,
    reference: &Reference,
    scenario: &ScenarioConfig,
) -> (RunRecord, Option<Trajectory>) {
    let mut rec = record(ControllerKind::OpenLoop, model, seed, reference);
    let plant = ExtendedPlant::truth(*params);
    match open_loop_rollout(&plant, diffeo, reference, scenario.open_loop_dt, scenario.duration)
        .and_then(|traj| Ok((position_error(&traj.skip(1), reference)?, traj)))
    {
        Ok((e, traj)) => {
            rec.error = Some(e);
            (rec, Some(traj))
        }
        Err(e) => {
            rec.failure = Some(e.to_string());
            (rec, None)
        }
    }
}

/// Initial state: the true flat-map state of the reference at `t = 0`.
pub fn initial_state(params: &QuadrotorParams, reference: &Reference) -> Result<Vec<f64>> {
    let truth = truth_diffeo(*params)?;
    Ok(truth.state_and_input(&reference.jets(0.0, truth.beta())?)?.0)
}

fn run_closed_loop<C: Controller>(
    params: &QuadrotorParams,
    controller: &mut C,
    mut rec: RunRecord,
    reference: &Reference,
    scenario: &ScenarioConfig,
) -> (RunRecord, Option<Trajectory>) {
    let config = scenario.closed_loop();
    let outcome = initial_state(params, reference).and_then(|x0| {
        closed_loop_run(&ExtendedPlant::truth(*params), controller, &x0, &config)
    });
    let run = match outcome {
        Ok(run) => run,
        Err(e) => {
            rec.failure = Some(e.to_string());
            return (rec, None);
        }
    };
    rec.timing = run.timing(config.timing_warmup);
    if let Some(e) = &run.failure {
        rec.failure = Some(e.to_string());
    }
    match position_error(&run.trajectory.skip(1), reference) {
        Ok(e) if rec.failure.is_none() => rec.error = Some(e),
        Ok(_) => {}
        Err(e) => rec.failure = rec.failure.or(Some(e.to_string())),
    }
    (rec, Some(run.trajectory))
}

pub fn closed_loop_flat(
    params: &QuadrotorParams,
    diffeo: &FlatnessDiffeomorphism<Quadrotor>,
    model: ModelKind,
    seed: Option<u64>,
    reference: &Reference,
    scenario: &ScenarioConfig,
) -> (RunRecord, Option<Trajectory>) {
    let rec = record(ControllerKind::Flat, model, seed, reference);
    match FlatTrackingController::new(
        diffeo.clone(),
        *reference,
        &scenario.gains,
        scenario.derivative_source,
        scenario.closed_loop.control_dt,
    ) {
        Ok(mut ctrl) => run_closed_loop(params, &mut ctrl, rec, reference, scenario),
        Err(e) => (
            RunRecord {
                failure: Some(e.to_string()),
                ..rec
            },
            None,
        ),
    }
}

pub fn closed_loop_nmpc(
    params: &QuadrotorParams,
    diffeo: &FlatnessDiffeomorphism<Quadrotor>,
    model: ModelKind,
    seed: Option<u64>,
    reference: &Reference,
    scenario: &ScenarioConfig,
) -> (RunRecord, Option<Trajectory>) {
    let rec = record(ControllerKind::Nmpc, model, seed, reference);
    let mut ctrl = match NmpcController::new(diffeo.clone(), *reference, scenario.nmpc.clone()) {
        Ok(c) => c,
        Err(e) => {
            return (
                RunRecord {
                    failure: Some(e.to_string()),
                    ..rec
                },
                None,
            )
        }
    };
    let (mut rec, traj) = run_closed_loop(params, &mut ctrl, rec, reference, scenario);
    if !ctrl.stats.is_empty() {
        let iters: Vec<usize> = ctrl.stats.iter().map(|s| s.iterations).collect();
        rec.nmpc = Some(NmpcSummary {
            solves: iters.len(),
            mean_iterations: iters.iter().sum::<usize>() as f64 / iters.len() as f64,
            max_iterations: iters.iter().copied().max().unwrap_or(0),
            not_converged: ctrl.stats.iter().filter(|s| !s.converged).count(),
        });
        rec.solves = std::mem::take(&mut ctrl.stats);
    }
    (rec, traj)
}

/// Mean and sample standard deviation of the finite errors in a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub controller: ControllerKind,
    pub model: ModelKind,
    pub reference: ReferenceKind,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    pub failures: usize,
    pub median_controller_ns: Option<f64>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups records by controller, model and reference.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(ControllerKind, ModelKind, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.controller, r.model, r.reference.name().to_string()))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|group| {
            let errors: Vec<f64> = group.iter().filter_map(|r| r.error).collect();
            let medians: Vec<f64> = group
                .iter()
                .filter_map(|r| r.timing.map(|t| t.median_ns))
                .collect();
            let (mean, std) = mean_std(&errors);
            AggregateRow {
                controller: group[0].controller,
                model: group[0].model,
                reference: group[0].reference,
                mean,
                std,
                runs: group.len(),
                failures: group.len() - errors.len(),
                median_controller_ns: (!medians.is_empty()).then(|| mean_std(&medians).0),
            }
        })
        .collect()
}
