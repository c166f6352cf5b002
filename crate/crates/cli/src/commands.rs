use std::fs::File;
use std::io::BufReader;

use anyhow::{anyhow, Context, Result};
use flatres::experiments::{
    aggregate, closed_loop_flat, closed_loop_nmpc, diffeo_for, nominal_diffeo, open_loop,
    train_on, truth_diffeo, AggregateRow, ControllerKind, ModelKind, RunRecord, TrainedModel,
};
use flatres::residual::{load_model, Dataset};
use flatres::sim::{generate_training_data, DataGenConfig, Reference};
use flatres::verify::{run_all, VerifyOptions, VerifyReport};
use flatres::{LowerTriangularResidual, Trajectory};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{dataset_name, model_name, RunDir};

fn pool(config: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(config.output.workers)
        .build()?)
}

pub fn gen_data(config: &ExperimentConfig, run: &mut RunDir) -> Result<()> {
    let datasets: Vec<(u64, Dataset)> = pool(config)?.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let data = DataGenConfig {
                    seed,
                    ..config.data.clone()
                };
                Ok((seed, generate_training_data(&config.quadrotor, &data)?))
            })
            .collect::<Result<_>>()
    })?;
    for (seed, dataset) in datasets {
        let path = run.write("dataset", &dataset_name(seed), Some(seed), |w| {
            Ok(dataset.write_csv(w)?)
        })?;
        info!("seed {seed}: {} samples -> {}", dataset.sample_count(), path.display());
    }
    Ok(())
}

fn read_dataset(run: &RunDir, seed: u64) -> Result<Dataset> {
    let path = run.path("dataset", &dataset_name(seed));
    let file = File::open(&path)
        .with_context(|| format!("missing dataset {} (run gen-data first)", path.display()))?;
    let mut dataset = Dataset::read_csv(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))?;
    dataset.seed = seed;
    Ok(dataset)
}

#[derive(Serialize)]
struct TrainingSummary {
    seed: u64,
    initial_loss: f64,
    final_loss: f64,
    validation_mse: f64,
    checksum: String,
}

pub fn train(config: &ExperimentConfig, run: &mut RunDir) -> Result<()> {
    let datasets = config
        .seeds
        .iter()
        .map(|&seed| read_dataset(run, seed).map(|d| (seed, d)))
        .collect::<Result<Vec<_>>>()?;
    let models: Vec<TrainedModel> = pool(config)?.install(|| {
        datasets
            .par_iter()
            .map(|(seed, dataset)| {
                Ok(train_on(&config.quadrotor, dataset, &config.data, &config.training, *seed)?)
            })
            .collect::<Result<_>>()
    })?;
    let mut summary = Vec::new();
    for m in models {
        run.write("models", &model_name(m.seed), Some(m.seed), |w| {
            w.write_all(m.residual.to_json()?.as_bytes())?;
            Ok(())
        })?;
        run.write("logs", &format!("train-seed-{}.csv", m.seed), Some(m.seed), |w| {
            writeln!(w, "epoch,loss")?;
            for (e, l) in m.log.epoch_losses.iter().enumerate() {
                writeln!(w, "{},{l}", e + 1)?;
            }
            Ok(())
        })?;
        info!(
            "seed {}: loss {:.4e} -> {:.4e}, held-out velocity-block MSE {:.3e}",
            m.seed,
            m.log.initial_loss,
            m.log.final_loss(),
            m.validation_mse
        );
        summary.push(TrainingSummary {
            seed: m.seed,
            initial_loss: m.log.initial_loss,
            final_loss: m.log.final_loss(),
            validation_mse: m.validation_mse,
            checksum: m.residual.checksum(),
        });
    }
    run.write_json("metrics", "training.json", None, &summary)?;
    Ok(())
}

fn load_models(config: &ExperimentConfig, run: &RunDir) -> Result<Vec<(u64, LowerTriangularResidual)>> {
    config
        .seeds
        .iter()
        .map(|&seed| {
            let path = run.path("models", &model_name(seed));
            let res = load_model(&path)
                .with_context(|| format!("loading {} (run train first)", path.display()))?;
            Ok((seed, res))
        })
        .collect()
}

#[derive(Serialize)]
struct Metrics<'a> {
    config_hash: &'a str,
    git_describe: &'a str,
    seeds: &'a [u64],
    aggregate: Vec<AggregateRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    timing: Vec<TimingRatio>,
    runs: &'a [RunRecord],
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingRatio {
    pub reference: String,
    pub flat_median_ns: f64,
    pub nmpc_median_ns: f64,
    pub ratio: f64,
}

fn model_tag(rec: &RunRecord) -> String {
    let mut tag = format!("{}-{}-{}", rec.controller.name(), rec.model.name(), rec.reference.name());
    if let Some(seed) = rec.seed {
        tag += &format!("-seed-{seed}");
    }
    tag + ".csv"
}

fn write_outcome(run: &mut RunDir, rec: &RunRecord, traj: &Option<Trajectory>) -> Result<()> {
    match (&rec.error, &rec.failure) {
        (Some(e), _) => info!("{} {} seed {:?}: error {e:.5}", rec.label(), rec.reference.name(), rec.seed),
        (_, Some(f)) => warn!("{} {} seed {:?} failed: {f}", rec.label(), rec.reference.name(), rec.seed),
        _ => {}
    }
    if let Some(traj) = traj {
        run.write("trajectories", &model_tag(rec), rec.seed, |w| Ok(traj.write_csv(w)?))?;
    }
    Ok(())
}

fn write_tables(
    run: &mut RunDir,
    name: &str,
    config: &ExperimentConfig,
    records: &[RunRecord],
    timing: Vec<TimingRatio>,
) -> Result<Vec<AggregateRow>> {
    let rows = aggregate(records);
    run.write("metrics", &format!("{name}.csv"), None, |w| {
        writeln!(w, "controller,model,reference,mean,std,runs,failures,median_controller_ns")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.controller.name(),
                r.model.name(),
                r.reference.name(),
                r.mean,
                r.std,
                r.runs,
                r.failures,
                r.median_controller_ns.map(|v| v.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    })?;
    let metrics = Metrics {
        config_hash: &run.config_hash.clone(),
        git_describe: &run.git.clone(),
        seeds: &config.seeds,
        aggregate: rows.clone(),
        timing,
        runs: records,
    };
    run.write_json("metrics", &format!("{name}.json"), None, &metrics)?;
    for r in &rows {
        println!(
            "{:<10} {:<8} {:<11} {:.4} ± {:.4}  (runs {}, failures {})",
            r.controller.name(),
            r.model.name(),
            r.reference.name(),
            r.mean,
            r.std,
            r.runs,
            r.failures
        );
    }
    Ok(rows)
}

pub fn eval_open_loop(config: &ExperimentConfig, run: &mut RunDir) -> Result<Vec<AggregateRow>> {
    let models = load_models(config, run)?;
    let params = config.quadrotor;
    let scenario = &config.scenario;
    let references: Vec<Reference> = scenario.references.iter().map(|&k| Reference::of_kind(k)).collect();
    let mut outcomes = Vec::new();
    for reference in &references {
        outcomes.push(open_loop(&params, &nominal_diffeo(params)?, ModelKind::Nominal, None, reference, scenario));
        outcomes.push(open_loop(&params, &truth_diffeo(params)?, ModelKind::Truth, None, reference, scenario));
    }
    let learned: Vec<_> = pool(config)?.install(|| {
        models
            .par_iter()
            .map(|(seed, res)| {
                let diffeo = diffeo_for(params, res.clone())?;
                Ok(references
                    .iter()
                    .map(|r| open_loop(&params, &diffeo, ModelKind::Learned, Some(*seed), r, scenario))
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    outcomes.extend(learned.into_iter().flatten());
    let mut records = Vec::new();
    for (rec, traj) in outcomes {
        write_outcome(run, &rec, &traj)?;
        records.push(rec);
    }
    write_tables(run, "open_loop", config, &records, Vec::new())
}

/// Mean over seeds of the per-run median controller time.
fn timing_ratios(records: &[RunRecord], config: &ExperimentConfig) -> Vec<TimingRatio> {
    let median = |kind: ControllerKind, reference| {
        let v: Vec<f64> = records
            .iter()
            .filter(|r| r.controller == kind && r.model == ModelKind::Learned && r.reference == reference)
            .filter_map(|r| r.timing.map(|t| t.median_ns))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    config
        .scenario
        .references
        .iter()
        .filter_map(|&reference| {
            let flat = median(ControllerKind::Flat, reference)?;
            let nmpc = median(ControllerKind::Nmpc, reference)?;
            Some(TimingRatio {
                reference: reference.name().into(),
                flat_median_ns: flat,
                nmpc_median_ns: nmpc,
                ratio: nmpc / flat,
            })
        })
        .collect()
}

/// Runs one controller at a time so that controller timings are not
/// disturbed by other work.
pub fn eval_closed_loop(config: &ExperimentConfig, run: &mut RunDir) -> Result<Vec<AggregateRow>> {
    let models = load_models(config, run)?;
    let params = config.quadrotor;
    let scenario = &config.scenario;
    let mut records = Vec::new();
    let mut emit = |run: &mut RunDir, (rec, traj): (RunRecord, Option<Trajectory>)| -> Result<()> {
        write_outcome(run, &rec, &traj)?;
        records.push(rec);
        Ok(())
    };
    for &kind in &scenario.references {
        let reference = Reference::of_kind(kind);
        if config.controllers.contains(&ControllerKind::Flat) {
            let diffeo = nominal_diffeo(params)?;
            emit(run, closed_loop_flat(&params, &diffeo, ModelKind::Nominal, None, &reference, scenario))?;
        }
        for (seed, res) in &models {
            let diffeo = diffeo_for(params, res.clone())?;
            for controller in &config.controllers {
                let outcome = match controller {
                    ControllerKind::Flat => closed_loop_flat,
                    ControllerKind::Nmpc => closed_loop_nmpc,
                    ControllerKind::OpenLoop => return Err(anyhow!("open_loop is not a feedback controller")),
                };
                emit(run, outcome(&params, &diffeo, ModelKind::Learned, Some(*seed), &reference, scenario))?;
            }
        }
    }
    let timing = timing_ratios(&records, config);
    for t in &timing {
        println!(
            "timing {:<11} flat {:.1} us, nmpc {:.2} ms, ratio {:.0}",
            t.reference,
            t.flat_median_ns / 1e3,
            t.nmpc_median_ns / 1e6,
            t.ratio
        );
    }
    write_tables(run, "closed_loop", config, &records, timing)
}

pub fn verify(config: &ExperimentConfig, run: &mut RunDir, fault_injection: bool) -> Result<VerifyReport> {
    let options = VerifyOptions {
        seed: config.seeds[0],
        fault_injection,
    };
    let report = run_all(&options)?;
    print!("{report}");
    run.write_json("metrics", "verify.json", Some(options.seed), &report)?;
    Ok(report)
}
