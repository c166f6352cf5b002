//! `flatres` command-line harness.

mod commands;
mod config;
mod output;

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::Result;
use clap::{Parser, Subcommand};
use log::info;

use config::{parse_seeds, ExperimentConfig, FULL_SEEDS};
use output::RunDir;

#[derive(Parser, Debug)]
#[command(name = "flatres", version, about = "Residual-augmented flat control experiments")]
struct Cli {
    /// TOML experiment config; defaults reproduce the reference setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed count `N` (seeds 0..N) or a comma-separated list.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Output root; runs go to `<out>/<run-id>/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use 30 seeds unless `--seeds` is given.
    #[arg(long, global = true)]
    paper_mode: bool,
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Worker threads for per-seed jobs (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the true plant and write one training dataset per seed.
    GenData,
    /// Train one residual model per seed.
    Train,
    /// Replay flat-map inputs open loop with nominal, true and learned models.
    EvalOpenLoop,
    /// Closed-loop tracking with the flat controller and NMPC.
    EvalClosedLoop,
    /// Run the property suites; exits nonzero on any failure.
    Verify {
        /// Corrupt the attitude inverse map to check the suite catches it.
        #[arg(long)]
        fault_injection: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::EvalOpenLoop => "eval-open-loop",
            Command::EvalClosedLoop => "eval-closed-loop",
            Command::Verify { .. } => "verify",
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if cli.paper_mode {
        config.seeds = (0..FULL_SEEDS as u64).collect();
    }
    if let Some(s) = &cli.seeds {
        config.seeds = parse_seeds(s)?;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(id) = &cli.run_id {
        config.output.run_id = Some(id.clone());
    }
    if let Some(w) = cli.workers {
        config.output.workers = w;
    }
    config.validate()?;
    Ok(config)
}

/// Sends log lines to stderr and to the run's log file.
struct Tee(Mutex<File>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stderr().write_all(buf)?;
        self.0.lock().expect("log file lock").write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.lock().expect("log file lock").flush()
    }
}

fn init_logging(run: &RunDir, command: &str) -> Result<()> {
    let file = File::create(run.path("logs", &format!("{command}.log")))?;
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Pipe(Box::new(Tee(Mutex::new(file)))))
        .try_init()?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let config = resolve(&cli)?;
    let mut dir = RunDir::create(&config)?;
    let name = cli.command.name();
    init_logging(&dir, name)?;
    info!(
        "{name}: run {} (config {}, {}), seeds {:?}",
        dir.root.display(),
        &dir.config_hash[..12],
        dir.git,
        config.seeds
    );
    let passed = match cli.command {
        Command::GenData => commands::gen_data(&config, &mut dir).map(|_| true)?,
        Command::Train => commands::train(&config, &mut dir).map(|_| true)?,
        Command::EvalOpenLoop => commands::eval_open_loop(&config, &mut dir).map(|_| true)?,
        Command::EvalClosedLoop => commands::eval_closed_loop(&config, &mut dir).map(|_| true)?,
        Command::Verify { fault_injection } => commands::verify(&config, &mut dir, fault_injection)?.passed(),
    };
    let manifest = dir.finish(name, &config)?;
    info!("manifest {}", manifest.display());
    Ok(passed)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
