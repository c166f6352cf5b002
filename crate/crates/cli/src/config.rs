use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flatres::experiments::{ControllerKind, ScenarioConfig};
use flatres::sim::DataGenConfig;
use flatres::{QuadrotorParams, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_SEEDS: usize = 5;
pub const FULL_SEEDS: usize = 30;

/// Everything a run depends on. Every field has a default, so an empty
/// file (or no file) gives the reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub quadrotor: QuadrotorParams,
    pub data: DataGenConfig,
    pub training: TrainConfig,
    /// Training and evaluation seeds; each seed gets its own dataset.
    pub seeds: Vec<u64>,
    pub scenario: ScenarioConfig,
    /// Closed-loop controllers run with each learned model.
    pub controllers: Vec<ControllerKind>,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Defaults to a prefix of the config hash.
    pub run_id: Option<String>,
    /// Worker threads for per-seed jobs; 0 picks the core count.
    pub workers: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            run_id: None,
            workers: 0,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            quadrotor: QuadrotorParams::default(),
            data: DataGenConfig::default(),
            training: TrainConfig::default(),
            seeds: (0..DEFAULT_SEEDS as u64).collect(),
            scenario: ScenarioConfig::default(),
            controllers: vec![ControllerKind::Flat, ControllerKind::Nmpc],
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seed list is empty");
        }
        if let Err(e) = self.quadrotor.validate() {
            bail!("quadrotor parameters: {e}");
        }
        if self.training.learned_blocks.len() != 4 {
            bail!("learned_blocks needs one entry per block (4)");
        }
        if self.controllers.contains(&ControllerKind::OpenLoop) {
            bail!("open_loop is not a closed-loop controller");
        }
        self.scenario.nmpc.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output section.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output: OutputConfig::default(),
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn run_id(&self) -> String {
        self.output
            .run_id
            .clone()
            .unwrap_or_else(|| format!("run-{}", &self.hash()[..12]))
    }
}

/// `N` for seeds `0..N`, or a comma-separated list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    if !s.contains(',') {
        let n: u64 = s.parse().with_context(|| format!("bad seed count {s:?}"))?;
        if n == 0 {
            bail!("seed count must be positive");
        }
        return Ok((0..n).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse().with_context(|| format!("bad seed {p:?}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.seeds.len(), 5);
        assert_eq!(cfg.data.trajectories, 3000);
    }

    #[test]
    fn partial_override() {
        let cfg: ExperimentConfig =
            toml::from_str("seeds = [3]\n[data]\ntrajectories = 10\n[scenario.closed_loop]\nplant_dt = 0.002\n")
                .unwrap();
        assert_eq!(cfg.seeds, vec![3]);
        assert_eq!(cfg.data.trajectories, 10);
        assert_eq!(cfg.data.duration, 0.5);
        assert_eq!(cfg.scenario.closed_loop.plant_dt, 0.002);
        assert_eq!(cfg.scenario.closed_loop.control_dt, 0.01);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("sedes = [1]").is_err());
    }

    #[test]
    fn hash_ignores_output_section() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seeds = vec![9];
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 7").unwrap(), vec![4, 7]);
        assert!(parse_seeds("0").is_err());
        assert!(parse_seeds("a,b").is_err());
    }
}
