//! Single TOML configuration for the whole pipeline, and per-stage seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{InputMode, OptimConfig};
use crate::pf::PfConfig;
use crate::survey::{PropagationConfig, SurveyConfig};
use crate::svgp::InitStrategy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_inducing: usize,
    pub init: InitStrategy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_inducing: 200,
            init: InitStrategy::Kmeans,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Cells per side of the evaluation grid.
    pub grid_n: usize,
    /// Share of the terrain box held out of training, as a centered
    /// rectangle.
    pub heldout_fraction: f64,
    /// Train-region RMSE (m) a noiseless run is expected to stay below.
    pub sanity_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid_n: 100,
            heldout_fraction: 0.25,
            sanity_threshold: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Yaw-rate drift standard deviations (rad/s).
    pub noise_levels: Vec<f64>,
    /// Number of master seeds; run `i` uses `seed + i`.
    pub num_seeds: usize,
    pub modes: Vec<InputMode>,
    pub localize: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            noise_levels: vec![0.0, 1e-3, 2e-3],
            num_seeds: 5,
            modes: vec![InputMode::Di, InputMode::Ui],
            localize: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,
    pub survey: SurveyConfig,
    pub propagation: PropagationConfig,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub eval: EvalConfig,
    pub pf: PfConfig,
    pub experiment: ExperimentConfig,
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            reason: one_line(&e.to_string()),
        })?;
        cfg.validate().map_err(|e| Error::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.survey.terrain.bbox.validate()?;
        self.survey.mbes.validate()?;
        self.optim.validate()?;
        self.pf.validate()?;
        if self.model.num_inducing == 0 || self.eval.grid_n == 0 {
            return Err(Error::InvalidArgument("num_inducing and grid_n must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.eval.heldout_fraction) {
            return Err(Error::InvalidArgument("heldout_fraction must lie in [0, 1)".into()));
        }
        if self.experiment.noise_levels.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("noise levels must be non-negative".into()));
        }
        Ok(())
    }

    /// Seeds of every stage for the current master seed.
    pub fn stage_seeds(&self) -> StageSeeds {
        StageSeeds::new(self.seed)
    }
}

/// Collapses the multi-line parser diagnostics into one line, keeping the
/// line and column.
fn one_line(msg: &str) -> String {
    msg.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.chars().all(|c| c == '|' || c == '^' || c == ' '))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Terrain = 0,
    Survey = 1,
    Init = 2,
    Train = 3,
    LocalizationRun = 4,
    Filter = 5,
}

/// One SplitMix64 output for counter `counter` of stream `seed`.
pub fn splitmix64(seed: u64, counter: u64) -> u64 {
    let mut z = seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub master: u64,
    pub terrain: u64,
    pub survey: u64,
    pub init: u64,
    pub train: u64,
    pub localization_run: u64,
    pub filter: u64,
}

impl StageSeeds {
    pub fn new(master: u64) -> Self {
        let s = |stage: Stage| splitmix64(master, stage as u64);
        Self {
            master,
            terrain: s(Stage::Terrain),
            survey: s(Stage::Survey),
            init: s(Stage::Init),
            train: s(Stage::Train),
            localization_run: s(Stage::LocalizationRun),
            filter: s(Stage::Filter),
        }
    }
}
