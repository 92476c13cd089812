//! Orchestration: configuration, the episode loop, training, evaluation and
//! replay verification.
//!
//! One [`HarnessConfig`] JSON document configures every subsystem. All
//! sections are optional and default sensibly, unknown keys are rejected, and
//! the whole config is echoed into every run manifest so an artifact's
//! provenance is never ambiguous.

pub mod episode;
pub mod eval;
pub mod replay;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::PpoConfig;
use crate::catalog::GeneratorConfig;
use crate::error::Error;
use crate::perception::{ControllerConfig, PerceptionConfig};
use crate::rulebook::RulebookConfig;
use crate::sim::{SimConfig, KNOB_COUNT};

pub use episode::{
    classify_failure, run_episode, EpisodeAgent, EpisodeLine, EpisodeRecord, EpisodeSummary,
    EpisodeTotals, FailureMode, ScoringEcho, TickRow,
};
pub use eval::{evaluate, EvalOutcome, EvalReport};
pub use replay::{replay, ReplaySummary};
pub use train::{
    train, RunManifest, TrainOutcome, UpdateProgress, MANIFEST_SCHEMA_VERSION, SEED_ENV_VAR,
};

/// Knob names as used in configs (ablation freezes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnobName {
    FogDensity,
    Precipitation,
    PrecipitationDeposits,
    SunAltitude,
    SunAzimuth,
}

impl KnobName {
    /// Index into the fixed knob order (see `KnobState::as_array`).
    pub fn index(self) -> usize {
        match self {
            KnobName::FogDensity => 0,
            KnobName::Precipitation => 1,
            KnobName::PrecipitationDeposits => 2,
            KnobName::SunAltitude => 3,
            KnobName::SunAzimuth => 4,
        }
    }
}

/// Failure-classifier thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// How many ticks before contact the detection history is inspected.
    pub window_ticks: u32,
    /// Consecutive undetected ticks that count as a dropout.
    pub min_dropout_ticks: u32,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            window_ticks: 50,
            min_dropout_ticks: 10,
        }
    }
}

/// Evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Size of the fixed test subset drawn from the catalog.
    pub subset_size: usize,
    /// Seed for subset selection and the random baseline agent.
    pub seed: u64,
    pub classifier: ClassifierConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            subset_size: 50,
            seed: 1,
            classifier: ClassifierConfig::default(),
        }
    }
}

/// The one configuration document for every subcommand.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub sim: SimConfig,
    pub perception: PerceptionConfig,
    pub controller: ControllerConfig,
    pub rulebook: RulebookConfig,
    pub ppo: PpoConfig,
    pub generator: GeneratorConfig,
    pub eval: EvalConfig,
    /// Catalog consumed by `train` (eval takes its catalog on the command
    /// line). Relative paths resolve against the working directory.
    pub catalog_path: Option<PathBuf>,
    /// Knobs pinned to their clear-weather value for ablation studies: the
    /// agent's action components for these knobs are ignored.
    pub frozen_knobs: Vec<KnobName>,
}

impl HarnessConfig {
    /// Reads and validates a config file (strict: unknown keys rejected).
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: HarnessConfig = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Validates every section.
    pub fn validate(&self) -> Result<(), Error> {
        self.sim.validate()?;
        self.perception.validate()?;
        self.controller.validate()?;
        self.rulebook.validate()?;
        self.ppo.validate()?;
        self.generator.validate()?;
        if self.eval.classifier.min_dropout_ticks == 0 {
            return Err(Error::InvalidConfig(
                "eval.classifier.min_dropout_ticks must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Per-knob freeze mask in knob-array order.
    pub fn frozen_mask(&self) -> [bool; KNOB_COUNT] {
        let mut mask = [false; KNOB_COUNT];
        for k in &self.frozen_knobs {
            mask[k.index()] = true;
        }
        mask
    }
}
