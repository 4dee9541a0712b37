//! File-based run configuration.
//!
//! Every field has a default, so `{}` is a valid config. The weighting block
//! is authoritative for `alpha` and the norm: [`RunConfig::settings`] copies
//! them into the training config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Condition, ExperimentGrid, PipelineSettings};
use crate::model::TrainConfig;
use crate::par::Execution;
use crate::participation::Thresholds;
use crate::synth::SynthConfig;
use crate::encode::EncoderConfig;
use crate::weighting::WeightingConfig;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus directory; relative paths resolve against the working directory.
    pub corpus: Option<PathBuf>,
    pub thresholds: Thresholds,
    pub weighting: WeightingConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    /// Condition trained by the single-run `train` command.
    pub train_condition: Condition,
    pub grid: ExperimentGrid,
    pub synth: SynthConfig,
    pub execution: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            thresholds: Thresholds::default(),
            weighting: WeightingConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            train_condition: Condition::EdgeReweight,
            grid: ExperimentGrid::default(),
            synth: SynthConfig::default(),
            execution: Execution::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Override every seed (training, grid and generator) with one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.synth.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.weighting.validate()?;
        self.encoder.validate()?;
        self.settings().train.validate()?;
        self.grid.validate()?;
        self.synth.validate()
    }

    /// Settings for the pipeline with the weighting block copied into training.
    pub fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            thresholds: self.thresholds,
            weighting: self.weighting,
            encoder: self.encoder.clone(),
            train: TrainConfig {
                alpha: self.weighting.alpha,
                norm_kind: self.weighting.norm_kind,
                ..self.train
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Write `resolved_config.json` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_json() + "\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }
}
