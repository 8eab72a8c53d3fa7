//! The JSON run configuration. Every field has a default, so `{}` is a
//! complete configuration; unknown keys are rejected with their key path.

use std::path::{Path, PathBuf};

use eda_pinn::baselines::BaselineConfig;
use eda_pinn::data::SynthSpec;
use eda_pinn::model::ModelConfig;
use eda_pinn::trainer::{AdamConfig, TrainRunConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub variant: Variant,
    pub adam: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainRunConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            variant: d.variant,
            adam: d.adam,
        }
    }
}

/// Either a CSV file to load or a synthetic specification to draw from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub input: Option<PathBuf>,
    pub synth: SynthSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    /// Master seed. Model initialization, dropout, shuffling, fold
    /// assignment and synthesis all derive their streams from it.
    pub seed: u64,
    /// Number of cross-validation folds.
    pub k: usize,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub data: DataSection,
    pub output: PathBuf,
    /// Entries of the ablation table: PINN variant ids plus `ridge` and `logistic`.
    pub variants: Vec<String>,
    pub baseline: BaselineConfig,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self {
            seed: 42,
            k: 5,
            model: ModelConfig::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
            output: PathBuf::from("out"),
            variants: ["full", "no_physics", "eda_only", "emotion_only", "ridge", "logistic"]
                .map(String::from)
                .to_vec(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl RunConfigFile {
    /// Parse a configuration document; `source` names it in diagnostics.
    pub fn parse(text: &str, source: &Path) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::ConfigFile {
                path: source.to_path_buf(),
                detail: if path == "." {
                    e.inner().to_string()
                } else {
                    format!("at `{path}`: {}", e.inner())
                },
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    /// Push the master seed into every section that consumes randomness.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.data.synth.seed = seed;
    }

    pub fn train_run(&self) -> TrainRunConfig {
        TrainRunConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            variant: self.train.variant,
            seed: self.seed,
            adam: self.train.adam,
        }
    }

    /// Check every section before any work starts.
    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train_run().validate()?;
        if self.k < 2 {
            return Err(eda_pinn::Error::Config(format!("k = {} must be at least 2", self.k)).into());
        }
        if self.data.input.is_none() {
            self.data.synth.validate()?;
        }
        for v in &self.variants {
            eda_pinn::eval::AblationEntry::parse(v)?;
        }
        let b = &self.baseline;
        let valid = b.ridge_lambda >= 0.0 && b.logistic_lr > 0.0 && b.threshold > 0.0 && b.threshold < 1.0;
        if !valid {
            return Err(eda_pinn::Error::Config(
                "baseline: ridge_lambda must be >= 0, logistic_lr > 0, threshold in (0, 1)".into(),
            )
            .into());
        }
        Ok(())
    }
}
