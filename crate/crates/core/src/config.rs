//! Search configuration and the JSON run-config file.

use crate::fitness::{ExternalSettings, SurrogateSpec};
use crate::genome::{GeneMenu, ImageShape};
use serde::{Deserialize, Deserializer, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Training budget handed to the evaluator for one fitness evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBudget {
    pub epochs: u32,
    pub data_fraction: f64,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl TrainBudget {
    /// Five epochs on the full training split, used for length-space probes.
    pub fn probe() -> Self {
        TrainBudget {
            epochs: 5,
            data_fraction: 1.0,
            batch_size: 128,
            learning_rate: 1e-3,
            momentum: 0.9,
        }
    }

    /// 100 epochs on 20% of the data.
    pub fn probe_long() -> Self {
        TrainBudget {
            epochs: 100,
            data_fraction: 0.2,
            ..Self::probe()
        }
    }

    /// 400 epochs, batch size 128, SGD with lr 1e-3 and momentum 0.9.
    pub fn full() -> Self {
        TrainBudget {
            epochs: 400,
            ..Self::probe()
        }
    }

    /// Looks up a named preset: `probe`, `probe_long` or `full`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "probe" => Some(Self::probe()),
            "probe_long" => Some(Self::probe_long()),
            "full" => Some(Self::full()),
            _ => None,
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "budget data_fraction must lie in (0, 1], got {}",
                self.data_fraction
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(ConfigError::Invalid("budget learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(ConfigError::Invalid("budget momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Accepts either a preset name or an explicit budget object.
fn budget_or_preset<'de, D: Deserializer<'de>>(de: D) -> Result<TrainBudget, D::Error> {
    let value = serde_json::Value::deserialize(de)?;
    if let serde_json::Value::String(name) = &value {
        return TrainBudget::preset(name)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown budget preset `{name}`")));
    }
    serde_json::from_value::<TrainBudget>(value).map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Standard,
    Random,
}

/// All search hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    /// Largest architecture length considered by the length search.
    pub max_layers: usize,
    /// Width of one length space.
    pub space_width: usize,
    /// Extra layers allowed above the selected space.
    pub margin: usize,
    /// Fitness gap below which a smaller space is preferred.
    pub alpha: f64,
    /// Best mean fitness required to accept any space. Defaults to
    /// 1.5 x random-guess accuracy when unset.
    pub floor: Option<f64>,
    pub population_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    /// Evaluations per length-space candidate.
    pub repeats: usize,
    pub init_mode: InitMode,
    pub target_fitness: Option<f64>,
    pub master_seed: u64,
    #[serde(deserialize_with = "budget_or_preset")]
    pub length_budget: TrainBudget,
    #[serde(deserialize_with = "budget_or_preset")]
    pub eval_budget: TrainBudget,
    pub menu: GeneMenu,
    /// Concurrent fitness evaluations.
    pub jobs: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            max_layers: 24,
            space_width: 4,
            margin: 2,
            alpha: 0.05,
            floor: None,
            population_size: 25,
            generations: 10,
            crossover_prob: 0.2,
            mutation_prob: 0.5,
            repeats: 5,
            init_mode: InitMode::Standard,
            target_fitness: None,
            master_seed: 0,
            length_budget: TrainBudget::probe(),
            eval_budget: TrainBudget::full(),
            menu: GeneMenu::default(),
            jobs: 1,
        }
    }
}

impl EvolutionConfig {
    /// The configured floor, or 1.5 x the random-guess accuracy.
    pub fn floor_for(&self, num_classes: u32) -> f64 {
        self.floor.unwrap_or_else(|| 1.5 / f64::from(num_classes.max(1)))
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return invalid(format!(
                "crossover_prob must lie in [0, 1], got {}",
                self.crossover_prob
            ));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return invalid(format!("mutation_prob must lie in [0, 1], got {}", self.mutation_prob));
        }
        if self.population_size < 2 {
            return invalid("population_size must be at least 2".into());
        }
        if self.generations < 1 {
            return invalid("generations must be at least 1".into());
        }
        if self.repeats < 1 {
            return invalid("repeats must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.menu.filters.is_empty() || self.menu.kernels.is_empty() || self.menu.dense_units.is_empty() {
            return invalid("gene menus must not be empty".into());
        }
        if self.jobs < 1 {
            return invalid("jobs must be at least 1".into());
        }
        self.length_budget.check()?;
        self.eval_budget.check()
    }
}

/// Dataset the architectures are searched for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub name: String,
    pub input_shape: ImageShape,
    pub num_classes: u32,
}

impl Default for Dataset {
    fn default() -> Self {
        Dataset {
            name: "cifar10".into(),
            input_shape: ImageShape::new(32, 32, 3),
            num_classes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendConfig {
    Surrogate(SurrogateSpec),
    External(ExternalSettings),
}

/// Top-level JSON document read by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub dataset: Dataset,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Append-only fitness cache; in-memory only when unset.
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfigFile = serde_json::from_str(text)?;
        cfg.evolution.check()?;
        if cfg.dataset.num_classes == 0 {
            return Err(ConfigError::Invalid("dataset num_classes must be positive".into()));
        }
        let s = cfg.dataset.input_shape;
        if s.height == 0 || s.width == 0 || s.channels == 0 {
            return Err(ConfigError::Invalid(
                "dataset input_shape entries must be positive".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
