//! Experiment configuration: TOML schema, validation, and dotted-key
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finch::Metric;
use crate::samplers::ClusterDomain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub training: TrainingConfig,
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Where the samples come from: generated Gaussian blobs or an external
/// `id,label,f1,...,fd` CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        n_classes: usize,
        per_class: usize,
        dim: usize,
        radius: f64,
        sigma: f64,
        seed: u64,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of classes treated as known, `K / (K + |U|)`.
    pub mismatch_ratio: f64,
    pub initial_label_fraction: f64,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// Epochs for the separately trained evaluation model; defaults to
    /// `epochs`.
    #[serde(default)]
    pub target_epochs: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    /// Hidden layer widths of the feature extractor; the last entry is the
    /// feature dimension the heads consume.
    pub hidden_dims: Vec<usize>,
    /// Weight of the tuplet term in the combined objective.
    pub lambda: f64,
    /// Weight of the own-center distance inside the tuplet loss.
    pub beta: f64,
    /// Softmax temperature of the distance-based entropy.
    pub temperature: f64,
    /// Continue training last cycle's models instead of re-initializing.
    #[serde(default)]
    pub warm_start: bool,
}

impl TrainingConfig {
    pub fn target_epochs(&self) -> usize {
        self.target_epochs.unwrap_or(self.epochs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    Eoal,
    Random,
    Entropy,
    Certainty,
    Coreset,
}

impl StrategyName {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyName::Eoal => "eoal",
            StrategyName::Random => "random",
            StrategyName::Entropy => "entropy",
            StrategyName::Certainty => "certainty",
            StrategyName::Coreset => "coreset",
        }
    }
}

impl std::str::FromStr for StrategyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eoal" => Ok(StrategyName::Eoal),
            "random" => Ok(StrategyName::Random),
            "entropy" => Ok(StrategyName::Entropy),
            "certainty" => Ok(StrategyName::Certainty),
            "coreset" => Ok(StrategyName::Coreset),
            other => Err(Error::config(format!("unknown strategy `{other}`"))),
        }
    }
}

fn default_cluster_domain() -> ClusterDomain {
    ClusterDomain::PredictedKnown
}

fn default_metric() -> Metric {
    Metric::Euclidean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub name: StrategyName,
    /// Per-cycle annotation budget.
    pub budget: usize,
    /// Number of annotation cycles.
    pub cycles: usize,
    #[serde(default = "default_cluster_domain")]
    pub cluster_domain: ClusterDomain,
    #[serde(default = "default_metric")]
    pub metric: Metric,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Use the closed-set entropy in the query score.
    #[serde(default = "default_true")]
    pub use_s_c: bool,
    /// Use the distance-based entropy in the query score.
    #[serde(default = "default_true")]
    pub use_s_d: bool,
    /// Use queried open-set samples in training at all.
    #[serde(default = "default_true")]
    pub use_d_au: bool,
    /// Spread the budget across feature clusters.
    #[serde(default = "default_true")]
    pub use_diversity: bool,
    /// Train one-vs-all binary heads; otherwise the closed-set entropy comes
    /// from the classifier head's known-class probabilities.
    #[serde(default = "default_true")]
    pub use_bc: bool,
    /// Pick randomly within clusters instead of by score.
    #[serde(default)]
    pub diversity_only: bool,
    /// Evaluate with a separately trained model; otherwise the jointly
    /// trained extractor + classifier are evaluated on the known classes.
    #[serde(default = "default_true")]
    pub use_target_model: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            use_s_c: true,
            use_s_d: true,
            use_d_au: true,
            use_diversity: true,
            use_bc: true,
            diversity_only: false,
            use_target_model: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Dump per-cycle score tables as CSV next to rounds.csv.
    #[serde(default)]
    pub dump_scores: bool,
    /// Record wall time per cycle; switch off for byte-identical outputs.
    #[serde(default = "default_true")]
    pub measure_wall_time: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dump_scores: false,
            measure_wall_time: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(s).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("cannot serialize: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.training;
        let s = &self.strategy;
        if s.cycles < 1 {
            return Err(Error::config("strategy.cycles must be >= 1"));
        }
        if s.budget < 1 {
            return Err(Error::config("strategy.budget must be >= 1"));
        }
        if t.epochs < 1 || t.target_epochs() < 1 {
            return Err(Error::config("training.epochs must be >= 1"));
        }
        if t.batch_size < 1 {
            return Err(Error::config("training.batch_size must be >= 1"));
        }
        if !(t.learning_rate > 0.0) {
            return Err(Error::config("training.learning_rate must be > 0"));
        }
        if t.momentum < 0.0 || t.weight_decay < 0.0 {
            return Err(Error::config(
                "training.momentum and training.weight_decay must be >= 0",
            ));
        }
        if !(t.lr_decay_factor > 0.0) || t.lr_decay_every < 1 {
            return Err(Error::config(
                "training.lr_decay_factor must be > 0 and lr_decay_every >= 1",
            ));
        }
        if t.hidden_dims.is_empty() || t.hidden_dims.contains(&0) {
            return Err(Error::config("training.hidden_dims must be non-empty and positive"));
        }
        if t.lambda < 0.0 || t.beta < 0.0 {
            return Err(Error::config("training.lambda and training.beta must be >= 0"));
        }
        if !(t.temperature > 0.0) {
            return Err(Error::config("training.temperature must be > 0"));
        }
        if self.experiment.seeds.is_empty() {
            return Err(Error::config("experiment.seeds must not be empty"));
        }
        let a = &self.ablation;
        if a.diversity_only && !a.use_diversity {
            return Err(Error::config(
                "ablation.diversity_only requires ablation.use_diversity",
            ));
        }
        if !a.use_s_c && !a.use_s_d && s.name == StrategyName::Eoal && !a.diversity_only {
            return Err(Error::config(
                "disabling both entropy scores leaves no selection signal",
            ));
        }
        if !a.use_target_model && s.name != StrategyName::Eoal {
            return Err(Error::config(
                "ablation.use_target_model = false needs the jointly trained models (strategy eoal)",
            ));
        }
        match &self.dataset {
            DatasetConfig::Blobs {
                n_classes,
                per_class,
                dim,
                radius,
                sigma,
                ..
            } => {
                if *n_classes < 2 || *per_class < 1 || *dim < 2 {
                    return Err(Error::config(
                        "dataset.blobs needs n_classes >= 2, per_class >= 1, dim >= 2",
                    ));
                }
                if !(*radius > 0.0) || !(*sigma >= 0.0) {
                    return Err(Error::config(
                        "dataset.blobs needs radius > 0 and sigma >= 0",
                    ));
                }
            }
            DatasetConfig::Csv { path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::config("dataset.csv needs a path"));
                }
            }
        }
        for (name, f) in [
            ("split.mismatch_ratio", self.split.mismatch_ratio),
            ("split.initial_label_fraction", self.split.initial_label_fraction),
            ("split.test_fraction", self.split.test_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::config(format!("{name} must be in (0,1)")));
            }
        }
        Ok(())
    }
}

/// Applies `section.key=value` overrides to a TOML document. Every override
/// must reference a key that already exists in the document; values are
/// parsed as TOML literals (integers promote to floats where the original
/// value is a float).
pub fn apply_overrides(toml_text: &str, overrides: &[String]) -> Result<String> {
    let mut doc: toml::Value = toml_text
        .parse()
        .map_err(|e| Error::config(format!("invalid config: {e}")))?;

    for spec in overrides {
        let (path, raw_value) = spec
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{spec}` is not key=value")))?;
        let path = path.trim();
        let raw_value = raw_value.trim();

        let parsed: toml::Value = format!("v = {raw_value}")
            .parse::<toml::Value>()
            .ok()
            .and_then(|mut t| t.as_table_mut().and_then(|m| m.remove("v")))
            .unwrap_or_else(|| toml::Value::String(raw_value.to_string()));

        let segments: Vec<&str> = path.split('.').collect();
        let (last, parents) = segments.split_last().expect("split_once gave a key");
        let mut node = &mut doc;
        for seg in parents {
            node = node
                .as_table_mut()
                .and_then(|t| t.get_mut(*seg))
                .ok_or_else(|| {
                    Error::config(format!("override key `{path}` does not exist in the config"))
                })?;
        }
        let entry = node
            .as_table_mut()
            .and_then(|t| t.get_mut(*last))
            .ok_or_else(|| {
                Error::config(format!("override key `{path}` does not exist in the config"))
            })?;
        *entry = match (&*entry, parsed) {
            (toml::Value::Float(_), toml::Value::Integer(v)) => toml::Value::Float(v as f64),
            (_, v) => v,
        };
    }
    toml::to_string_pretty(&doc).map_err(|e| Error::config(format!("cannot serialize: {e}")))
}

/// A small complete configuration used by documentation and tests.
pub fn example_toml() -> &'static str {
    r#"[dataset]
source = "blobs"
n_classes = 10
per_class = 500
dim = 16
radius = 4.0
sigma = 1.5
seed = 7

[split]
mismatch_ratio = 0.4
initial_label_fraction = 0.02
test_fraction = 0.2

[training]
epochs = 60
batch_size = 64
learning_rate = 0.01
momentum = 0.9
weight_decay = 0.005
lr_decay_factor = 0.5
lr_decay_every = 20
hidden_dims = [64, 32]
lambda = 0.1
beta = 0.1
temperature = 1.0
warm_start = false

[strategy]
name = "eoal"
budget = 100
cycles = 5
cluster_domain = "predicted_known"
metric = "euclidean"

[ablation]
use_s_c = true
use_s_d = true
use_d_au = true
use_diversity = true
use_bc = true
diversity_only = false
use_target_model = true

[experiment]
seeds = [1, 2, 3, 4]

[output]
dump_scores = false
measure_wall_time = true
"#
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_config_parses_and_validates() {
        let cfg = ExperimentConfig::from_toml_str(example_toml()).unwrap();
        assert_eq!(cfg.strategy.name, StrategyName::Eoal);
        assert_eq!(cfg.strategy.budget, 100);
        assert_eq!(cfg.experiment.seeds, vec![1, 2, 3, 4]);
        assert!(cfg.ablation.use_s_c && cfg.ablation.use_bc);
        assert_eq!(cfg.training.target_epochs(), 60);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml_str(example_toml()).unwrap();
        let text = cfg.to_toml_string().unwrap();
        let again = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let cfg = ExperimentConfig::from_toml_str(example_toml()).unwrap();

        let mut bad = cfg.clone();
        bad.strategy.cycles = 0;
        assert!(bad.validate().is_err());

        let mut bad = cfg.clone();
        bad.ablation.diversity_only = true;
        bad.ablation.use_diversity = false;
        assert!(bad.validate().is_err());

        let mut bad = cfg.clone();
        bad.training.temperature = 0.0;
        assert!(bad.validate().is_err());

        let mut bad = cfg;
        bad.experiment.seeds.clear();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = example_toml().replace("budget = 100", "budget = 100\nbudgett = 3");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn overrides_replace_single_fields() {
        let out = apply_overrides(
            example_toml(),
            &["strategy.name=\"random\"".to_string(), "strategy.budget=50".to_string()],
        )
        .unwrap();
        let cfg = ExperimentConfig::from_toml_str(&out).unwrap();
        assert_eq!(cfg.strategy.name, StrategyName::Random);
        assert_eq!(cfg.strategy.budget, 50);
        // Untouched fields survive.
        assert_eq!(cfg.strategy.cycles, 5);
        assert_eq!(cfg.split.mismatch_ratio, 0.4);
    }

    #[test]
    fn overrides_accept_bare_strings_and_promote_floats() {
        let out = apply_overrides(
            example_toml(),
            &[
                "strategy.name=random".to_string(),
                "training.learning_rate=1".to_string(),
                "experiment.seeds=[9]".to_string(),
            ],
        )
        .unwrap();
        let cfg = ExperimentConfig::from_toml_str(&out).unwrap();
        assert_eq!(cfg.strategy.name, StrategyName::Random);
        assert_eq!(cfg.training.learning_rate, 1.0);
        assert_eq!(cfg.experiment.seeds, vec![9]);
    }

    #[test]
    fn overrides_reject_unknown_keys() {
        assert!(apply_overrides(example_toml(), &["strategy.nope=1".to_string()]).is_err());
        assert!(apply_overrides(example_toml(), &["nonsense".to_string()]).is_err());
    }
}
