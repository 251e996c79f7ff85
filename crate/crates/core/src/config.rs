//! Run configuration: TOML `key = value` sections with hard errors on
//! unknown keys. Every field defaults to the published hyperparameters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::EmbedTrainConfig;
use crate::error::{Error, Result};
use crate::eval::{ExperimentConfig, TaskSpec};
use crate::policy::{PolicyOptimizer, PolicyTrainConfig};

#[derive(Debug, Clone, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: DataSection,
    pub embedding: EmbeddingSection,
    pub policy: PolicySection,
    pub search: SearchSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub triples: Option<PathBuf>,
    pub task_relations: Vec<String>,
    pub combined: bool,
    pub negative_ratio: u32,
    pub split_ratio: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            triples: None,
            task_relations: Vec::new(),
            combined: false,
            negative_ratio: 10,
            split_ratio: 0.8,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub dim: usize,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l3_strength: f64,
    pub negatives_per_positive: u32,
    pub seed: Option<u64>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            dim: 20,
            epochs: 1000,
            batch_size: 50,
            learning_rate: 1e-4,
            l3_strength: 1e-5,
            negatives_per_positive: 10,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub hidden: usize,
    pub episodes: u64,
    pub learning_rate: f64,
    pub top_k_sampling: usize,
    pub max_steps: usize,
    pub optimizer: String,
    pub progress_every: u64,
    pub seed: Option<u64>,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            hidden: 128,
            episodes: 100_000,
            learning_rate: 0.001,
            top_k_sampling: 3,
            max_steps: 3,
            optimizer: "adam".to_string(),
            progress_every: 1000,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub beam_widths: Vec<usize>,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            beam_widths: vec![3, 5, 10],
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub model_dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            model_dir: PathBuf::from("models"),
        }
    }
}

impl RunConfig {
    /// Defaults only.
    pub fn paper_defaults() -> Self {
        RunConfig::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Master seed with paper default 0.
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn embed_config(&self) -> EmbedTrainConfig {
        EmbedTrainConfig {
            dim: self.embedding.dim,
            epochs: self.embedding.epochs,
            batch_size: self.embedding.batch_size,
            learning_rate: self.embedding.learning_rate,
            l3_strength: self.embedding.l3_strength,
            negatives_per_positive: self.embedding.negatives_per_positive,
            seed: self.embedding.seed.unwrap_or_else(|| self.seed()),
        }
    }

    pub fn policy_config(&self) -> Result<PolicyTrainConfig> {
        let optimizer = match self.policy.optimizer.as_str() {
            "adam" => PolicyOptimizer::Adam,
            "sgd" => PolicyOptimizer::Sgd,
            other => {
                return Err(Error::Config(format!(
                    "policy optimizer must be \"adam\" or \"sgd\", got {other:?}"
                )))
            }
        };
        Ok(PolicyTrainConfig {
            episodes: self.policy.episodes,
            learning_rate: self.policy.learning_rate,
            top_k_sampling: self.policy.top_k_sampling,
            seed: self.policy.seed.unwrap_or_else(|| self.seed()),
            optimizer,
            progress_every: self.policy.progress_every,
        })
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        if self.search.beam_widths.is_empty() {
            return Err(Error::Config("search.beam_widths is empty".to_string()));
        }
        if self.policy.max_steps == 0 {
            return Err(Error::Config("policy.max_steps must be >= 1".to_string()));
        }
        Ok(ExperimentConfig {
            split_ratio: self.data.split_ratio,
            negative_ratio: self.data.negative_ratio,
            beam_widths: self.search.beam_widths.clone(),
            max_steps: self.policy.max_steps,
            hidden: self.policy.hidden,
            embed: self.embed_config(),
            policy: self.policy_config()?,
            seed: self.seed(),
        })
    }

    /// Single-relation tasks from `task_relations`, plus their union when
    /// `combined` is set.
    pub fn task_specs(&self) -> Result<Vec<TaskSpec>> {
        if self.data.task_relations.is_empty() {
            return Err(Error::Config(
                "data.task_relations lists no relations".to_string(),
            ));
        }
        let mut specs: Vec<TaskSpec> = self
            .data
            .task_relations
            .iter()
            .map(|r| TaskSpec {
                name: r.clone(),
                relations: vec![r.clone()],
            })
            .collect();
        if self.data.combined && self.data.task_relations.len() > 1 {
            specs.push(TaskSpec {
                name: "combined".to_string(),
                relations: self.data.task_relations.clone(),
            });
        }
        Ok(specs)
    }
}
