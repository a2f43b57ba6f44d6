use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::SyntheticMetaConfig;
use crate::entropy::EntropyConfig;
use crate::error::{Error, Result};
use crate::fedsim::{CentralizedConfig, TrainConfig};
use crate::models::{ModelKind, ModelSpec};
use crate::partition::{EmbedderConfig, GmmConfig};
use crate::split::SplitConfig;

/// One experiment. Relative paths are resolved against the directory of
/// the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Drives data generation, partitioning, splitting and entropy
    /// estimation. The trainer has its own seed.
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub split: SplitConfig,
    pub model: ModelKind,
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub entropy: Option<EntropySection>,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    #[serde(default)]
    pub synthetic: Option<SyntheticMetaConfig>,
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionConfig {
    /// Keep the clients the dataset already has.
    #[default]
    Natural,
    Dirichlet {
        alpha: f64,
        clients: usize,
    },
    Semantic {
        clients: usize,
        #[serde(default)]
        embedder: EmbedderConfig,
        #[serde(default)]
        gmm: GmmConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainerConfig {
    Federated(TrainConfig),
    Centralized(CentralizedConfig),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropySection {
    /// Labels to score; all labels when absent.
    #[serde(default)]
    pub labels: Option<Vec<usize>>,
    #[serde(default)]
    pub estimator: EntropyConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default)]
    pub metrics_csv: Option<PathBuf>,
    /// The partitioned dataset.
    #[serde(default)]
    pub dataset_out: Option<PathBuf>,
    #[serde(default)]
    pub entropy_csv: Option<PathBuf>,
    /// Final model parameters.
    #[serde(default)]
    pub params_out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        ModelSpec {
            kind: self.model,
            input_dim,
            num_classes,
        }
    }

    /// Checks ranges and cross-field rules; errors name the field path.
    pub fn validate(&self) -> Result<()> {
        let invalid = |field: &str, e: Error| Error::parse(field, e.to_string());
        match (&self.dataset.synthetic, &self.dataset.file) {
            (Some(s), None) => s.validate().map_err(|e| invalid("dataset.synthetic", e))?,
            (None, Some(_)) => {}
            _ => {
                return Err(Error::parse(
                    "dataset",
                    "give exactly one of `synthetic` or `file`",
                ))
            }
        }
        match &self.partition {
            PartitionConfig::Natural => {}
            PartitionConfig::Dirichlet { alpha, clients } => {
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::parse("partition.alpha", "must be > 0"));
                }
                if *clients == 0 {
                    return Err(Error::parse("partition.clients", "must be >= 1"));
                }
            }
            PartitionConfig::Semantic { clients, gmm, .. } => {
                if *clients == 0 {
                    return Err(Error::parse("partition.clients", "must be >= 1"));
                }
                if gmm.max_iters == 0 || !(gmm.tol >= 0.0) {
                    return Err(Error::parse(
                        "partition.gmm",
                        "needs max_iters >= 1 and tol >= 0",
                    ));
                }
            }
        }
        if !(0.0..1.0).contains(&self.split.unpart_frac) {
            return Err(Error::parse("split.unpart_frac", "must be in [0, 1)"));
        }
        if !(self.split.val_frac > 0.0 && self.split.val_frac < 1.0) {
            return Err(Error::parse("split.val_frac", "must be in (0, 1)"));
        }
        if let ModelKind::Mlp { hidden_units: 0 } = self.model {
            return Err(Error::parse("model.hidden_units", "must be >= 1"));
        }
        match &self.trainer {
            TrainerConfig::Federated(t) => {
                t.validate().map_err(|e| invalid("trainer.federated", e))?
            }
            TrainerConfig::Centralized(c) => c
                .validate()
                .map_err(|e| invalid("trainer.centralized", e))?,
        }
        if let Some(section) = &self.entropy {
            section
                .estimator
                .validate()
                .map_err(|e| invalid("entropy.estimator", e))?;
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.dataset.file);
        fix(&mut self.outputs.metrics_csv);
        fix(&mut self.outputs.dataset_out);
        fix(&mut self.outputs.entropy_csv);
        fix(&mut self.outputs.params_out);
    }
}

/// Parses and validates a config document without touching the filesystem.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." {
            "config".to_string()
        } else {
            path
        };
        Error::parse(field, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config_str(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
