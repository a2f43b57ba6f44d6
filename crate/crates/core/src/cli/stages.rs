use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PartitionConfig, TrainerConfig};
use crate::datasets::{
    generate_synthetic, load_federated, merge_clients, save_federated, ClientDataset,
    FederatedDataset,
};
use crate::entropy::{client_entropy, write_entropy_csv, EntropyReport};
use crate::error::{Error, Result};
use crate::fedsim::{evaluate_split, train_centralized, train_federated};
use crate::metrics::{write_metrics_csv, MetricsLog, RhoMode};
use crate::models::{ModelParams, ModelSpec};
use crate::numerics::SeededRng;
use crate::partition::{dirichlet_label_partition, semantic_partition};
use crate::split::{three_way_split, ClientBlock, ThreeWaySplit};

fn stage_seed(cfg: &ExperimentConfig, stage: &str) -> u64 {
    SeededRng::new(cfg.seed).derive(stage, 0).key()
}

/// The configured dataset source, before partitioning.
pub fn source_dataset(cfg: &ExperimentConfig) -> Result<FederatedDataset> {
    match (&cfg.dataset.synthetic, &cfg.dataset.file) {
        (Some(s), _) => generate_synthetic(s, cfg.seed),
        (None, Some(path)) => load_federated(path),
        (None, None) => Err(Error::parse("dataset", "no source given")),
    }
}

pub fn partition_dataset(cfg: &ExperimentConfig, fd: FederatedDataset) -> Result<FederatedDataset> {
    let seed = stage_seed(cfg, "partition");
    let out = match &cfg.partition {
        PartitionConfig::Natural => return Ok(fd),
        PartitionConfig::Dirichlet { alpha, clients } => {
            dirichlet_label_partition(&merge_clients(&fd)?, *clients, *alpha, seed)?
        }
        PartitionConfig::Semantic {
            clients,
            embedder,
            gmm,
        } => semantic_partition(&merge_clients(&fd)?, *clients, embedder, gmm, seed)?,
    };
    // keep the label space of the source even if a label ended up unused
    Ok(FederatedDataset {
        num_labels: fd.num_labels.max(out.num_labels),
        ..out
    })
}

pub fn split_dataset(cfg: &ExperimentConfig, fd: &FederatedDataset) -> Result<ThreeWaySplit> {
    three_way_split(fd, &cfg.split, stage_seed(cfg, "split"))
}

const SPLIT_FILES: [&str; 3] = ["part_train.json", "part_val.json", "unpart.json"];

fn block_dataset(split: &ThreeWaySplit, block: &ClientBlock) -> FederatedDataset {
    let mut fd = FederatedDataset::new(split.num_labels, split.feature_dim);
    for (id, examples) in block.iter().filter(|(_, ex)| !ex.is_empty()) {
        let weight = split
            .weights
            .get(id)
            .copied()
            .unwrap_or(examples.len() as f64);
        fd.clients.insert(
            id.clone(),
            ClientDataset {
                id: id.clone(),
                weight,
                examples: examples.clone(),
            },
        );
    }
    fd
}

/// Writes the three blocks as dataset files inside `dir`.
pub fn save_split(split: &ThreeWaySplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, block) in SPLIT_FILES
        .iter()
        .zip([&split.part_train, &split.part_val, &split.unpart])
    {
        save_federated(&block_dataset(split, block), dir.join(name))?;
    }
    Ok(())
}

pub fn load_split(dir: &Path) -> Result<ThreeWaySplit> {
    let [train, val, unpart] = SPLIT_FILES.map(|name| load_federated(dir.join(name)));
    let (train, val, unpart) = (train?, val?, unpart?);
    let mut weights = std::collections::BTreeMap::new();
    let mut block = |fd: FederatedDataset| -> ClientBlock {
        fd.clients
            .into_values()
            .map(|c| {
                weights.entry(c.id.clone()).or_insert(c.weight);
                (c.id, c.examples)
            })
            .collect()
    };
    Ok(ThreeWaySplit {
        num_labels: train.num_labels,
        feature_dim: train.feature_dim,
        part_train: block(train),
        part_val: block(val),
        unpart: block(unpart),
        weights,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDoc {
    spec: ModelSpec,
    values: Vec<f64>,
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let doc = ParamsDoc {
        spec: params.spec,
        values: params.values.clone(),
    };
    let text = serde_json::to_string_pretty(&doc).expect("params serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ParamsDoc =
        serde_json::from_str(&text).map_err(|e| Error::parse("params", e.to_string()))?;
    doc.spec.validate()?;
    if doc.values.len() != doc.spec.num_params() {
        return Err(Error::parse(
            "params.values",
            format!(
                "expected {} values, got {}",
                doc.spec.num_params(),
                doc.values.len()
            ),
        ));
    }
    Ok(ModelParams {
        spec: doc.spec,
        values: doc.values,
    })
}

pub fn train(cfg: &ExperimentConfig, split: &ThreeWaySplit) -> Result<(MetricsLog, ModelParams)> {
    let spec = cfg.model_spec(split.feature_dim, split.num_labels);
    match &cfg.trainer {
        TrainerConfig::Federated(t) => train_federated(split, spec, t),
        TrainerConfig::Centralized(c) => train_centralized(split, spec, c),
    }
}

fn rho_mode(cfg: &ExperimentConfig) -> (RhoMode, bool) {
    match &cfg.trainer {
        TrainerConfig::Federated(t) => (t.rho_mode, t.percentiles),
        TrainerConfig::Centralized(c) => (c.rho_mode, c.percentiles),
    }
}

/// One record evaluating `params` on all three blocks.
pub fn evaluate(
    cfg: &ExperimentConfig,
    split: &ThreeWaySplit,
    params: &ModelParams,
) -> Result<MetricsLog> {
    let (rho, pct) = rho_mode(cfg);
    Ok(MetricsLog {
        config_digest: String::new(),
        records: vec![evaluate_split(params, split, rho, 0, pct)?],
    })
}

/// Entropy reports for the configured labels; labels without any
/// qualifying client are skipped.
pub fn entropy(cfg: &ExperimentConfig, fd: &FederatedDataset) -> Result<Vec<EntropyReport>> {
    let section = cfg.entropy.clone().unwrap_or_default();
    let labels = section
        .labels
        .unwrap_or_else(|| (0..fd.num_labels).collect());
    let seed = stage_seed(cfg, "entropy");
    let mut reports = Vec::new();
    for label in labels {
        match client_entropy(fd, label, &section.estimator, seed) {
            Ok(r) => {
                log::info!(
                    "label {label}: mean entropy {:.3} nats over {} clients",
                    r.mean,
                    r.per_client.len()
                );
                reports.push(r);
            }
            Err(Error::NoQualifyingClients { label }) => {
                log::warn!("label {label}: no client has enough examples; skipped");
            }
            Err(e) => return Err(e),
        }
    }
    if reports.is_empty() {
        return Err(Error::InvalidConfig(
            "no label had a qualifying client for entropy".into(),
        ));
    }
    Ok(reports)
}

/// Runs every stage, writing only the outputs the config declares.
pub fn pipeline(cfg: &ExperimentConfig) -> Result<()> {
    let out = &cfg.outputs;
    if out.metrics_csv.is_none() {
        return Err(Error::parse(
            "outputs.metrics_csv",
            "required by `pipeline`",
        ));
    }
    for path in [
        &out.metrics_csv,
        &out.dataset_out,
        &out.entropy_csv,
        &out.params_out,
    ]
    .into_iter()
    .flatten()
    {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let fd = partition_dataset(cfg, source_dataset(cfg)?)?;
    log::info!(
        "{} clients, {} examples",
        fd.num_clients(),
        fd.num_examples()
    );
    if let Some(path) = &out.dataset_out {
        save_federated(&fd, path)?;
    }
    let split = split_dataset(cfg, &fd)?;
    let (log, params) = train(cfg, &split)?;
    if let Some(path) = &out.metrics_csv {
        write_metrics_csv(&log, path)?;
    }
    if let Some(path) = &out.params_out {
        save_params(&params, path)?;
    }
    if let Some(path) = &out.entropy_csv {
        write_entropy_csv(&entropy(cfg, &fd)?, path)?;
    }
    Ok(())
}
