use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vae::{iwae_log_evidence, train_vae, Likelihood, VaeSpec, VaeTrainConfig};
use crate::datasets::FederatedDataset;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropyConfig {
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub train: VaeTrainConfig,
    pub iwae_samples: usize,
    /// Clients with fewer examples of the label are skipped.
    pub min_examples: usize,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            latent_dim: 2,
            encoder_hidden: 32,
            decoder_hidden: 32,
            train: VaeTrainConfig::default(),
            iwae_samples: 1000,
            min_examples: 8,
        }
    }
}

impl EntropyConfig {
    pub fn vae_spec(&self, input_dim: usize) -> VaeSpec {
        VaeSpec {
            input_dim,
            latent_dim: self.latent_dim,
            encoder_hidden: self.encoder_hidden,
            decoder_hidden: self.decoder_hidden,
            likelihood: Likelihood::Bernoulli,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iwae_samples == 0 || self.min_examples == 0 {
            return Err(Error::InvalidConfig(
                "iwae_samples and min_examples must be >= 1".into(),
            ));
        }
        self.train.validate()?;
        self.vae_spec(1).validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientEntropy {
    pub n_examples: usize,
    /// Nats.
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub label: usize,
    pub per_client: BTreeMap<String, ClientEntropy>,
    /// Unweighted mean across the included clients.
    pub mean: f64,
}

/// Entropy (nats) of one set of points: a VAE is fit to them and the
/// estimate is `−mean IWAE log-evidence`.
pub fn estimate_entropy(points: &[Vec<f64>], cfg: &EntropyConfig, seed: u64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rng = SeededRng::new(seed);
    let spec = cfg.vae_spec(points[0].len());
    let vae = train_vae(points, spec, &cfg.train, rng.derive("train", 0).key())?;
    let mut stream = rng.derive("iwae", 0).stream();
    let mut total = 0.0;
    for x in points {
        total += iwae_log_evidence(&vae, x, cfg.iwae_samples, &mut stream)?;
    }
    Ok(-total / points.len() as f64)
}

/// Per-client entropy of the examples carrying `label`.
pub fn client_entropy(
    fd: &FederatedDataset,
    label: usize,
    cfg: &EntropyConfig,
    seed: u64,
) -> Result<EntropyReport> {
    cfg.validate()?;
    let mut jobs: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for (id, client) in &fd.clients {
        let points: Vec<Vec<f64>> = client
            .examples
            .iter()
            .filter(|e| e.y == label)
            .map(|e| e.x.clone())
            .collect();
        if points.len() < cfg.min_examples {
            log::warn!(
                "client `{id}` has {} examples of label {label} (< {}); skipped",
                points.len(),
                cfg.min_examples
            );
            continue;
        }
        jobs.push((id.clone(), points));
    }
    if jobs.is_empty() {
        return Err(Error::NoQualifyingClients { label });
    }
    let root = SeededRng::new(seed).derive("entropy", label as u64);
    let values = parallel::try_map(&jobs, |(id, points)| {
        estimate_entropy(points, cfg, root.derive(id, 0).key())
    })?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let per_client = jobs
        .iter()
        .zip(values)
        .map(|((id, points), entropy)| {
            (
                id.clone(),
                ClientEntropy {
                    n_examples: points.len(),
                    entropy,
                },
            )
        })
        .collect();
    Ok(EntropyReport {
        label,
        per_client,
        mean,
    })
}

pub const ENTROPY_CSV_HEADER: &str = "client_id,label,n_examples,entropy_nats";

pub fn format_entropy_csv(reports: &[EntropyReport]) -> String {
    let mut out = String::from(ENTROPY_CSV_HEADER);
    out.push('\n');
    for r in reports {
        for (id, c) in &r.per_client {
            writeln!(out, "{id},{},{},{:.6}", r.label, c.n_examples, c.entropy)
                .expect("write to string");
        }
    }
    out
}

pub fn write_entropy_csv(reports: &[EntropyReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_entropy_csv(reports)).map_err(|e| Error::io(path, e))
}
