use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datasets::{feature_matrix, Example};
use crate::error::{Error, Result};
use crate::numerics::{pca_fit, pca_transform, standard_normal, substream, Matrix};

/// Stand-ins for a pretrained feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderConfig {
    Raw,
    Pca { k: usize },
    RandomProjection { k: usize, seed: u64 },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Pca { k: 16 }
    }
}

impl EmbedderConfig {
    pub fn from_kind(kind: &str, k: Option<usize>, seed: Option<u64>) -> Result<Self> {
        let need_k = |k: Option<usize>| match k {
            Some(k) if k >= 1 => Ok(k),
            Some(_) => Err(Error::InvalidConfig(format!(
                "embedder `{kind}` needs k >= 1"
            ))),
            None => Err(Error::InvalidConfig(format!("embedder `{kind}` needs k"))),
        };
        match kind {
            "raw" => Ok(EmbedderConfig::Raw),
            "pca" => Ok(EmbedderConfig::Pca { k: need_k(k)? }),
            "random_projection" => Ok(EmbedderConfig::RandomProjection {
                k: need_k(k)?,
                seed: seed.unwrap_or(0),
            }),
            other => Err(Error::UnknownEmbedder(other.to_owned())),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EmbedderConfig::Raw => "raw",
            EmbedderConfig::Pca { .. } => "pca",
            EmbedderConfig::RandomProjection { .. } => "random_projection",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbedderDoc {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl Serialize for EmbedderConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (k, seed) = match *self {
            EmbedderConfig::Raw => (None, None),
            EmbedderConfig::Pca { k } => (Some(k), None),
            EmbedderConfig::RandomProjection { k, seed } => (Some(k), Some(seed)),
        };
        EmbedderDoc {
            kind: self.kind().to_owned(),
            k,
            seed,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EmbedderConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = EmbedderDoc::deserialize(d)?;
        EmbedderConfig::from_kind(&doc.kind, doc.k, doc.seed).map_err(serde::de::Error::custom)
    }
}

/// Embeds the pool's feature vectors, one row per example.
///
/// `pca(k)` is clamped to the rank bound `min(n, d)`.
pub fn embed_examples(pool: &[Example], cfg: &EmbedderConfig) -> Result<Matrix> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let x = feature_matrix(pool);
    match *cfg {
        EmbedderConfig::Raw => Ok(x),
        EmbedderConfig::Pca { k } => {
            let k = k.min(x.rows()).min(x.cols());
            let model = pca_fit(&x, k)?;
            pca_transform(&model, &x)
        }
        EmbedderConfig::RandomProjection { k, seed } => {
            let d = x.cols();
            let mut rng = substream(seed, "random_projection", 0);
            let scale = (1.0 / k as f64).sqrt();
            let r = Matrix::from_vec(
                k,
                d,
                (0..k * d)
                    .map(|_| scale * standard_normal(&mut rng))
                    .collect(),
            )?;
            x.matmul(&r.transpose())
        }
    }
}
