//! Federated dataset model, a synthetic client meta-distribution, and the
//! JSON document format used to persist datasets.
//!
//! The synthetic generator draws global class means once, then treats each
//! client as a draw from a meta-distribution: a per-client, per-class mean
//! shift (scale `sigma_client`) plus a per-client label mix drawn from a
//! symmetric Dirichlet. Setting `sigma_client = 0` and a huge
//! `dirichlet_alpha` yields homogeneous clients.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_dirichlet, standard_normal, substream, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub id: String,
    /// Aggregation weight `ρ_c`.
    pub weight: f64,
    pub examples: Vec<Example>,
}

impl ClientDataset {
    /// Client whose weight is its example count.
    pub fn new(id: impl Into<String>, examples: Vec<Example>) -> Self {
        ClientDataset {
            id: id.into(),
            weight: examples.len() as f64,
            examples,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    pub num_labels: usize,
    pub feature_dim: usize,
    /// Keyed by client id; iteration is in ascending id order.
    pub clients: BTreeMap<String, ClientDataset>,
}

impl FederatedDataset {
    pub fn new(num_labels: usize, feature_dim: usize) -> Self {
        FederatedDataset {
            num_labels,
            feature_dim,
            clients: BTreeMap::new(),
        }
    }

    /// Builds a dataset from clients, validating shapes and id uniqueness.
    pub fn from_clients(
        num_labels: usize,
        feature_dim: usize,
        clients: impl IntoIterator<Item = ClientDataset>,
    ) -> Result<Self> {
        let mut fd = FederatedDataset::new(num_labels, feature_dim);
        for c in clients {
            if fd.clients.contains_key(&c.id) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate client id `{}`",
                    c.id
                )));
            }
            fd.clients.insert(c.id.clone(), c);
        }
        fd.validate()?;
        Ok(fd)
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn num_examples(&self) -> usize {
        self.clients.values().map(ClientDataset::len).sum()
    }

    pub fn client_ids(&self) -> Vec<String> {
        self.clients.keys().cloned().collect()
    }

    /// Dataset restricted to `ids` (unknown ids are ignored).
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> FederatedDataset {
        let mut out = FederatedDataset::new(self.num_labels, self.feature_dim);
        for id in ids {
            if let Some(c) = self.clients.get(id.as_ref()) {
                out.clients.insert(c.id.clone(), c.clone());
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        for c in self.clients.values() {
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "client `{}` has weight {}",
                    c.id, c.weight
                )));
            }
            for e in &c.examples {
                check_example(e, self.num_labels, self.feature_dim)
                    .map_err(|r| Error::InvalidConfig(format!("client `{}`: {r}", c.id)))?;
            }
        }
        Ok(())
    }
}

fn check_example(
    e: &Example,
    num_labels: usize,
    feature_dim: usize,
) -> std::result::Result<(), String> {
    if e.x.len() != feature_dim {
        return Err(format!(
            "example has {} features, expected {feature_dim}",
            e.x.len()
        ));
    }
    if e.y >= num_labels {
        return Err(format!(
            "label {} out of range for {num_labels} labels",
            e.y
        ));
    }
    if e.x.iter().any(|v| !v.is_finite()) {
        return Err("non-finite feature".into());
    }
    Ok(())
}

/// Feature matrix (`n × d`) of a slice of examples.
pub fn feature_matrix(examples: &[Example]) -> Matrix {
    let d = examples.first().map_or(0, |e| e.x.len());
    let mut m = Matrix::zeros(examples.len(), d);
    for (i, e) in examples.iter().enumerate() {
        m.row_mut(i).copy_from_slice(&e.x);
    }
    m
}

/// Concatenates every client's examples in ascending client-id order.
pub fn merge_clients(fd: &FederatedDataset) -> Result<Vec<Example>> {
    if fd.clients.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(fd
        .clients
        .values()
        .flat_map(|c| c.examples.iter().cloned())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticMetaConfig {
    pub num_labels: usize,
    pub feature_dim: usize,
    pub num_clients: usize,
    pub examples_per_client: usize,
    /// Spread of the global class means.
    pub sigma_class: f64,
    /// Scale of per-client, per-class mean shifts.
    pub sigma_client: f64,
    /// Within-class noise.
    pub sigma_within: f64,
    /// Concentration of each client's label mix.
    pub dirichlet_alpha: f64,
}

impl SyntheticMetaConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_labels", self.num_labels),
            ("feature_dim", self.feature_dim),
            ("num_clients", self.num_clients),
            ("examples_per_client", self.examples_per_client),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        let sigmas = [
            ("sigma_class", self.sigma_class),
            ("sigma_client", self.sigma_client),
            ("sigma_within", self.sigma_within),
        ];
        for (name, v) in sigmas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "dirichlet_alpha must be > 0, got {}",
                self.dirichlet_alpha
            )));
        }
        Ok(())
    }
}

pub fn synthetic_client_id(index: usize) -> String {
    format!("client_{index:04}")
}

/// Draws a federated dataset from the synthetic meta-distribution.
///
/// Each client uses its own substream, and draws its class shifts and label
/// mix before any examples, so client `c` is identical across configs that
/// differ only in `num_clients` or `examples_per_client` (up to the final
/// per-dataset rescaling).
pub fn generate_synthetic(cfg: &SyntheticMetaConfig, seed: u64) -> Result<FederatedDataset> {
    cfg.validate()?;
    let (k, d) = (cfg.num_labels, cfg.feature_dim);

    let class_means: Vec<Vec<f64>> = (0..k)
        .map(|label| {
            let mut rng = substream(seed, "class_mean", label as u64);
            (0..d)
                .map(|_| cfg.sigma_class * standard_normal(&mut rng))
                .collect()
        })
        .collect();

    let noise = Normal::new(0.0, cfg.sigma_within).expect("sigma_within validated");
    let mut clients = Vec::with_capacity(cfg.num_clients);
    for c in 0..cfg.num_clients {
        let mut rng = substream(seed, "client", c as u64);
        let centers: Vec<Vec<f64>> = class_means
            .iter()
            .map(|mu| {
                mu.iter()
                    .map(|m| m + cfg.sigma_client * standard_normal(&mut rng))
                    .collect()
            })
            .collect();
        let mix = sample_dirichlet(&mut rng, &vec![cfg.dirichlet_alpha; k]);
        let examples = (0..cfg.examples_per_client)
            .map(|_| {
                let y = sample_categorical(&mut rng, &mix);
                let x = centers[y]
                    .iter()
                    .map(|m| m + noise.sample(&mut rng))
                    .collect();
                Example { x, y }
            })
            .collect();
        clients.push(ClientDataset::new(synthetic_client_id(c), examples));
    }

    rescale_unit(&mut clients, d);
    FederatedDataset::from_clients(k, d, clients)
}

/// Index drawn with probability proportional to `weights`.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

/// Affinely maps every feature dimension to [0, 1]; constant dimensions → 0.5.
fn rescale_unit(clients: &mut [ClientDataset], d: usize) {
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for e in clients.iter().flat_map(|c| &c.examples) {
        for j in 0..d {
            lo[j] = lo[j].min(e.x[j]);
            hi[j] = hi[j].max(e.x[j]);
        }
    }
    for e in clients.iter_mut().flat_map(|c| &mut c.examples) {
        for j in 0..d {
            let span = hi[j] - lo[j];
            e.x[j] = if span > 0.0 {
                (e.x[j] - lo[j]) / span
            } else {
                0.5
            };
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientDoc {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
    examples: Vec<Example>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    num_labels: usize,
    feature_dim: usize,
    clients: Vec<ClientDoc>,
}

pub fn parse_federated(text: &str) -> Result<FederatedDataset> {
    let doc: DatasetDoc =
        serde_json::from_str(text).map_err(|e| Error::parse("dataset", e.to_string()))?;
    let mut fd = FederatedDataset::new(doc.num_labels, doc.feature_dim);
    for (ci, c) in doc.clients.into_iter().enumerate() {
        let field = format!("clients[{ci}]");
        if c.examples.is_empty() {
            return Err(Error::parse(
                format!("{field}.examples"),
                "client has no examples",
            ));
        }
        for (ei, e) in c.examples.iter().enumerate() {
            check_example(e, doc.num_labels, doc.feature_dim)
                .map_err(|r| Error::parse(format!("{field}.examples[{ei}]"), r))?;
        }
        let weight = c.weight.unwrap_or(c.examples.len() as f64);
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::parse(
                format!("{field}.weight"),
                "must be a non-negative number",
            ));
        }
        if fd.clients.contains_key(&c.id) {
            return Err(Error::parse(
                format!("{field}.id"),
                format!("duplicate id `{}`", c.id),
            ));
        }
        fd.clients.insert(
            c.id.clone(),
            ClientDataset {
                id: c.id,
                weight,
                examples: c.examples,
            },
        );
    }
    Ok(fd)
}

pub fn load_federated(path: impl AsRef<Path>) -> Result<FederatedDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_federated(&text)
}

/// Serializes with one example per line.
pub fn format_federated(fd: &FederatedDataset) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{{\n  \"num_labels\": {},\n  \"feature_dim\": {},\n  \"clients\": [",
        fd.num_labels, fd.feature_dim
    ));
    for (ci, c) in fd.clients.values().enumerate() {
        if ci > 0 {
            out.push(',');
        }
        let id = serde_json::to_string(&c.id).expect("string serializes");
        let weight = serde_json::to_string(&c.weight).expect("float serializes");
        out.push_str(&format!(
            "\n    {{\n      \"id\": {id},\n      \"weight\": {weight},\n      \"examples\": ["
        ));
        for (ei, e) in c.examples.iter().enumerate() {
            if ei > 0 {
                out.push(',');
            }
            out.push_str("\n        ");
            out.push_str(&serde_json::to_string(e).expect("example serializes"));
        }
        out.push_str("\n      ]\n    }");
    }
    out.push_str("\n  ]\n}\n");
    out
}

pub fn save_federated(fd: &FederatedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_federated(fd).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SyntheticMetaConfig {
        SyntheticMetaConfig {
            num_labels: 3,
            feature_dim: 4,
            num_clients: 10,
            examples_per_client: 20,
            sigma_class: 2.0,
            sigma_client: 0.5,
            sigma_within: 0.3,
            dirichlet_alpha: 1.0,
        }
    }

    #[test]
    fn counts_are_conserved() {
        let fd = generate_synthetic(&cfg(), 1).unwrap();
        assert_eq!(fd.num_clients(), 10);
        assert!(fd
            .clients
            .values()
            .all(|c| c.len() == 20 && c.weight == 20.0));
        assert_eq!(fd.client_ids()[3], "client_0003");
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(
            generate_synthetic(&cfg(), 5).unwrap(),
            generate_synthetic(&cfg(), 5).unwrap()
        );
        assert_ne!(
            generate_synthetic(&cfg(), 5).unwrap(),
            generate_synthetic(&cfg(), 6).unwrap()
        );
    }

    #[test]
    fn features_rescaled_to_unit_box() {
        let fd = generate_synthetic(&cfg(), 2).unwrap();
        for j in 0..4 {
            let vals: Vec<f64> = fd
                .clients
                .values()
                .flat_map(|c| &c.examples)
                .map(|e| e.x[j])
                .collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (0.0, 1.0));
        }
    }

    #[test]
    fn constant_dimension_maps_to_half() {
        let mut c = cfg();
        c.sigma_class = 0.0;
        c.sigma_client = 0.0;
        c.sigma_within = 0.0;
        let fd = generate_synthetic(&c, 2).unwrap();
        assert!(fd
            .clients
            .values()
            .flat_map(|c| &c.examples)
            .all(|e| e.x.iter().all(|&v| v == 0.5)));
    }

    #[test]
    fn zero_client_sigma_gives_shared_class_means() {
        // with sigma_within = 0 every example sits exactly on its class mean,
        // so identical labels imply identical features across clients
        let mut c = cfg();
        c.sigma_client = 0.0;
        c.sigma_within = 0.0;
        let fd = generate_synthetic(&c, 9).unwrap();
        let mut by_label: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for e in fd.clients.values().flat_map(|c| &c.examples) {
            let first = by_label.entry(e.y).or_insert_with(|| e.x.clone());
            assert_eq!(first, &e.x);
        }
    }

    #[test]
    fn client_center_spread_grows_with_sigma_client() {
        // Monte Carlo over seeds: mean pairwise distance between clients'
        // empirical class-0 centers
        fn spread(sigma_client: f64, seed: u64) -> f64 {
            let mut c = cfg();
            c.sigma_client = sigma_client;
            c.dirichlet_alpha = 1e6;
            c.examples_per_client = 60;
            let fd = generate_synthetic(&c, seed).unwrap();
            let centers: Vec<Vec<f64>> = fd
                .clients
                .values()
                .filter_map(|cl| {
                    let xs: Vec<&Example> = cl.examples.iter().filter(|e| e.y == 0).collect();
                    (!xs.is_empty()).then(|| {
                        (0..4)
                            .map(|j| xs.iter().map(|e| e.x[j]).sum::<f64>() / xs.len() as f64)
                            .collect()
                    })
                })
                .collect();
            let mut total = 0.0;
            let mut pairs = 0;
            for i in 0..centers.len() {
                for j in 0..i {
                    total += centers[i]
                        .iter()
                        .zip(&centers[j])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    pairs += 1;
                }
            }
            total / pairs as f64
        }
        let lo: f64 = (0..20).map(|s| spread(0.0, s)).sum::<f64>() / 20.0;
        let hi: f64 = (0..20).map(|s| spread(1.0, s)).sum::<f64>() / 20.0;
        assert!(hi > lo, "{hi} vs {lo}");
    }

    #[test]
    fn invalid_configs() {
        let mut c = cfg();
        c.dirichlet_alpha = 0.0;
        assert!(matches!(
            generate_synthetic(&c, 0),
            Err(Error::InvalidConfig(_))
        ));
        let mut c = cfg();
        c.sigma_within = -1.0;
        assert!(generate_synthetic(&c, 0).is_err());
        let mut c = cfg();
        c.num_clients = 0;
        assert!(generate_synthetic(&c, 0).is_err());
    }

    fn ex(v: f64, y: usize) -> Example {
        Example { x: vec![v], y }
    }

    #[test]
    fn merge_orders_by_client_id() {
        let fd = FederatedDataset::from_clients(
            2,
            1,
            [
                ClientDataset::new("b", vec![ex(4.0, 0), ex(5.0, 1), ex(6.0, 0), ex(7.0, 1)]),
                ClientDataset::new("a", vec![ex(1.0, 0), ex(2.0, 1), ex(3.0, 0)]),
            ],
        )
        .unwrap();
        let pool = merge_clients(&fd).unwrap();
        assert_eq!(pool.len(), 7);
        assert_eq!(
            pool.iter().map(|e| e.x[0]).collect::<Vec<_>>(),
            vec![1., 2., 3., 4., 5., 6., 7.]
        );
        assert_eq!(pool, merge_clients(&fd).unwrap());
        let single = fd.subset(&["a"]);
        assert_eq!(merge_clients(&single).unwrap(), fd.clients["a"].examples);
        assert!(matches!(
            merge_clients(&FederatedDataset::new(2, 1)),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn round_trip() {
        let fd = generate_synthetic(&cfg(), 11).unwrap();
        let back = parse_federated(&format_federated(&fd)).unwrap();
        assert_eq!(fd, back);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fd.json");
        let fd = generate_synthetic(&cfg(), 12).unwrap();
        save_federated(&fd, &path).unwrap();
        assert_eq!(load_federated(&path).unwrap(), fd);
        assert!(matches!(
            load_federated(dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn missing_weight_defaults_to_count() {
        let doc = r#"{"num_labels": 2, "feature_dim": 1,
            "clients": [{"id": "a", "examples": [{"x": [0.1], "y": 0}, {"x": [0.2], "y": 1}]}]}"#;
        let fd = parse_federated(doc).unwrap();
        assert_eq!(fd.clients["a"].weight, 2.0);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let doc = r#"{"num_labels": 2, "feature_dim": 1,
            "clients": [{"id": "a", "examples": [{"x": [0.1], "y": 2}]}]}"#;
        match parse_federated(doc) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "clients[0].examples[0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_documents_rejected() {
        for doc in [
            "not json",
            r#"{"num_labels": 2, "feature_dim": 1, "clients": [], "extra": 1}"#,
            r#"{"num_labels": 2, "feature_dim": 2, "clients": [{"id": "a", "examples": [{"x": [0.1], "y": 0}]}]}"#,
            r#"{"num_labels": 2, "feature_dim": 1, "clients": [{"id": "a", "examples": []}]}"#,
            r#"{"num_labels": 2, "feature_dim": 1, "clients": [{"id": "a", "weight": -1, "examples": [{"x": [0.1], "y": 0}]}]}"#,
        ] {
            assert!(
                matches!(parse_federated(doc), Err(Error::Parse { .. })),
                "{doc}"
            );
        }
    }
}
