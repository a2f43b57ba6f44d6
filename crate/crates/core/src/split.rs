//! Three-way split: unparticipating clients are held out first, then each
//! participating client holds out part of its own data for validation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::{Example, FederatedDataset};
use crate::error::{Error, Result};
use crate::numerics::{substream, SeededRng};

pub type ClientBlock = BTreeMap<String, Vec<Example>>;

#[derive(Debug, Clone, PartialEq)]
pub struct ThreeWaySplit {
    pub num_labels: usize,
    pub feature_dim: usize,
    pub part_train: ClientBlock,
    pub part_val: ClientBlock,
    pub unpart: ClientBlock,
    /// `ρ_c` for every client on either side.
    pub weights: BTreeMap<String, f64>,
}

impl ThreeWaySplit {
    /// Homogeneous construction: every participating client trains on `train`
    /// and validates on `shared`, and every unparticipating client holds
    /// `shared`, all with weight 1.
    pub fn replicated(
        num_labels: usize,
        train: &[Example],
        shared: &[Example],
        num_participating: usize,
        num_unparticipating: usize,
    ) -> Self {
        let feature_dim = shared.first().or(train.first()).map_or(0, |e| e.x.len());
        let mut split = ThreeWaySplit {
            num_labels,
            feature_dim,
            part_train: BTreeMap::new(),
            part_val: BTreeMap::new(),
            unpart: BTreeMap::new(),
            weights: BTreeMap::new(),
        };
        for c in 0..num_participating {
            let id = format!("part_{c:04}");
            split.part_train.insert(id.clone(), train.to_vec());
            split.part_val.insert(id.clone(), shared.to_vec());
            split.weights.insert(id, 1.0);
        }
        for c in 0..num_unparticipating {
            let id = format!("unpart_{c:04}");
            split.unpart.insert(id.clone(), shared.to_vec());
            split.weights.insert(id, 1.0);
        }
        split
    }

    pub fn participating_ids(&self) -> Vec<String> {
        self.part_train.keys().cloned().collect()
    }

    pub fn total_examples(&self) -> usize {
        [&self.part_train, &self.part_val, &self.unpart]
            .iter()
            .flat_map(|b| b.values())
            .map(Vec::len)
            .sum()
    }

    /// Checks the structural invariants (shared key sets, disjoint sides).
    pub fn check(&self) -> Result<()> {
        if !self.part_train.keys().eq(self.part_val.keys()) {
            return Err(Error::ShapeMismatch(
                "participating train and validation clients differ".into(),
            ));
        }
        if let Some(id) = self
            .unpart
            .keys()
            .find(|id| self.part_train.contains_key(*id))
        {
            return Err(Error::ShapeMismatch(format!(
                "client `{id}` is both participating and unparticipating"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub unpart_frac: f64,
    pub val_frac: f64,
    /// Optional floor on each client's validation count.
    pub min_val_count: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            unpart_frac: 0.2,
            val_frac: 0.2,
            min_val_count: None,
        }
    }
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

/// Holds out `round(unpart_frac · n)` uniformly chosen clients, keeping at
/// least one client on each side when `unpart_frac > 0`.
pub fn inter_client_split(
    fd: &FederatedDataset,
    unpart_frac: f64,
    seed: u64,
) -> Result<(FederatedDataset, FederatedDataset)> {
    if !(0.0..1.0).contains(&unpart_frac) {
        return Err(Error::InvalidFraction(unpart_frac));
    }
    let n = fd.num_clients();
    let mut ids = fd.client_ids();
    if unpart_frac == 0.0 {
        return Ok((fd.clone(), fd.subset::<String>(&[])));
    }
    if n < 2 {
        return Err(Error::TooFewClients(n));
    }
    let held = round_half_up(unpart_frac * n as f64).clamp(1, n - 1);
    ids.shuffle(&mut substream(seed, "inter_client", 0));
    let (unpart, part) = ids.split_at(held);
    Ok((fd.subset(part), fd.subset(unpart)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntraClientSplit {
    pub train: ClientBlock,
    pub val: ClientBlock,
    /// Clients with a single example, kept entirely in train.
    pub singletons: Vec<String>,
}

pub fn intra_client_split(
    fd: &FederatedDataset,
    val_frac: f64,
    seed: u64,
) -> Result<IntraClientSplit> {
    intra_client_split_with_min(fd, val_frac, None, seed)
}

/// Per client with `n ≥ 2`, holds out `clamp(round(val_frac · n), 1, n − 1)`
/// uniformly chosen examples (raised to `min_val_count` when given).
/// Example order within each side follows the client's original order.
pub fn intra_client_split_with_min(
    fd: &FederatedDataset,
    val_frac: f64,
    min_val_count: Option<usize>,
    seed: u64,
) -> Result<IntraClientSplit> {
    if !(val_frac > 0.0 && val_frac < 1.0) {
        return Err(Error::InvalidFraction(val_frac));
    }
    let root = SeededRng::new(seed).derive("intra_client", 0);
    let mut out = IntraClientSplit {
        train: BTreeMap::new(),
        val: BTreeMap::new(),
        singletons: Vec::new(),
    };
    for (id, client) in &fd.clients {
        let n = client.len();
        if n < 2 {
            log::warn!("client `{id}` has {n} example(s); validation split left empty");
            out.singletons.push(id.clone());
            out.train.insert(id.clone(), client.examples.clone());
            out.val.insert(id.clone(), Vec::new());
            continue;
        }
        let wanted = round_half_up(val_frac * n as f64).max(min_val_count.unwrap_or(0));
        let count = wanted.clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut root.derive(id, 0).stream());
        let mut is_val = vec![false; n];
        order[..count].iter().for_each(|&i| is_val[i] = true);
        let (val, train): (Vec<_>, Vec<_>) = client
            .examples
            .iter()
            .cloned()
            .zip(is_val)
            .partition(|(_, v)| *v);
        out.train
            .insert(id.clone(), train.into_iter().map(|(e, _)| e).collect());
        out.val
            .insert(id.clone(), val.into_iter().map(|(e, _)| e).collect());
    }
    Ok(out)
}

pub fn three_way_split(
    fd: &FederatedDataset,
    cfg: &SplitConfig,
    seed: u64,
) -> Result<ThreeWaySplit> {
    let (part, unpart) = inter_client_split(fd, cfg.unpart_frac, seed)?;
    let intra = intra_client_split_with_min(&part, cfg.val_frac, cfg.min_val_count, seed)?;
    Ok(ThreeWaySplit {
        num_labels: fd.num_labels,
        feature_dim: fd.feature_dim,
        part_train: intra.train,
        part_val: intra.val,
        unpart: unpart
            .clients
            .into_values()
            .map(|c| (c.id, c.examples))
            .collect(),
        weights: fd
            .clients
            .values()
            .map(|c| (c.id.clone(), c.weight))
            .collect(),
    })
}
