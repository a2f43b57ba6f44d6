//! Two-stage semantic partitioning.
//!
//! Stage 1 clusters every label's embeddings into one Gaussian per client.
//! Stage 2 visits labels in a seeded random order and links the clusters of
//! consecutive labels with a minimum-cost matching under a symmetrized KL
//! cost, so each client ends up with exactly one cluster of every label.

use rand::seq::SliceRandom;

use super::embed::{embed_examples, EmbedderConfig};
use super::gaussian::symmetric_kl;
use super::gmm::{default_reg, gmm_assign, gmm_fit, GaussianMixture, GmmConfig};
use super::matching::optimal_bipartite_match;
use crate::datasets::{synthetic_client_id, ClientDataset, Example, FederatedDataset};
use crate::error::{Error, Result};
use crate::numerics::{substream, Matrix, SeededRng};
use crate::parallel;

struct LabelClusters {
    label: usize,
    /// Pool indices per cluster.
    members: Vec<Vec<usize>>,
    mixture: GaussianMixture,
}

pub fn semantic_partition(
    pool: &[Example],
    num_clients: usize,
    embedder: &EmbedderConfig,
    gmm_cfg: &GmmConfig,
    seed: u64,
) -> Result<FederatedDataset> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if num_clients == 0 {
        return Err(Error::TooFewClients(0));
    }
    let num_labels = pool.iter().map(|e| e.y).max().unwrap_or(0) + 1;
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); num_labels];
    for (i, e) in pool.iter().enumerate() {
        by_label[e.y].push(i);
    }
    let present: Vec<usize> = (0..num_labels)
        .filter(|&k| !by_label[k].is_empty())
        .collect();
    for &k in &present {
        if by_label[k].len() < num_clients {
            return Err(Error::TooFewPoints {
                points: by_label[k].len(),
                components: num_clients,
            });
        }
    }

    let embedded = embed_examples(pool, embedder)?;

    let clusters = parallel::try_map(&present, |&label| {
        cluster_label(
            &embedded,
            &by_label[label],
            label,
            num_clients,
            gmm_cfg,
            seed,
        )
    })?;

    // Stage 2: chain matchings along a random label order.
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.shuffle(&mut substream(seed, "label_order", 0));

    // owner[label position][cluster] = client index
    let mut owner = vec![vec![0usize; num_clients]; clusters.len()];
    owner[order[0]] = (0..num_clients).collect();
    for pair in order.windows(2) {
        let (prev, next) = (&clusters[pair[0]], &clusters[pair[1]]);
        let mut cost = Matrix::zeros(num_clients, num_clients);
        for i in 0..num_clients {
            for j in 0..num_clients {
                cost[(i, j)] =
                    symmetric_kl(&prev.mixture.components[i], &next.mixture.components[j])?;
            }
        }
        let perm = optimal_bipartite_match(&cost)?;
        for (i, &j) in perm.iter().enumerate() {
            owner[pair[1]][j] = owner[pair[0]][i];
        }
    }

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for (pos, lc) in clusters.iter().enumerate() {
        debug_assert_eq!(lc.label, present[pos]);
        for (cluster, members) in lc.members.iter().enumerate() {
            assigned[owner[pos][cluster]].extend_from_slice(members);
        }
    }
    let feature_dim = pool[0].x.len();
    let clients = assigned.into_iter().enumerate().map(|(c, mut idx)| {
        idx.sort_unstable();
        ClientDataset::new(
            synthetic_client_id(c),
            idx.into_iter().map(|i| pool[i].clone()).collect(),
        )
    });
    FederatedDataset::from_clients(num_labels, feature_dim, clients)
}

fn cluster_label(
    embedded: &Matrix,
    indices: &[usize],
    label: usize,
    num_clients: usize,
    cfg: &GmmConfig,
    seed: u64,
) -> Result<LabelClusters> {
    let points = embedded.select_rows(indices);
    let reg = cfg.reg.unwrap_or_else(|| default_reg(&points));
    let gmm_seed = SeededRng::new(seed).derive("gmm", label as u64).key();
    let mixture = gmm_fit(&points, num_clients, cfg.max_iters, cfg.tol, reg, gmm_seed)?;
    let mut assignment = gmm_assign(&mixture, &points)?;
    fill_empty_clusters(&mixture, &points, &mut assignment, num_clients)?;

    let mut members = vec![Vec::new(); num_clients];
    for (local, &cluster) in assignment.iter().enumerate() {
        members[cluster].push(indices[local]);
    }
    Ok(LabelClusters {
        label,
        members,
        mixture,
    })
}

/// Every client must receive every label, so a cluster left empty by the
/// argmax assignment takes the point it is most responsible for among
/// clusters that can spare one.
fn fill_empty_clusters(
    mixture: &GaussianMixture,
    points: &Matrix,
    assignment: &mut [usize],
    num_clients: usize,
) -> Result<()> {
    let mut sizes = vec![0usize; num_clients];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    if sizes.iter().all(|&s| s > 0) {
        return Ok(());
    }
    let resp = mixture.responsibilities(points)?;
    for k in 0..num_clients {
        if sizes[k] > 0 {
            continue;
        }
        let mut best: Option<usize> = None;
        for i in 0..assignment.len() {
            if sizes[assignment[i]] <= 1 {
                continue;
            }
            if best.is_none_or(|b| resp[(i, k)] > resp[(b, k)]) {
                best = Some(i);
            }
        }
        let i = best.expect("n >= C guarantees a donor cluster");
        sizes[assignment[i]] -= 1;
        assignment[i] = k;
        sizes[k] = 1;
    }
    Ok(())
}
