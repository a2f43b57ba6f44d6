use rand::Rng;

use crate::datasets::{
    sample_categorical, synthetic_client_id, ClientDataset, Example, FederatedDataset,
};
use crate::error::{Error, Result};
use crate::numerics::{sample_dirichlet, substream};

/// Label-skewed partition: each client draws a label mix from
/// `Dirichlet(alpha · prior)`, where `prior` is the pool's label frequency.
///
/// Clients are filled one after another. Each slot draws a label from the
/// client's mix restricted to labels that still have stock, then takes a
/// uniformly random remaining example of that label.
pub fn dirichlet_label_partition(
    pool: &[Example],
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<FederatedDataset> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if num_clients == 0 {
        return Err(Error::TooFewClients(0));
    }
    let num_labels = pool.iter().map(|e| e.y).max().unwrap_or(0) + 1;
    let feature_dim = pool[0].x.len();

    let mut stock: Vec<Vec<usize>> = vec![Vec::new(); num_labels];
    for (i, e) in pool.iter().enumerate() {
        stock[e.y].push(i);
    }
    let n = pool.len();
    let concentration: Vec<f64> = stock
        .iter()
        .map(|s| alpha * s.len() as f64 / n as f64)
        .collect();

    let mut assign_rng = substream(seed, "dirichlet_assign", 0);
    let mut clients = Vec::with_capacity(num_clients);
    for c in 0..num_clients {
        let mix = sample_dirichlet(
            &mut substream(seed, "dirichlet_mix", c as u64),
            &concentration,
        );
        let quota = n / num_clients + usize::from(c < n % num_clients);
        let mut examples = Vec::with_capacity(quota);
        for _ in 0..quota {
            let mut weights: Vec<f64> = mix
                .iter()
                .zip(&stock)
                .map(|(q, s)| if s.is_empty() { 0.0 } else { *q })
                .collect();
            if weights.iter().sum::<f64>() <= 0.0 {
                // the mix puts no mass on any label with stock left
                weights = stock.iter().map(|s| s.len() as f64).collect();
            }
            let label = sample_categorical(&mut assign_rng, &weights);
            let s = &mut stock[label];
            let pick = assign_rng.random_range(0..s.len());
            examples.push(pool[s.swap_remove(pick)].clone());
        }
        clients.push(ClientDataset::new(synthetic_client_id(c), examples));
    }
    FederatedDataset::from_clients(num_labels, feature_dim, clients)
}
