use rand::seq::SliceRandom;
use rand::Rng;

use super::config::ClientOptConfig;
use crate::datasets::Example;
use crate::error::{Error, Result};
use crate::models::{loss_and_grad, ModelParams};
use crate::numerics::substream;

/// Uniform sample of `m` distinct ids without replacement, returned sorted.
pub fn sample_clients<S: AsRef<str>>(
    ids: &[S],
    m: usize,
    round: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if m == 0 || m > ids.len() {
        return Err(Error::TooMany {
            requested: m,
            available: ids.len(),
        });
    }
    let mut rng = substream(seed, "sample", round as u64);
    let mut picked: Vec<String> = rand::seq::index::sample(&mut rng, ids.len(), m)
        .into_iter()
        .map(|i| ids[i].as_ref().to_string())
        .collect();
    picked.sort();
    Ok(picked)
}

/// Local SGD from `params`; returns `(w_local − params, n_examples)`.
pub fn client_update<R: Rng + ?Sized>(
    params: &ModelParams,
    examples: &[Example],
    cfg: &ClientOptConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, usize)> {
    if examples.is_empty() {
        return Err(Error::EmptyClient("no training examples".into()));
    }
    let mut local = params.clone();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size.min(examples.len()));
    for _ in 0..cfg.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let (_, g) = loss_and_grad(&local, &batch)?;
            for (w, gi) in local.values.iter_mut().zip(&g) {
                *w -= cfg.client_lr * gi;
            }
        }
    }
    let delta = local
        .values
        .iter()
        .zip(&params.values)
        .map(|(a, b)| a - b)
        .collect();
    Ok((delta, examples.len()))
}

/// `Σ wᵢ δᵢ / Σ wᵢ`, accumulated in the order given.
pub fn aggregate_deltas(pairs: &[(Vec<f64>, f64)]) -> Result<Vec<f64>> {
    let Some((first, _)) = pairs.first() else {
        return Err(Error::EmptyRound);
    };
    let len = first.len();
    let mut total = 0.0;
    let mut sum = vec![0.0; len];
    for (delta, w) in pairs {
        if delta.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "client deltas of lengths {len} and {}",
                delta.len()
            )));
        }
        if !(*w >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "negative aggregation weight {w}"
            )));
        }
        total += w;
        for (s, d) in sum.iter_mut().zip(delta) {
            *s += w * d;
        }
    }
    if total <= 0.0 {
        return Err(Error::ZeroWeight);
    }
    sum.iter_mut().for_each(|s| *s /= total);
    Ok(sum)
}
