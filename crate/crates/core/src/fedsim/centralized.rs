use rand::seq::SliceRandom;

use super::config::{CentralOptimizer, CentralizedConfig};
use super::federated::{digest_for, evaluate_split, initial_params};
use crate::datasets::Example;
use crate::error::{Error, Result};
use crate::metrics::MetricsLog;
use crate::models::{loss_and_grad, ModelParams, ModelSpec};
use crate::numerics::substream;
use crate::split::ThreeWaySplit;

/// Single-machine optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct CentralState {
    pub params: ModelParams,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl CentralState {
    pub fn new(params: ModelParams) -> Self {
        let n = params.len();
        CentralState {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    /// Heavy-ball SGD (`m ← μm + g`, `w ← w − lr·m`) or bias-corrected Adam.
    pub fn apply(&mut self, g: &[f64], opt: &CentralOptimizer, lr: f64) {
        self.steps += 1;
        match *opt {
            CentralOptimizer::SgdMomentum { momentum } => {
                for ((w, m), gi) in self.params.values.iter_mut().zip(&mut self.m).zip(g) {
                    *m = momentum * *m + gi;
                    *w -= lr * *m;
                }
            }
            CentralOptimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.steps as i32);
                let c2 = 1.0 - beta2.powi(self.steps as i32);
                for (((w, m), v), gi) in self
                    .params
                    .values
                    .iter_mut()
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                    .zip(g)
                {
                    *m = beta1 * *m + (1.0 - beta1) * gi;
                    *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Trains on the union of participating training data and evaluates the
/// three risks after every epoch.
pub fn run_centralized(
    split: &ThreeWaySplit,
    spec: ModelSpec,
    cfg: &CentralizedConfig,
) -> Result<MetricsLog> {
    Ok(train_centralized(split, spec, cfg)?.0)
}

/// As [`run_centralized`], also returning the final parameters.
pub fn train_centralized(
    split: &ThreeWaySplit,
    spec: ModelSpec,
    cfg: &CentralizedConfig,
) -> Result<(MetricsLog, ModelParams)> {
    cfg.validate()?;
    spec.validate()?;
    let pool: Vec<Example> = split.part_train.values().flatten().cloned().collect();
    if pool.is_empty() {
        return Err(Error::EmptyClient(
            "no participating client has training data".into(),
        ));
    }
    let mut state = CentralState::new(initial_params(spec, cfg.seed)?);
    let mut log = MetricsLog {
        config_digest: digest_for(&spec, cfg),
        records: Vec::new(),
    };
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size.min(pool.len()));
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut substream(cfg.seed, "epoch", epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| pool[i].clone()));
            let (_, g) = loss_and_grad(&state.params, &batch)?;
            state.apply(&g, &cfg.optimizer, cfg.lr);
        }
        let rec = evaluate_split(&state.params, split, cfg.rho_mode, epoch, cfg.percentiles)?;
        log::info!(
            "epoch {epoch}: part_train {:.4} part_val {:.4} unpart {:.4}",
            rec.part_train.accuracy,
            rec.part_val.accuracy,
            rec.unpart.accuracy
        );
        log.records.push(rec);
    }
    Ok((log, state.params))
}
