use serde::Serialize;
use sha2::{Digest, Sha256};

use super::client::{aggregate_deltas, client_update, sample_clients};
use super::config::TrainConfig;
use super::server::{server_step, ServerState};
use crate::error::{Error, Result};
use crate::metrics::{eval_block, MetricsLog, RhoMode, RiskRecord};
use crate::models::{init_params, ModelParams, ModelSpec};
use crate::numerics::SeededRng;
use crate::parallel;
use crate::split::ThreeWaySplit;

/// Hex sha256 of the JSON form of `value`.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialize");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Initial parameters shared by federated and centralized runs.
pub fn initial_params(spec: ModelSpec, seed: u64) -> Result<ModelParams> {
    init_params(spec, SeededRng::new(seed).derive("init", 0).key())
}

/// Evaluates all three blocks at `params`.
pub fn evaluate_split(
    params: &ModelParams,
    split: &ThreeWaySplit,
    rho_mode: RhoMode,
    index: usize,
    with_percentiles: bool,
) -> Result<RiskRecord> {
    let pt = eval_block(params, &split.part_train, &split.weights, rho_mode)?;
    let pv = eval_block(params, &split.part_val, &split.weights, rho_mode)?;
    let un = eval_block(params, &split.unpart, &split.weights, rho_mode)?;
    RiskRecord::from_blocks(index, &pt, &pv, &un, with_percentiles)
}

/// A federated training run advanced one round at a time.
pub struct FederatedRun<'a> {
    split: &'a ThreeWaySplit,
    cfg: TrainConfig,
    eligible: Vec<String>,
    per_round: usize,
    state: ServerState,
}

impl<'a> FederatedRun<'a> {
    pub fn new(split: &'a ThreeWaySplit, spec: ModelSpec, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        let eligible: Vec<String> = split
            .part_train
            .iter()
            .filter(|(_, ex)| !ex.is_empty())
            .map(|(id, _)| id.clone())
            .collect();
        if eligible.is_empty() {
            return Err(Error::EmptyClient(
                "no participating client has training data".into(),
            ));
        }
        let per_round = cfg.clients_per_round.min(eligible.len());
        if per_round < cfg.clients_per_round {
            log::warn!(
                "clients_per_round {} exceeds {} participating clients; using all of them",
                cfg.clients_per_round,
                eligible.len()
            );
        }
        Ok(FederatedRun {
            split,
            cfg: cfg.clone(),
            eligible,
            per_round,
            state: ServerState::new(initial_params(spec, cfg.seed)?),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.state.params
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.state.round
    }

    /// Runs one communication round.
    pub fn step(&mut self) -> Result<()> {
        let t = self.state.round;
        let seed = self.cfg.seed;
        let sampled = sample_clients(&self.eligible, self.per_round, t, seed)?;
        let round_rng = SeededRng::new(seed).derive("round", t as u64);
        let params = &self.state.params;
        let split = self.split;
        let client_cfg = self.cfg.client;
        let rho_mode = self.cfg.rho_mode;
        // ids are sorted, so aggregation runs in ascending id order
        let pairs = parallel::try_map(&sampled, |id| {
            let mut rng = round_rng.derive(id, 0).stream();
            let (delta, n) = client_update(params, &split.part_train[id], &client_cfg, &mut rng)?;
            Ok::<_, Error>((delta, rho_mode.weight(n, split.weights.get(id).copied())))
        })?;
        let mean = aggregate_deltas(&pairs)?;
        server_step(&mut self.state, &mean, &self.cfg.server)
    }

    pub fn evaluate(&self) -> Result<RiskRecord> {
        evaluate_split(
            &self.state.params,
            self.split,
            self.cfg.rho_mode,
            self.state.round,
            self.cfg.percentiles,
        )
    }
}

#[derive(Serialize)]
struct DigestInput<'a, C> {
    spec: &'a ModelSpec,
    config: &'a C,
}

pub(crate) fn digest_for<C: Serialize>(spec: &ModelSpec, config: &C) -> String {
    config_digest(&DigestInput { spec, config })
}

/// Trains for `cfg.rounds` rounds, recording the three risks every
/// `eval_every` rounds and after the last one.
pub fn run_federated(
    split: &ThreeWaySplit,
    spec: ModelSpec,
    cfg: &TrainConfig,
) -> Result<MetricsLog> {
    Ok(train_federated(split, spec, cfg)?.0)
}

/// As [`run_federated`], also returning the final parameters.
pub fn train_federated(
    split: &ThreeWaySplit,
    spec: ModelSpec,
    cfg: &TrainConfig,
) -> Result<(MetricsLog, ModelParams)> {
    let mut run = FederatedRun::new(split, spec, cfg)?;
    let mut log = MetricsLog {
        config_digest: digest_for(&spec, cfg),
        records: Vec::new(),
    };
    for t in 1..=cfg.rounds {
        run.step()?;
        if t % cfg.eval_every == 0 || t == cfg.rounds {
            let rec = run.evaluate()?;
            log::info!(
                "round {t}: part_train {:.4}/{:.4} part_val {:.4}/{:.4} unpart {:.4}/{:.4}",
                rec.part_train.loss,
                rec.part_train.accuracy,
                rec.part_val.loss,
                rec.part_val.accuracy,
                rec.unpart.loss,
                rec.unpart.accuracy
            );
            log.records.push(rec);
        }
    }
    Ok((log, run.state.params))
}
