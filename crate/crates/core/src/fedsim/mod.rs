//! Federated training (client sampling, local SGD, weighted delta averaging,
//! FedAvgM / FedAdam server steps) and a centralized baseline.

mod centralized;
mod client;
mod config;
mod federated;
mod server;

pub use centralized::{run_centralized, train_centralized, CentralState};
pub use client::{aggregate_deltas, client_update, sample_clients};
pub use config::{
    CentralOptimizer, CentralizedConfig, ClientOptConfig, LrDecay, ServerKind, ServerOptConfig,
    TrainConfig,
};
pub use federated::{
    config_digest, evaluate_split, initial_params, run_federated, train_federated, FederatedRun,
};
pub use server::{server_step, server_step_fedadam, server_step_fedavgm, ServerState};
