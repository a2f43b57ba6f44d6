use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RhoMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientOptConfig {
    #[serde(default = "one")]
    pub local_epochs: usize,
    #[serde(default = "twenty")]
    pub batch_size: usize,
    pub client_lr: f64,
}

fn one() -> usize {
    1
}

fn twenty() -> usize {
    20
}

impl ClientOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "local_epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.client_lr >= 0.0 && self.client_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "client_lr {}",
                self.client_lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerKind {
    #[serde(rename = "fedavgm")]
    FedAvgM,
    #[serde(rename = "fedadam")]
    FedAdam,
}

/// Multiply the server learning rate by `factor` every `every` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub factor: f64,
    pub every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerOptConfig {
    pub kind: ServerKind,
    pub server_lr: f64,
    /// FedAvgM momentum.
    #[serde(default = "default_beta")]
    pub momentum: f64,
    /// FedAdam first-moment decay.
    #[serde(default = "default_beta")]
    pub beta1: f64,
    /// FedAdam second-moment decay.
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// FedAdam adaptivity.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub lr_decay: Option<LrDecay>,
}

fn default_beta() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.99
}

fn default_eps() -> f64 {
    1e-4
}

impl ServerOptConfig {
    pub fn fedavgm(server_lr: f64, momentum: f64) -> Self {
        ServerOptConfig {
            kind: ServerKind::FedAvgM,
            server_lr,
            momentum,
            beta1: default_beta(),
            beta2: default_beta2(),
            eps: default_eps(),
            lr_decay: None,
        }
    }

    pub fn fedadam(server_lr: f64) -> Self {
        ServerOptConfig {
            kind: ServerKind::FedAdam,
            ..ServerOptConfig::fedavgm(server_lr, default_beta())
        }
    }

    /// Server learning rate in effect at (0-based) round `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        match self.lr_decay {
            Some(LrDecay { factor, every }) if every > 0 => {
                self.server_lr * factor.powi((t / every) as i32)
            }
            _ => self.server_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "server_lr {}",
                self.server_lr
            )));
        }
        for (name, b) in [
            ("momentum", self.momentum),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be in [0, 1), got {b}"
                )));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eps must be > 0, got {}",
                self.eps
            )));
        }
        if let Some(d) = self.lr_decay {
            if d.every == 0 || !(d.factor > 0.0) {
                return Err(Error::InvalidConfig(
                    "lr_decay needs factor > 0 and every >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub client: ClientOptConfig,
    pub server: ServerOptConfig,
    #[serde(default = "one")]
    pub eval_every: usize,
    #[serde(default)]
    pub rho_mode: RhoMode,
    #[serde(default = "yes")]
    pub percentiles: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.clients_per_round == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig(
                "rounds, clients_per_round and eval_every must be >= 1".into(),
            ));
        }
        self.client.validate()?;
        self.server.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CentralOptimizer {
    SgdMomentum {
        #[serde(default = "default_beta")]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta")]
        beta1: f64,
        #[serde(default = "default_adam_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_adam_beta2() -> f64 {
    0.999
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentralizedConfig {
    pub optimizer: CentralOptimizer,
    pub lr: f64,
    pub epochs: usize,
    #[serde(default = "twenty")]
    pub batch_size: usize,
    #[serde(default)]
    pub rho_mode: RhoMode,
    #[serde(default = "yes")]
    pub percentiles: bool,
    #[serde(default)]
    pub seed: u64,
}

impl CentralizedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr {}", self.lr)));
        }
        match self.optimizer {
            CentralOptimizer::SgdMomentum { momentum } if !(0.0..1.0).contains(&momentum) => {
                Err(Error::InvalidConfig(format!("momentum {momentum}")))
            }
            CentralOptimizer::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                Err(Error::InvalidConfig(
                    "adam needs betas in [0, 1) and eps > 0".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}
