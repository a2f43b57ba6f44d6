//! Per-client entropy estimates from small VAEs: a 2-D latent with a
//! full-covariance Gaussian posterior, trained on the ELBO and scored with
//! the importance-weighted bound.
//!
//! VAE parameters form one flat vector: encoder layers, then decoder layers,
//! each stored as `W [out×in]` row-major followed by `b [out]`, with tanh
//! between layers. Encoder outputs are the posterior mean, the raw
//! (pre-softplus) diagonal of the scale factor, then its strict lower
//! triangle row by row.

mod estimate;
mod vae;

pub use estimate::{
    client_entropy, estimate_entropy, format_entropy_csv, write_entropy_csv, ClientEntropy,
    EntropyConfig, EntropyReport, ENTROPY_CSV_HEADER,
};
pub use vae::{
    elbo_and_grad, elbo_and_grad_with_noise, iwae_log_evidence, iwae_with_noise, train_vae,
    train_vae_traced, vae_init, Likelihood, Posterior, VaeParams, VaeSpec, VaeTrainConfig,
};

#[cfg(test)]
mod tests;
