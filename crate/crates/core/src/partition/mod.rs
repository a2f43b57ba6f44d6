//! Assigning a centralized example pool to synthetic clients.

mod dirichlet;
mod embed;
mod gaussian;
mod gmm;
mod matching;
mod semantic;

pub use dirichlet::dirichlet_label_partition;
pub use embed::{embed_examples, EmbedderConfig};
pub use gaussian::{gaussian_kl, symmetric_kl, Gaussian};
pub use gmm::{
    default_reg, gmm_assign, gmm_fit, gmm_fit_traced, GaussianMixture, GmmConfig, GmmFit,
};
pub use matching::{assignment_cost, brute_force_match, optimal_bipartite_match};
pub use semantic::semantic_partition;
