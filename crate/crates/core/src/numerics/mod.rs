//! Deterministic numeric kernels and seeded randomness.

mod linalg;
mod matrix;
mod pca;
mod rng;

pub use linalg::{
    chol_inverse, chol_log_det, cholesky, log_sum_exp, solve_lower, solve_upper_t, symmetric_eigen,
};
pub use matrix::{dot, Matrix};
pub use pca::{pca_fit, pca_transform, PcaModel};
pub use rng::{substream, SeededRng};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Numerically stable `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Samples `Dirichlet(concentration)` in log space, so tiny concentrations
/// do not underflow to an all-zero vector.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, concentration: &[f64]) -> Vec<f64> {
    // Gamma(a) = Gamma(a + 1) · U^(1/a)
    let logs: Vec<f64> = concentration
        .iter()
        .map(|&a| {
            if a <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let g: f64 = rand_distr::Gamma::new(a + 1.0, 1.0)
                .expect("valid gamma shape")
                .sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / a
        })
        .collect();
    let lse = log_sum_exp(&logs).unwrap_or(f64::NEG_INFINITY);
    logs.iter().map(|l| (l - lse).exp()).collect()
}
