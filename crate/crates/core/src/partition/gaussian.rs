use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{chol_inverse, chol_log_det, cholesky, dot, solve_lower, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        if !cov.is_square() || cov.rows() != mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "mean of length {} with {}x{} covariance",
                mean.len(),
                cov.rows(),
                cov.cols()
            )));
        }
        Ok(Gaussian { mean, cov })
    }

    pub fn standard(dim: usize) -> Self {
        Gaussian {
            mean: vec![0.0; dim],
            cov: Matrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log density, evaluated through a precomputed Cholesky factor.
    pub fn log_pdf_with(&self, chol: &Matrix, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let w = solve_lower(chol, &diff);
        let d = self.dim() as f64;
        -0.5 * (d * (2.0 * PI).ln() + chol_log_det(chol) + dot(&w, &w))
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_pdf_with(&cholesky(&self.cov)?, x))
    }
}

/// Closed-form `KL(p ‖ q)` between multivariate normals.
pub fn gaussian_kl(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::ShapeMismatch(format!(
            "KL between dimensions {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    let lq = cholesky(&q.cov)?;
    let lp = cholesky(&p.cov)?;
    let q_inv = chol_inverse(&lq);
    let d = p.dim();

    let mut trace = 0.0;
    for i in 0..d {
        for j in 0..d {
            trace += q_inv[(i, j)] * p.cov[(j, i)];
        }
    }
    let diff: Vec<f64> = q.mean.iter().zip(&p.mean).map(|(a, b)| a - b).collect();
    let w = solve_lower(&lq, &diff);
    let mahalanobis = dot(&w, &w);

    Ok(0.5 * (trace + mahalanobis - d as f64 + chol_log_det(&lq) - chol_log_det(&lp)))
}

/// `½ (KL(p ‖ q) + KL(q ‖ p))`.
pub fn symmetric_kl(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    Ok(0.5 * (gaussian_kl(p, q)? + gaussian_kl(q, p)?))
}
