//! Full-covariance Gaussian mixtures fitted by EM.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gaussian::Gaussian;
use crate::error::{Error, Result};
use crate::numerics::{cholesky, log_sum_exp, substream, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub components: Vec<Gaussian>,
}

impl GaussianMixture {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, Gaussian::dim)
    }

    /// Per-point, per-component `ln wₖ + ln N(x | k)`.
    fn joint_log_densities(&self, points: &Matrix) -> Result<Matrix> {
        if points.rows() > 0 && points.cols() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "mixture of dimension {} applied to {}-column points",
                self.dim(),
                points.cols()
            )));
        }
        let chols = self
            .components
            .iter()
            .map(|g| cholesky(&g.cov))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Matrix::zeros(points.rows(), self.len());
        for (i, x) in points.row_iter().enumerate() {
            for (k, (g, l)) in self.components.iter().zip(&chols).enumerate() {
                out[(i, k)] = self.weights[k].ln() + g.log_pdf_with(l, x);
            }
        }
        Ok(out)
    }

    /// Posterior responsibilities; each row sums to one.
    pub fn responsibilities(&self, points: &Matrix) -> Result<Matrix> {
        Ok(e_step(&self.joint_log_densities(points)?).0)
    }

    /// Total log-likelihood of `points`.
    pub fn log_likelihood(&self, points: &Matrix) -> Result<f64> {
        Ok(e_step(&self.joint_log_densities(points)?).1)
    }
}

fn e_step(joint: &Matrix) -> (Matrix, f64) {
    let mut resp = joint.clone();
    let mut total = 0.0;
    for i in 0..joint.rows() {
        let lse = log_sum_exp(joint.row(i)).expect("mixture has components");
        total += lse;
        for v in resp.row_mut(i) {
            *v = (*v - lse).exp();
        }
    }
    (resp, total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// Diagonal regularization; `None` means `1e-6 ×` mean feature variance.
    pub reg: Option<f64>,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            max_iters: 200,
            tol: 1e-6,
            reg: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    /// Log-likelihood at each E-step.
    pub log_likelihood: Vec<f64>,
}

/// `1e-6 ×` mean per-column variance, floored so the covariance stays
/// factorizable on constant data.
pub fn default_reg(points: &Matrix) -> f64 {
    let cov = points.covariance();
    let mean_var = cov.trace() / points.cols().max(1) as f64;
    (1e-6 * mean_var).max(1e-10)
}

pub fn gmm_fit(
    points: &Matrix,
    num_components: usize,
    max_iters: usize,
    tol: f64,
    reg: f64,
    seed: u64,
) -> Result<GaussianMixture> {
    Ok(gmm_fit_traced(points, num_components, max_iters, tol, reg, seed)?.mixture)
}

/// EM from k-means++ seeded means, recording the log-likelihood trace.
pub fn gmm_fit_traced(
    points: &Matrix,
    num_components: usize,
    max_iters: usize,
    tol: f64,
    reg: f64,
    seed: u64,
) -> Result<GmmFit> {
    let n = points.rows();
    if num_components == 0 || n < num_components {
        return Err(Error::TooFewPoints {
            points: n,
            components: num_components,
        });
    }

    let seeds = kmeans_pp(points, num_components, seed);
    let mut resp = Matrix::zeros(n, num_components);
    for (i, x) in points.row_iter().enumerate() {
        let nearest = seeds
            .iter()
            .enumerate()
            .map(|(k, c)| (k, sq_dist(x, c)))
            .fold(
                (0, f64::INFINITY),
                |b, (k, d)| if d < b.1 { (k, d) } else { b },
            );
        resp[(i, nearest.0)] = 1.0;
    }
    // used only for components that receive no seed points
    let spread = points.covariance().trace() / points.cols().max(1) as f64;
    let fallback = GaussianMixture {
        weights: vec![1.0 / num_components as f64; num_components],
        components: seeds
            .into_iter()
            .map(|mean| {
                let mut cov = Matrix::zeros(points.cols(), points.cols());
                cov.add_diagonal(spread + reg);
                Gaussian { mean, cov }
            })
            .collect(),
    };
    let mut mixture = m_step(points, &resp, reg, &fallback);

    let mut trace: Vec<f64> = Vec::new();
    let mut previous = None;
    for _ in 0..max_iters.max(1) {
        let (r, ll) = e_step(&mixture.joint_log_densities(points)?);
        if let (Some(&prev), Some(kept)) = (trace.last(), previous.take()) {
            // the regularized M-step can overshoot by a hair near a fixed
            // point; treat that as convergence and keep the better fit
            if ll < prev {
                mixture = kept;
                break;
            }
        }
        let done = trace.last().is_some_and(|&prev| ll - prev < tol);
        trace.push(ll);
        if done {
            break;
        }
        let next = m_step(points, &r, reg, &mixture);
        previous = Some(std::mem::replace(&mut mixture, next));
    }
    Ok(GmmFit {
        mixture,
        log_likelihood: trace,
    })
}

/// Weighted MLE update with `reg·I` added to every covariance. Components
/// with vanishing mass keep their previous parameters.
fn m_step(points: &Matrix, resp: &Matrix, reg: f64, previous: &GaussianMixture) -> GaussianMixture {
    let (n, d) = (points.rows(), points.cols());
    let c = resp.cols();
    let mut weights = Vec::with_capacity(c);
    let mut components = Vec::with_capacity(c);
    for k in 0..c {
        let mass: f64 = (0..n).map(|i| resp[(i, k)]).sum();
        weights.push(mass / n as f64);
        if mass < 1e-10 {
            components.push(previous.components[k].clone());
            continue;
        }
        let mut mean = vec![0.0; d];
        for (i, x) in points.row_iter().enumerate() {
            let r = resp[(i, k)];
            for (m, v) in mean.iter_mut().zip(x) {
                *m += r * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= mass);
        let mut cov = Matrix::zeros(d, d);
        let mut diff = vec![0.0; d];
        for (i, x) in points.row_iter().enumerate() {
            let r = resp[(i, k)];
            if r == 0.0 {
                continue;
            }
            for j in 0..d {
                diff[j] = x[j] - mean[j];
            }
            for a in 0..d {
                for b in 0..=a {
                    cov[(a, b)] += r * diff[a] * diff[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[(a, b)] / mass;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        cov.add_diagonal(reg);
        components.push(Gaussian { mean, cov });
    }
    let total: f64 = weights.iter().sum();
    weights
        .iter_mut()
        .for_each(|w| *w = (*w / total).max(f64::MIN_POSITIVE));
    GaussianMixture {
        weights,
        components,
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(points: &Matrix, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, "kmeans++", 0);
    let n = points.rows();
    let mut centers = vec![points.row(rng.random_range(0..n)).to_vec()];
    let mut dist: Vec<f64> = points.row_iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (d, x) in dist.iter_mut().zip(points.row_iter()) {
            *d = d.min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    centers
}

/// Index of the most responsible component per point, ties to the lowest
/// index.
pub fn gmm_assign(gmm: &GaussianMixture, points: &Matrix) -> Result<Vec<usize>> {
    if points.rows() == 0 {
        return Ok(Vec::new());
    }
    let joint = gmm.joint_log_densities(points)?;
    Ok(joint
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}
