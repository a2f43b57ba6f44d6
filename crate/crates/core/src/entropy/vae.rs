use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, sigmoid, softplus, standard_normal, substream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Likelihood {
    /// Independent Bernoulli on targets in `[0, 1]`; decoder outputs logits.
    Bernoulli,
    /// Isotropic Gaussian with fixed scale; decoder outputs the mean.
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeSpec {
    pub input_dim: usize,
    pub latent_dim: usize,
    /// 0 means a linear encoder.
    pub encoder_hidden: usize,
    /// 0 means a linear decoder.
    pub decoder_hidden: usize,
    pub likelihood: Likelihood,
}

impl VaeSpec {
    pub fn new(
        input_dim: usize,
        latent_dim: usize,
        encoder_hidden: usize,
        decoder_hidden: usize,
    ) -> Self {
        VaeSpec {
            input_dim,
            latent_dim,
            encoder_hidden,
            decoder_hidden,
            likelihood: Likelihood::Bernoulli,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidSpec(format!(
                "input_dim {} and latent_dim {} must be positive",
                self.input_dim, self.latent_dim
            )));
        }
        if let Likelihood::Gaussian { sigma } = self.likelihood {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidSpec(format!("gaussian sigma {sigma}")));
            }
        }
        Ok(())
    }

    /// Encoder outputs: `latent_dim` means, `latent_dim` raw diagonal scales,
    /// then the strictly lower triangle of the scale factor, row-major.
    pub fn encoder_outputs(&self) -> usize {
        let l = self.latent_dim;
        l + l * (l + 1) / 2
    }

    fn layout(&self) -> Layout {
        let mut offset = 0;
        let mut stack = |dims: &[usize]| -> Vec<Dense> {
            dims.windows(2)
                .map(|w| {
                    let layer = Dense {
                        offset,
                        inp: w[0],
                        out: w[1],
                    };
                    offset += layer.len();
                    layer
                })
                .collect()
        };
        let enc_dims: Vec<usize> = [self.input_dim, self.encoder_hidden, self.encoder_outputs()]
            .into_iter()
            .filter(|&h| h > 0)
            .collect();
        let dec_dims: Vec<usize> = [self.latent_dim, self.decoder_hidden, self.input_dim]
            .into_iter()
            .filter(|&h| h > 0)
            .collect();
        let encoder = stack(&enc_dims);
        let decoder = stack(&dec_dims);
        Layout {
            encoder,
            decoder,
            len: offset,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().len
    }
}

/// Affine layer stored row-major as `W [out×inp]` followed by `b [out]`.
#[derive(Debug, Clone, Copy)]
struct Dense {
    offset: usize,
    inp: usize,
    out: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.out * (self.inp + 1)
    }

    fn forward(&self, p: &[f64], x: &[f64], y: &mut Vec<f64>) {
        let w = &p[self.offset..self.offset + self.out * self.inp];
        let b = &p[self.offset + self.out * self.inp..self.offset + self.len()];
        y.clear();
        y.extend(
            w.chunks_exact(self.inp)
                .zip(b)
                .map(|(row, bi)| bi + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()),
        );
    }

    /// Accumulates parameter gradients into `g`; writes `∂/∂x` into `dx`.
    fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64], dx: &mut Vec<f64>) {
        let nw = self.out * self.inp;
        dx.clear();
        dx.resize(self.inp, 0.0);
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = self.offset + o * self.inp;
            for i in 0..self.inp {
                g[row + i] += d * x[i];
                dx[i] += d * p[row + i];
            }
            g[self.offset + nw + o] += d;
        }
    }
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
    len: usize,
}

/// Forward pass through a tanh stack, keeping every activation.
fn stack_forward(layers: &[Dense], p: &[f64], x: &[f64], acts: &mut Vec<Vec<f64>>) {
    acts.resize(layers.len() + 1, Vec::new());
    acts[0].clear();
    acts[0].extend_from_slice(x);
    for (i, layer) in layers.iter().enumerate() {
        let (head, tail) = acts.split_at_mut(i + 1);
        layer.forward(p, &head[i], &mut tail[0]);
        if i + 1 < layers.len() {
            tail[0].iter_mut().for_each(|a| *a = a.tanh());
        }
    }
}

/// Back-propagates `d_out` through a stack run by [`stack_forward`];
/// returns the gradient with respect to the stack input.
fn stack_backward(
    layers: &[Dense],
    p: &[f64],
    acts: &[Vec<f64>],
    d_out: &[f64],
    g: &mut [f64],
) -> Vec<f64> {
    let mut dy = d_out.to_vec();
    let mut dx = Vec::new();
    for (i, layer) in layers.iter().enumerate().rev() {
        layer.backward(p, &acts[i], &dy, g, &mut dx);
        if i > 0 {
            for (d, a) in dx.iter_mut().zip(&acts[i]) {
                *d *= 1.0 - a * a;
            }
        }
        std::mem::swap(&mut dy, &mut dx);
    }
    dy
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    pub spec: VaeSpec,
    pub values: Vec<f64>,
}

/// Weights `N(0, 1/fan_in)`, biases zero.
pub fn vae_init(spec: VaeSpec, seed: u64) -> Result<VaeParams> {
    spec.validate()?;
    let layout = spec.layout();
    let mut rng = substream(seed, "vae_init", 0);
    let mut values = Vec::with_capacity(layout.len);
    for layer in layout.encoder.iter().chain(&layout.decoder) {
        let scale = (1.0 / layer.inp as f64).sqrt();
        values.extend((0..layer.out * layer.inp).map(|_| scale * standard_normal(&mut rng)));
        values.extend(std::iter::repeat_n(0.0, layer.out));
    }
    Ok(VaeParams { spec, values })
}

/// Gaussian posterior `q(z|x) = N(μ, L Lᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    /// Lower-triangular scale factor, row-major `l×l`.
    pub scale: Vec<f64>,
}

impl Posterior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `z = μ + L ε`.
    pub fn sample_with(&self, eps: &[f64]) -> Vec<f64> {
        let l = self.dim();
        (0..l)
            .map(|i| self.mean[i] + (0..=i).map(|j| self.scale[i * l + j] * eps[j]).sum::<f64>())
            .collect()
    }

    /// `KL(q ‖ N(0, I))` in closed form.
    pub fn kl_to_standard(&self) -> f64 {
        let l = self.dim();
        let tr: f64 = self.scale.iter().map(|s| s * s).sum();
        let mu2: f64 = self.mean.iter().map(|m| m * m).sum();
        let log_det: f64 = (0..l).map(|i| self.scale[i * l + i].ln()).sum::<f64>() * 2.0;
        0.5 * (tr + mu2 - l as f64 - log_det)
    }

    /// `ln q(z|x)` at `z = μ + Lε`.
    pub fn log_density_at_noise(&self, eps: &[f64]) -> f64 {
        let l = self.dim();
        let log_diag: f64 = (0..l).map(|i| self.scale[i * l + i].ln()).sum();
        -0.5 * eps.iter().map(|e| e * e).sum::<f64>() - log_diag - 0.5 * l as f64 * (2.0 * PI).ln()
    }
}

fn standard_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

impl VaeParams {
    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} for a VAE over {} features",
                x.len(),
                self.spec.input_dim
            )));
        }
        if matches!(self.spec.likelihood, Likelihood::Bernoulli) {
            if let Some(&value) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutOfRangeFeatures { value });
            }
        }
        Ok(())
    }

    fn posterior_from(&self, out: &[f64]) -> Posterior {
        let l = self.spec.latent_dim;
        let mut scale = vec![0.0; l * l];
        for i in 0..l {
            scale[i * l + i] = softplus(out[l + i]);
        }
        let mut k = 2 * l;
        for i in 1..l {
            for j in 0..i {
                scale[i * l + j] = out[k];
                k += 1;
            }
        }
        Posterior {
            mean: out[..l].to_vec(),
            scale,
        }
    }

    pub fn posterior(&self, x: &[f64]) -> Result<Posterior> {
        self.check_input(x)?;
        let mut acts = Vec::new();
        stack_forward(&self.spec.layout().encoder, &self.values, x, &mut acts);
        Ok(self.posterior_from(acts.last().expect("encoder has a layer")))
    }

    /// Decoder output: Bernoulli logits or Gaussian means.
    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        let mut acts = Vec::new();
        stack_forward(&self.spec.layout().decoder, &self.values, z, &mut acts);
        acts.pop().expect("decoder has a layer")
    }

    fn log_likelihood(&self, x: &[f64], out: &[f64]) -> f64 {
        match self.spec.likelihood {
            Likelihood::Bernoulli => x.iter().zip(out).map(|(xi, l)| xi * l - softplus(*l)).sum(),
            Likelihood::Gaussian { sigma } => {
                let c = sigma.ln() + 0.5 * (2.0 * PI).ln();
                x.iter()
                    .zip(out)
                    .map(|(xi, m)| -0.5 * ((xi - m) / sigma).powi(2) - c)
                    .sum()
            }
        }
    }

    fn log_likelihood_grad(&self, x: &[f64], out: &[f64]) -> Vec<f64> {
        match self.spec.likelihood {
            Likelihood::Bernoulli => x.iter().zip(out).map(|(xi, l)| xi - sigmoid(*l)).collect(),
            Likelihood::Gaussian { sigma } => x
                .iter()
                .zip(out)
                .map(|(xi, m)| (xi - m) / (sigma * sigma))
                .collect(),
        }
    }

    /// `ln p(x|z)`.
    pub fn log_likelihood_at(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.log_likelihood(x, &self.decode(z)))
    }

    /// Importance log-weight `ln p(x|z) + ln p(z) − ln q(z|x)` at `z = μ + Lε`.
    pub fn log_weight(&self, x: &[f64], posterior: &Posterior, eps: &[f64]) -> f64 {
        let z = posterior.sample_with(eps);
        self.log_likelihood(x, &self.decode(&z)) + standard_log_density(&z)
            - posterior.log_density_at_noise(eps)
    }
}

fn draw_noise<R: Rng + ?Sized>(rng: &mut R, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| standard_normal(rng)).collect())
        .collect()
}

/// Mean ELBO over `batch` and its gradient, with `mc_samples` reparameterized
/// draws per example.
pub fn elbo_and_grad<R: Rng + ?Sized>(
    vae: &VaeParams,
    batch: &[Vec<f64>],
    mc_samples: usize,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    if mc_samples == 0 {
        return Err(Error::InvalidConfig("mc_samples must be >= 1".into()));
    }
    let noise = draw_noise(rng, batch.len() * mc_samples, vae.spec.latent_dim);
    elbo_and_grad_with_noise(vae, batch, &noise)
}

/// As [`elbo_and_grad`] with the noise given explicitly: `noise` holds
/// `mc_samples` vectors per example, example-major.
pub fn elbo_and_grad_with_noise(
    vae: &VaeParams,
    batch: &[Vec<f64>],
    noise: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    if noise.is_empty() || !noise.len().is_multiple_of(batch.len()) {
        return Err(Error::ShapeMismatch(format!(
            "{} noise vectors for {} examples",
            noise.len(),
            batch.len()
        )));
    }
    let s = noise.len() / batch.len();
    let l = vae.spec.latent_dim;
    let layout = vae.spec.layout();
    let p = &vae.values;
    let mut g = vec![0.0; p.len()];
    let mut total = 0.0;
    let mut enc_acts = Vec::new();
    let mut dec_acts = Vec::new();
    let inv_s = 1.0 / s as f64;
    for (x, eps_set) in batch.iter().zip(noise.chunks_exact(s)) {
        vae.check_input(x)?;
        stack_forward(&layout.encoder, p, x, &mut enc_acts);
        let enc_out = enc_acts.last().expect("encoder has a layer");
        let q = vae.posterior_from(enc_out);
        let mut g_mu = vec![0.0; l];
        let mut g_scale = vec![0.0; l * l];
        let mut rec = 0.0;
        for eps in eps_set {
            let z = q.sample_with(eps);
            stack_forward(&layout.decoder, p, &z, &mut dec_acts);
            let out = dec_acts.last().expect("decoder has a layer");
            rec += vae.log_likelihood(x, out);
            let d_out: Vec<f64> = vae
                .log_likelihood_grad(x, out)
                .iter()
                .map(|d| d * inv_s)
                .collect();
            let dz = stack_backward(&layout.decoder, p, &dec_acts, &d_out, &mut g);
            for i in 0..l {
                g_mu[i] += dz[i];
                for j in 0..=i {
                    g_scale[i * l + j] += dz[i] * eps[j];
                }
            }
        }
        total += rec * inv_s - q.kl_to_standard();

        // d(−KL)/dμ = −μ; d(−KL)/dL_ij = −L_ij, plus 1/L_ii on the diagonal
        let mut d_enc = vec![0.0; enc_out.len()];
        for i in 0..l {
            d_enc[i] = g_mu[i] - q.mean[i];
            let lii = q.scale[i * l + i];
            d_enc[l + i] = (g_scale[i * l + i] - lii + 1.0 / lii) * sigmoid(enc_out[l + i]);
        }
        let mut k = 2 * l;
        for i in 1..l {
            for j in 0..i {
                d_enc[k] = g_scale[i * l + j] - q.scale[i * l + j];
                k += 1;
            }
        }
        stack_backward(&layout.encoder, p, &enc_acts, &d_enc, &mut g);
    }
    let n = batch.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Ok((total / n, g))
}

/// `K`-sample importance-weighted lower bound on `ln p(x)`.
pub fn iwae_log_evidence<R: Rng + ?Sized>(
    vae: &VaeParams,
    x: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "IWAE needs at least one sample".into(),
        ));
    }
    let noise = draw_noise(rng, k, vae.spec.latent_dim);
    iwae_with_noise(vae, x, &noise)
}

pub fn iwae_with_noise(vae: &VaeParams, x: &[f64], noise: &[Vec<f64>]) -> Result<f64> {
    let q = vae.posterior(x)?;
    let w: Vec<f64> = noise.iter().map(|eps| vae.log_weight(x, &q, eps)).collect();
    Ok(log_sum_exp(&w)? - (w.len() as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub mc_samples: usize,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            steps: 2000,
            lr: 5e-3,
            batch_size: 32,
            mc_samples: 1,
        }
    }
}

impl VaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.mc_samples == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and mc_samples must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("vae lr {}", self.lr)));
        }
        Ok(())
    }
}

/// Trains by Adam ascent on the ELBO; returns the parameters and the
/// per-step minibatch ELBO.
pub fn train_vae_traced(
    points: &[Vec<f64>],
    spec: VaeSpec,
    cfg: &VaeTrainConfig,
    seed: u64,
) -> Result<(VaeParams, Vec<f64>)> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut vae = vae_init(spec, seed)?;
    for x in points {
        vae.check_input(x)?;
    }
    let mut rng = substream(seed, "vae_train", 0);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; vae.values.len()];
    let mut v = vec![0.0; vae.values.len()];
    let mut trace = Vec::with_capacity(cfg.steps);
    let bs = cfg.batch_size.min(points.len());
    let mut batch: Vec<Vec<f64>> = Vec::with_capacity(bs);
    for step in 1..=cfg.steps {
        batch.clear();
        for i in rand::seq::index::sample(&mut rng, points.len(), bs) {
            batch.push(points[i].clone());
        }
        let (elbo, g) = elbo_and_grad(&vae, &batch, cfg.mc_samples, &mut rng)?;
        trace.push(elbo);
        let c1 = 1.0 - f64::powi(b1, step as i32);
        let c2 = 1.0 - f64::powi(b2, step as i32);
        for ((w, (mi, vi)), gi) in vae
            .values
            .iter_mut()
            .zip(m.iter_mut().zip(v.iter_mut()))
            .zip(&g)
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *w += cfg.lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
        }
    }
    Ok((vae, trace))
}

pub fn train_vae(
    points: &[Vec<f64>],
    spec: VaeSpec,
    cfg: &VaeTrainConfig,
    seed: u64,
) -> Result<VaeParams> {
    Ok(train_vae_traced(points, spec, cfg, seed)?.0)
}
