//! Small softmax classifiers with exact gradients.
//!
//! Parameters live in one flat vector. Layout, row-major:
//! - linear: `W [K×d]`, `b [K]`
//! - mlp:    `W1 [h×d]`, `b1 [h]`, `W2 [K×h]`, `b2 [K]`, tanh hidden layer

use serde::{Deserialize, Serialize};

use crate::datasets::Example;
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, standard_normal, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    Linear,
    Mlp { hidden_units: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Linear,
            input_dim,
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_units: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp { hidden_units },
            input_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidSpec(format!(
                "input_dim {} and num_classes {} must be positive",
                self.input_dim, self.num_classes
            )));
        }
        if let ModelKind::Mlp { hidden_units: 0 } = self.kind {
            return Err(Error::InvalidSpec(
                "mlp needs at least one hidden unit".into(),
            ));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let (d, k) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::Linear => k * (d + 1),
            ModelKind::Mlp { hidden_units: h } => h * (d + 1) + k * (h + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(spec: ModelSpec) -> Self {
        ModelParams {
            spec,
            values: vec![0.0; spec.num_params()],
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        ModelParams {
            spec: self.spec,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes the output logits for `x` into `logits`, using `hidden` as
    /// scratch for the mlp activations.
    fn forward(&self, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let (d, k) = (self.spec.input_dim, self.spec.num_classes);
        let v = &self.values;
        match self.spec.kind {
            ModelKind::Linear => affine(&v[..k * d], &v[k * d..k * (d + 1)], x, logits),
            ModelKind::Mlp { hidden_units: h } => {
                let (w1, rest) = v.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                affine(w1, b1, x, hidden);
                hidden.iter_mut().for_each(|a| *a = a.tanh());
                affine(w2, b2, hidden, logits);
            }
        }
    }

    fn hidden_len(&self) -> usize {
        match self.spec.kind {
            ModelKind::Linear => 0,
            ModelKind::Mlp { hidden_units } => hidden_units,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut hidden = vec![0.0; self.hidden_len()];
        let mut logits = vec![0.0; self.spec.num_classes];
        self.forward(x, &mut hidden, &mut logits);
        Ok(logits)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} features, got {}",
                self.spec.input_dim,
                x.len()
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &[Example]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        for e in batch {
            self.check_input(&e.x)?;
            if e.y >= self.spec.num_classes {
                return Err(Error::ShapeMismatch(format!(
                    "label {} for a {}-class model",
                    e.y, self.spec.num_classes
                )));
            }
        }
        Ok(())
    }
}

/// `out = W·x + b` with `W` row-major `[out.len() × x.len()]`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * n..(i + 1) * n];
        *o = b[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Weights `N(0, 1/fan_in)`, biases zero.
pub fn init_params(spec: ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = substream(seed, "init_params", 0);
    let mut values = Vec::with_capacity(spec.num_params());
    let mut layer = |rows: usize, fan_in: usize, values: &mut Vec<f64>| {
        let scale = (1.0 / fan_in as f64).sqrt();
        values.extend((0..rows * fan_in).map(|_| scale * standard_normal(&mut rng)));
        values.extend(std::iter::repeat_n(0.0, rows));
    };
    match spec.kind {
        ModelKind::Linear => layer(spec.num_classes, spec.input_dim, &mut values),
        ModelKind::Mlp { hidden_units } => {
            layer(hidden_units, spec.input_dim, &mut values);
            layer(spec.num_classes, hidden_units, &mut values);
        }
    }
    Ok(ModelParams { spec, values })
}

/// Mean cross-entropy over the batch.
pub fn loss(params: &ModelParams, batch: &[Example]) -> Result<f64> {
    params.check_batch(batch)?;
    let (total, _) = sum_loss_and_correct(params, batch);
    Ok(total / batch.len() as f64)
}

/// Sum of per-example losses and the number of correct predictions.
/// Inputs must already be shape-checked.
pub(crate) fn sum_loss_and_correct(params: &ModelParams, examples: &[Example]) -> (f64, usize) {
    let mut hidden = vec![0.0; params.hidden_len()];
    let mut logits = vec![0.0; params.spec.num_classes];
    let mut total = 0.0;
    let mut correct = 0;
    for e in examples {
        params.forward(&e.x, &mut hidden, &mut logits);
        total += log_sum_exp(&logits).expect("non-empty logits") - logits[e.y];
        correct += usize::from(argmax(&logits) == e.y);
    }
    (total, correct)
}

/// Per-client evaluation: mean loss and accuracy over `examples`.
pub fn evaluate(params: &ModelParams, examples: &[Example]) -> Result<(f64, f64)> {
    params.check_batch(examples)?;
    let (total, correct) = sum_loss_and_correct(params, examples);
    let n = examples.len() as f64;
    Ok((total / n, correct as f64 / n))
}

/// Mean loss and its exact gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &[Example]) -> Result<(f64, Vec<f64>)> {
    params.check_batch(batch)?;
    let (d, k) = (params.spec.input_dim, params.spec.num_classes);
    let v = &params.values;
    let mut g = vec![0.0; v.len()];
    let mut hidden = vec![0.0; params.hidden_len()];
    let mut logits = vec![0.0; k];
    let mut dlogits = vec![0.0; k];
    let mut dhidden = vec![0.0; params.hidden_len()];
    let mut total = 0.0;

    for e in batch {
        params.forward(&e.x, &mut hidden, &mut logits);
        let lse = log_sum_exp(&logits).expect("non-empty logits");
        total += lse - logits[e.y];
        for (dl, l) in dlogits.iter_mut().zip(&logits) {
            *dl = (l - lse).exp();
        }
        dlogits[e.y] -= 1.0;

        match params.spec.kind {
            ModelKind::Linear => {
                let (gw, gb) = g.split_at_mut(k * d);
                outer_acc(gw, &dlogits, &e.x);
                gb.iter_mut().zip(&dlogits).for_each(|(b, dl)| *b += dl);
            }
            ModelKind::Mlp { hidden_units: h } => {
                let w2 = &v[h * (d + 1)..h * (d + 1) + k * h];
                let (g1, g2) = g.split_at_mut(h * (d + 1));
                let (gw2, gb2) = g2.split_at_mut(k * h);
                outer_acc(gw2, &dlogits, &hidden);
                gb2.iter_mut().zip(&dlogits).for_each(|(b, dl)| *b += dl);
                for j in 0..h {
                    let back: f64 = (0..k).map(|c| w2[c * h + j] * dlogits[c]).sum();
                    dhidden[j] = back * (1.0 - hidden[j] * hidden[j]);
                }
                let (gw1, gb1) = g1.split_at_mut(h * d);
                outer_acc(gw1, &dhidden, &e.x);
                gb1.iter_mut().zip(&dhidden).for_each(|(b, dh)| *b += dh);
            }
        }
    }
    let n = batch.len() as f64;
    g.iter_mut().for_each(|x| *x /= n);
    Ok((total / n, g))
}

/// `g += a ⊗ b`, with `g` row-major `[a.len() × b.len()]`.
fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let n = b.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (gij, bj) in g[i * n..(i + 1) * n].iter_mut().zip(b) {
            *gij += ai * bj;
        }
    }
}

pub fn grad(params: &ModelParams, batch: &[Example]) -> Result<Vec<f64>> {
    Ok(loss_and_grad(params, batch)?.1)
}

/// Arg-max class, ties to the lowest index.
pub fn predict(params: &ModelParams, x: &[f64]) -> Result<usize> {
    Ok(argmax(&params.logits(x)?))
}

/// Central-difference gradient, one coordinate at a time.
pub fn finite_diff_grad(params: &ModelParams, batch: &[Example], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step {h}")));
    }
    params.check_batch(batch)?;
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + h;
        let up = loss(&probe, batch)?;
        probe.values[i] = orig - h;
        let down = loss(&probe, batch)?;
        probe.values[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_batch(seed: u64, n: usize, d: usize, k: usize) -> Vec<Example> {
        let mut rng = substream(seed, "batch", 0);
        (0..n)
            .map(|_| Example {
                x: (0..d).map(|_| rng.random::<f64>()).collect(),
                y: rng.random_range(0..k),
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = a
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        diff / scale.max(1e-12)
    }

    #[test]
    fn shapes() {
        assert_eq!(init_params(ModelSpec::linear(4, 3), 0).unwrap().len(), 15);
        assert_eq!(init_params(ModelSpec::mlp(4, 8, 3), 0).unwrap().len(), 67);
        assert_eq!(
            init_params(ModelSpec::mlp(4, 8, 3), 5).unwrap(),
            init_params(ModelSpec::mlp(4, 8, 3), 5).unwrap()
        );
        assert!(matches!(
            init_params(ModelSpec::mlp(4, 0, 3), 0),
            Err(Error::InvalidSpec(_))
        ));
        let p = init_params(ModelSpec::linear(4, 3), 0).unwrap();
        assert!(p.values[12..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_model_loss_is_log_k() {
        let p = ModelParams::zeros(ModelSpec::linear(3, 5));
        let l = loss(&p, &random_batch(1, 7, 3, 5)).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_loss_and_gradient() {
        let mut p = ModelParams::zeros(ModelSpec::linear(1, 3));
        p.values[3 + 1] = 30.0; // bias of class 1
        let batch = vec![Example { x: vec![0.4], y: 1 }];
        assert!(loss(&p, &batch).unwrap() < 1e-9);
        let g = grad(&p, &batch).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
        let fd = finite_diff_grad(&p, &batch, 1e-5).unwrap();
        assert!(fd.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn hand_computed_two_class() {
        let p = ModelParams {
            spec: ModelSpec::linear(1, 2),
            values: vec![1.0, 0.0, 0.0, 0.0],
        };
        let l = loss(&p, &[Example { x: vec![1.0], y: 0 }]).unwrap();
        let e = std::f64::consts::E;
        assert!((l - (-(e / (e + 1.0)).ln())).abs() < 1e-12);
        assert!((l - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let spec = ModelSpec::mlp(5, 8, 3);
        for seed in 0..10 {
            let p = init_params(spec, seed).unwrap();
            let batch = random_batch(seed, 10, 5, 3);
            let g = grad(&p, &batch).unwrap();
            let fd = finite_diff_grad(&p, &batch, 1e-5).unwrap();
            assert!(rel_err(&g, &fd) < 1e-5, "seed {seed}: {}", rel_err(&g, &fd));
        }
    }

    #[test]
    fn linear_gradient_abs_error() {
        let p = init_params(ModelSpec::linear(4, 3), 2).unwrap();
        let batch = random_batch(2, 12, 4, 3);
        let g = grad(&p, &batch).unwrap();
        let fd = finite_diff_grad(&p, &batch, 1e-5).unwrap();
        assert!(g.iter().zip(&fd).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn finite_difference_error_is_second_order() {
        let p = init_params(ModelSpec::mlp(3, 4, 3), 3).unwrap();
        let batch = random_batch(3, 6, 3, 3);
        let g = grad(&p, &batch).unwrap();
        let err = |h| {
            let fd = finite_diff_grad(&p, &batch, h).unwrap();
            g.iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (err(1e-2), err(1e-3));
        // O(h²): a 10x smaller step cuts the error by roughly 100x
        assert!(coarse / fine > 30.0, "{coarse} {fine}");
        assert!(finite_diff_grad(&p, &batch, 0.0).is_err());
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let p = init_params(ModelSpec::mlp(3, 4, 2), 4).unwrap();
        let one = random_batch(4, 1, 3, 2);
        let two = vec![one[0].clone(), one[0].clone()];
        let (a, b) = (grad(&p, &one).unwrap(), grad(&p, &two).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-15));
    }

    #[test]
    fn predict_ties_and_shift_invariance() {
        let p = ModelParams::zeros(ModelSpec::linear(2, 3));
        assert_eq!(predict(&p, &[0.3, 0.9]).unwrap(), 0);
        let mut q = p.clone();
        q.values[6..9].copy_from_slice(&[0.0, 5.0, 1.0]);
        assert_eq!(predict(&q, &[0.3, 0.9]).unwrap(), 1);

        let m = init_params(ModelSpec::mlp(3, 5, 4), 9).unwrap();
        let mut shifted = m.clone();
        let n = shifted.len();
        shifted.values[n - 4..].iter_mut().for_each(|b| *b += 7.5);
        for e in random_batch(9, 30, 3, 4) {
            assert_eq!(predict(&m, &e.x).unwrap(), predict(&shifted, &e.x).unwrap());
        }
        assert!(predict(&m, &[0.0]).is_err());
    }

    #[test]
    fn small_step_decreases_loss() {
        let p = init_params(ModelSpec::mlp(4, 6, 3), 11).unwrap();
        let batch = random_batch(11, 20, 4, 3);
        let (l0, g) = loss_and_grad(&p, &batch).unwrap();
        let stepped = p.with_values(
            p.values
                .iter()
                .zip(&g)
                .map(|(w, gi)| w - 1e-3 * gi)
                .collect(),
        );
        assert!(loss(&stepped, &batch).unwrap() < l0);
        assert!(l0 >= 0.0);
    }

    #[test]
    fn shape_errors() {
        let p = ModelParams::zeros(ModelSpec::linear(2, 2));
        assert!(matches!(
            loss(&p, &[Example { x: vec![1.0], y: 0 }]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            loss(
                &p,
                &[Example {
                    x: vec![1.0, 2.0],
                    y: 2
                }]
            ),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(loss(&p, &[]), Err(Error::EmptyInput)));
    }
}
