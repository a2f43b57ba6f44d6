use super::config::ServerOptConfig;
use crate::error::{Error, Result};
use crate::models::ModelParams;

/// Server optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub params: ModelParams,
    /// Momentum buffer (FedAvgM) or first moment (FedAdam).
    pub m: Vec<f64>,
    /// FedAdam second moment.
    pub v: Vec<f64>,
    pub round: usize,
}

impl ServerState {
    pub fn new(params: ModelParams) -> Self {
        let n = params.len();
        ServerState {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            round: 0,
        }
    }

    fn check(&self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "delta of length {} for {} parameters",
                delta.len(),
                self.params.len()
            )));
        }
        Ok(())
    }
}

/// `m ← β·m + Δ̄`, `w ← w + η_s(t)·m`.
pub fn server_step_fedavgm(
    state: &mut ServerState,
    delta: &[f64],
    cfg: &ServerOptConfig,
) -> Result<()> {
    state.check(delta)?;
    let lr = cfg.lr_at(state.round);
    for ((w, m), d) in state.params.values.iter_mut().zip(&mut state.m).zip(delta) {
        *m = cfg.momentum * *m + d;
        *w += lr * *m;
    }
    state.round += 1;
    Ok(())
}

/// Adam on the pseudo-gradient, without bias correction:
/// `m ← β₁m + (1−β₁)Δ̄`, `v ← β₂v + (1−β₂)Δ̄²`, `w ← w + η_s(t)·m/(√v + ε)`.
pub fn server_step_fedadam(
    state: &mut ServerState,
    delta: &[f64],
    cfg: &ServerOptConfig,
) -> Result<()> {
    state.check(delta)?;
    let lr = cfg.lr_at(state.round);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for (((w, m), v), d) in state
        .params
        .values
        .iter_mut()
        .zip(&mut state.m)
        .zip(&mut state.v)
        .zip(delta)
    {
        *m = b1 * *m + (1.0 - b1) * d;
        *v = b2 * *v + (1.0 - b2) * d * d;
        *w += lr * *m / (v.sqrt() + cfg.eps);
    }
    state.round += 1;
    Ok(())
}

pub fn server_step(state: &mut ServerState, delta: &[f64], cfg: &ServerOptConfig) -> Result<()> {
    match cfg.kind {
        super::ServerKind::FedAvgM => server_step_fedavgm(state, delta, cfg),
        super::ServerKind::FedAdam => server_step_fedadam(state, delta, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedsim::LrDecay;
    use crate::models::ModelSpec;
    use proptest::prelude::*;

    fn scalar_state() -> ServerState {
        // one-parameter container; the spec is irrelevant to the server step
        ServerState::new(ModelParams {
            spec: ModelSpec::linear(1, 1),
            values: vec![0.0, 0.0],
        })
    }

    #[test]
    fn fedavgm_without_momentum_is_fedavg() {
        let mut s = scalar_state();
        server_step_fedavgm(&mut s, &[0.5, -1.0], &ServerOptConfig::fedavgm(1.0, 0.0)).unwrap();
        assert_eq!(s.params.values, vec![0.5, -1.0]);
        assert_eq!(s.round, 1);
    }

    #[test]
    fn fedavgm_momentum_recursion() {
        let mut s = scalar_state();
        let cfg = ServerOptConfig::fedavgm(1.0, 0.9);
        server_step_fedavgm(&mut s, &[1.0, 0.0], &cfg).unwrap();
        server_step_fedavgm(&mut s, &[1.0, 0.0], &cfg).unwrap();
        assert!((s.params.values[0] - 2.9).abs() < 1e-15);
        // coasting on zero delta
        let before = s.params.values[0];
        let m = s.m[0];
        server_step_fedavgm(&mut s, &[0.0, 0.0], &cfg).unwrap();
        assert!((s.params.values[0] - before - 0.9 * m).abs() < 1e-15);
    }

    #[test]
    fn fedadam_first_step() {
        let mut s = scalar_state();
        server_step_fedadam(&mut s, &[1.0, 0.0], &ServerOptConfig::fedadam(1.0)).unwrap();
        assert!((s.m[0] - 0.1).abs() < 1e-15);
        assert!((s.v[0] - 0.01).abs() < 1e-15);
        let expected = 0.1 / (0.1 + 1e-4);
        assert!((s.params.values[0] - expected).abs() < 1e-15);
        assert!((s.params.values[0] - 0.999001).abs() < 1e-6);
        assert_eq!(s.params.values[1], 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = scalar_state();
        assert!(server_step_fedavgm(&mut s, &[1.0], &ServerOptConfig::fedavgm(1.0, 0.9)).is_err());
        assert!(server_step_fedadam(&mut s, &[1.0; 3], &ServerOptConfig::fedadam(1.0)).is_err());
    }

    #[test]
    fn decay_schedule() {
        let mut cfg = ServerOptConfig::fedavgm(1.0, 0.9);
        cfg.lr_decay = Some(LrDecay {
            factor: 0.2,
            every: 600,
        });
        assert_eq!(cfg.lr_at(599), 1.0);
        assert!((cfg.lr_at(600) - 0.2).abs() < 1e-15);
        assert!((cfg.lr_at(1200) - 0.04).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn fedadam_second_moment_nonnegative_and_step_bounded(
            deltas in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 2), 1..20)
        ) {
            let mut s = scalar_state();
            let cfg = ServerOptConfig::fedadam(0.3);
            for d in &deltas {
                let before = s.params.values.clone();
                server_step_fedadam(&mut s, d, &cfg).unwrap();
                prop_assert!(s.v.iter().all(|&v| v >= 0.0));
                let bound = cfg.server_lr * s.params.len() as f64
                    * s.m.iter().zip(&s.v).map(|(m, v)| (m / (v.sqrt() + cfg.eps)).abs()).fold(0.0, f64::max);
                let moved: f64 = before.iter().zip(&s.params.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                prop_assert!(moved <= bound + 1e-12);
            }
        }

        #[test]
        fn fedavgm_step_bounded_by_momentum_norm(
            deltas in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 2), 1..20)
        ) {
            let mut s = scalar_state();
            let cfg = ServerOptConfig::fedavgm(0.7, 0.9);
            for d in &deltas {
                let before = s.params.values.clone();
                server_step_fedavgm(&mut s, d, &cfg).unwrap();
                let norm_m = s.m.iter().map(|x| x * x).sum::<f64>().sqrt();
                let moved: f64 = before.iter().zip(&s.params.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                prop_assert!(moved <= cfg.server_lr * norm_m + 1e-12);
            }
        }
    }
}
