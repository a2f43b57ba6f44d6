use std::collections::BTreeMap;

use super::*;
use crate::datasets::{ClientDataset, Example, FederatedDataset};
use crate::error::Error;
use crate::numerics::{cholesky, standard_normal, substream, Matrix};
use crate::partition::{gaussian_kl, Gaussian};
use rand::Rng;

fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, "pts", 0);
    (0..n)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect()
}

fn fd_check(vae: &VaeParams, batch: &[Vec<f64>], noise: &[Vec<f64>]) -> f64 {
    let (_, g) = elbo_and_grad_with_noise(vae, batch, noise).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, gi) in g.iter().enumerate() {
        let mut plus = vae.clone();
        plus.values[i] += h;
        let mut minus = vae.clone();
        minus.values[i] -= h;
        let fp = elbo_and_grad_with_noise(&plus, batch, noise).unwrap().0;
        let fm = elbo_and_grad_with_noise(&minus, batch, noise).unwrap().0;
        let num = (fp - fm) / (2.0 * h);
        worst = worst.max((num - gi).abs() / (num.abs() + gi.abs()).max(1e-3));
    }
    worst
}

#[test]
fn parameter_count() {
    let spec = VaeSpec::new(4, 2, 8, 8);
    assert_eq!(spec.encoder_outputs(), 5);
    assert_eq!(spec.num_params(), 8 * 5 + 5 * 9 + 8 * 3 + 4 * 9);
    assert_eq!(VaeSpec::new(4, 2, 0, 0).num_params(), 5 * 5 + 4 * 3);
    assert_eq!(vae_init(spec, 3).unwrap(), vae_init(spec, 3).unwrap());
    assert!(matches!(
        vae_init(VaeSpec::new(4, 0, 8, 8), 0),
        Err(Error::InvalidSpec(_))
    ));
}

#[test]
fn gradient_matches_finite_differences() {
    for (seed, spec) in [
        (1, VaeSpec::new(5, 2, 6, 4)),
        (2, VaeSpec::new(3, 3, 0, 5)),
        (
            3,
            VaeSpec {
                likelihood: Likelihood::Gaussian { sigma: 0.7 },
                ..VaeSpec::new(4, 2, 5, 0)
            },
        ),
    ] {
        let vae = vae_init(spec, seed).unwrap();
        let batch = random_points(3, spec.input_dim, seed);
        let mut rng = substream(seed, "noise", 0);
        let noise: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                (0..spec.latent_dim)
                    .map(|_| standard_normal(&mut rng))
                    .collect()
            })
            .collect();
        let err = fd_check(&vae, &batch, &noise);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn kl_is_zero_for_prior_posterior_and_matches_closed_form() {
    let spec = VaeSpec::new(3, 2, 0, 0);
    let mut vae = vae_init(spec, 0).unwrap();
    // linear encoder: zero weights, biases giving μ = 0 and L = I
    vae.values[..5 * 3].iter_mut().for_each(|w| *w = 0.0);
    let inv_softplus_one = (1f64.exp() - 1.0).ln();
    vae.values[15..20].copy_from_slice(&[0.0, 0.0, inv_softplus_one, inv_softplus_one, 0.0]);
    let q = vae.posterior(&[0.2, 0.5, 0.9]).unwrap();
    assert!(q.kl_to_standard().abs() < 1e-15);

    let mut rng = substream(4, "kl", 0);
    for _ in 0..20 {
        let mean = vec![standard_normal(&mut rng), standard_normal(&mut rng)];
        let l = [
            rng.random_range(0.2..2.0),
            0.0,
            standard_normal(&mut rng),
            rng.random_range(0.2..2.0),
        ];
        let q = Posterior {
            mean: mean.clone(),
            scale: l.to_vec(),
        };
        let lm = Matrix::from_vec(2, 2, l.to_vec()).unwrap();
        let cov = lm.matmul(&lm.transpose()).unwrap();
        let kl = gaussian_kl(&Gaussian::new(mean, cov).unwrap(), &Gaussian::standard(2)).unwrap();
        assert!(kl >= 0.0);
        assert!((q.kl_to_standard() - kl).abs() < 1e-10);
    }
}

#[test]
fn single_sample_iwae_equals_elbo_sample() {
    let vae = vae_init(VaeSpec::new(4, 2, 5, 5), 8).unwrap();
    let x = random_points(1, 4, 8).remove(0);
    let eps = vec![0.3, -1.1];
    let q = vae.posterior(&x).unwrap();
    let z = q.sample_with(&eps);
    let lm = Matrix::from_vec(2, 2, q.scale.clone()).unwrap();
    let cov = lm.matmul(&lm.transpose()).unwrap();
    let log_q = Gaussian::new(q.mean.clone(), cov)
        .unwrap()
        .log_pdf(&z)
        .unwrap();
    let log_prior = Gaussian::standard(2).log_pdf(&z).unwrap();
    let expect = vae.log_likelihood_at(&x, &z).unwrap() + log_prior - log_q;
    let got = iwae_with_noise(&vae, &x, &[eps]).unwrap();
    assert!((got - expect).abs() < 1e-12);
}

/// Linear-Gaussian model `x = W z + b + σ·noise` with `z ~ N(0, I)`, and an
/// encoder set to the exact posterior with its mean moved by `shift` posterior
/// standard deviations and its scale factor multiplied by `widen`.
fn conjugate_instance(seed: u64, d: usize, shift: f64, widen: f64) -> (VaeParams, Gaussian) {
    let l = 2;
    let mut rng = substream(seed, "conj", 0);
    let sigma = rng.random_range(0.4..1.0);
    let spec = VaeSpec {
        likelihood: Likelihood::Gaussian { sigma },
        ..VaeSpec::new(d, l, 0, 0)
    };
    let mut vae = vae_init(spec, seed).unwrap();
    let w: Vec<f64> = (0..d * l).map(|_| standard_normal(&mut rng)).collect();
    let b: Vec<f64> = (0..d).map(|_| 0.5 * standard_normal(&mut rng)).collect();
    let wm = Matrix::from_vec(d, l, w.clone()).unwrap();
    // evidence N(b, W Wᵀ + σ² I)
    let mut marginal = wm.matmul(&wm.transpose()).unwrap();
    marginal.add_diagonal(sigma * sigma);
    let evidence = Gaussian::new(b.clone(), marginal).unwrap();
    // posterior precision I + WᵀW/σ²
    let wtw = wm.transpose().matmul(&wm).unwrap();
    let mut prec = Matrix::from_vec(
        l,
        l,
        wtw.data().iter().map(|v| v / (sigma * sigma)).collect(),
    )
    .unwrap();
    prec.add_diagonal(1.0);
    let s = crate::numerics::chol_inverse(&cholesky(&prec).unwrap());
    let a = s.matmul(&wm.transpose()).unwrap(); // l×d, still to divide by σ²
    let chol = cholesky(&s).unwrap();
    let enc_w = 5 * d;
    let p = &mut vae.values;
    for i in 0..l {
        for j in 0..d {
            p[i * d + j] = a[(i, j)] / (sigma * sigma);
        }
        let c: f64 = (0..d).map(|j| -a[(i, j)] / (sigma * sigma) * b[j]).sum();
        p[enc_w + i] = c + shift * (0..=i).map(|j| chol[(i, j)]).sum::<f64>();
        let lii = chol[(i, i)] * widen;
        p[enc_w + l + i] = (lii.exp() - 1.0).ln();
    }
    for j in 0..d {
        for k in l..5 {
            p[k * d + j] = 0.0;
        }
    }
    p[enc_w + 4] = chol[(1, 0)] * widen;
    let dec = enc_w + 5;
    p[dec..dec + d * l].copy_from_slice(&w);
    p[dec + d * l..dec + d * l + d].copy_from_slice(&b);
    (vae, evidence)
}

#[test]
fn iwae_matches_conjugate_evidence() {
    let (vae, evidence) = conjugate_instance(1, 4, 0.0, 1.0);
    let mut rng = substream(0, "x", 0);
    let x: Vec<f64> = (0..4).map(|_| standard_normal(&mut rng)).collect();
    // exact posterior: every importance weight equals the evidence
    let one = iwae_log_evidence(&vae, &x, 1, &mut rng).unwrap();
    assert!((one - evidence.log_pdf(&x).unwrap()).abs() < 1e-10);

    for seed in 0..5 {
        let (vae, evidence) = conjugate_instance(seed, 4, 0.3, 1.3);
        let x: Vec<f64> = (0..4).map(|_| standard_normal(&mut rng)).collect();
        let est = iwae_log_evidence(&vae, &x, 1000, &mut rng).unwrap();
        let truth = evidence.log_pdf(&x).unwrap();
        assert!((est - truth).abs() < 0.05, "seed {seed}: {est} vs {truth}");
    }
}

#[test]
fn iwae_bound_tightens_with_k() {
    let (vae, _) = conjugate_instance(7, 3, 1.0, 0.5);
    let x = vec![0.5, -1.0, 2.0];
    let mut rng = substream(1, "reps", 0);
    let (mut up1, mut up2, mut above_elbo) = (0, 0, 0);
    let q = vae.posterior(&x).unwrap();
    for _ in 0..200 {
        let k1 = iwae_log_evidence(&vae, &x, 1, &mut rng).unwrap();
        let k10 = iwae_log_evidence(&vae, &x, 10, &mut rng).unwrap();
        let k100 = iwae_log_evidence(&vae, &x, 100, &mut rng).unwrap();
        up1 += usize::from(k10 > k1);
        up2 += usize::from(k100 > k10);
        // analytic ELBO: E_q[ln p(x|z)] − KL, estimated with many draws
        let z_draws: Vec<f64> = (0..10)
            .map(|_| {
                let eps = [standard_normal(&mut rng), standard_normal(&mut rng)];
                vae.log_likelihood_at(&x, &q.sample_with(&eps)).unwrap()
            })
            .collect();
        let elbo = z_draws.iter().sum::<f64>() / 10.0 - q.kl_to_standard();
        above_elbo += usize::from(k10 > elbo);
    }
    // one-sided sign test at p < 0.01 needs at least 117 of 200
    assert!(
        up1 >= 117 && up2 >= 117 && above_elbo >= 117,
        "{up1} {up2} {above_elbo}"
    );
}

#[test]
fn training_reaches_bernoulli_optimum_on_constant_data() {
    let d = 6;
    let points = vec![vec![0.5; d]; 16];
    let cfg = VaeTrainConfig {
        steps: 1500,
        lr: 1e-2,
        ..VaeTrainConfig::default()
    };
    let (vae, trace) = train_vae_traced(&points, VaeSpec::new(d, 2, 8, 8), &cfg, 5).unwrap();
    let tail = &trace[trace.len() - 150..];
    let head = &trace[..150];
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean(tail) >= mean(head));
    let optimum = -(d as f64) * 2f64.ln();
    assert!(
        (mean(tail) - optimum).abs() < 0.1 * d as f64,
        "{}",
        mean(tail)
    );
    let mut rng = substream(0, "eval", 0);
    let ev = iwae_log_evidence(&vae, &points[0], 200, &mut rng).unwrap();
    assert!((ev - optimum).abs() < 0.1 * d as f64);
}

#[test]
fn zero_steps_and_determinism() {
    let points = random_points(10, 3, 1);
    let spec = VaeSpec::new(3, 2, 4, 4);
    let cfg = VaeTrainConfig {
        steps: 0,
        ..VaeTrainConfig::default()
    };
    assert_eq!(
        train_vae(&points, spec, &cfg, 9).unwrap(),
        vae_init(spec, 9).unwrap()
    );
    let cfg = VaeTrainConfig {
        steps: 30,
        ..VaeTrainConfig::default()
    };
    assert_eq!(
        train_vae(&points, spec, &cfg, 9).unwrap(),
        train_vae(&points, spec, &cfg, 9).unwrap()
    );
    let mut rng_a = substream(2, "a", 0);
    let mut rng_b = substream(2, "a", 0);
    let vae = vae_init(spec, 1).unwrap();
    assert_eq!(
        elbo_and_grad(&vae, &points, 2, &mut rng_a).unwrap(),
        elbo_and_grad(&vae, &points, 2, &mut rng_b).unwrap()
    );
}

#[test]
fn bernoulli_rejects_out_of_range_features() {
    let vae = vae_init(VaeSpec::new(2, 2, 3, 3), 0).unwrap();
    let mut rng = substream(0, "x", 0);
    assert!(matches!(
        iwae_log_evidence(&vae, &[0.5, 1.5], 4, &mut rng),
        Err(Error::OutOfRangeFeatures { .. })
    ));
    assert!(matches!(
        elbo_and_grad(&vae, &[vec![-0.1, 0.0]], 1, &mut rng),
        Err(Error::OutOfRangeFeatures { .. })
    ));
}

fn bernoulli_client(id: &str, p: f64, n: usize, d: usize, seed: u64) -> ClientDataset {
    let mut rng = substream(seed, id, 0);
    let examples = (0..n)
        .map(|_| Example {
            x: (0..d)
                .map(|_| f64::from(u8::from(rng.random::<f64>() < p)))
                .collect(),
            y: 0,
        })
        .collect();
    ClientDataset::new(id, examples)
}

#[test]
fn entropy_orders_bernoulli_clients_and_skips_small_ones() {
    let d = 8;
    let fd = FederatedDataset::from_clients(
        1,
        d,
        vec![
            bernoulli_client("a_half", 0.5, 64, d, 1),
            bernoulli_client("b_sparse", 0.05, 64, d, 1),
            bernoulli_client("c_tiny", 0.5, 3, d, 1),
        ],
    )
    .unwrap();
    let cfg = EntropyConfig {
        train: VaeTrainConfig {
            steps: 600,
            lr: 1e-2,
            ..VaeTrainConfig::default()
        },
        encoder_hidden: 16,
        decoder_hidden: 16,
        iwae_samples: 100,
        ..EntropyConfig::default()
    };
    let report = client_entropy(&fd, 0, &cfg, 3).unwrap();
    assert_eq!(
        report.per_client.keys().collect::<Vec<_>>(),
        ["a_half", "b_sparse"]
    );
    let h = |id: &str| report.per_client[id].entropy;
    assert!(h("a_half") > h("b_sparse"));
    assert!((report.mean - (h("a_half") + h("b_sparse")) / 2.0).abs() < 1e-12);
    assert_eq!(report, client_entropy(&fd, 0, &cfg, 3).unwrap());
    assert!(matches!(
        client_entropy(&fd, 1, &cfg, 3),
        Err(Error::NoQualifyingClients { label: 1 })
    ));

    let csv = format_entropy_csv(&[report]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], ENTROPY_CSV_HEADER);
    assert!(lines[1].starts_with("a_half,0,64,"));
    assert_eq!(lines.len(), 3);
}

#[test]
fn single_client_report() {
    let d = 4;
    let mut clients = BTreeMap::new();
    clients.insert("only", bernoulli_client("only", 0.3, 12, d, 2));
    let fd = FederatedDataset::from_clients(1, d, clients.into_values()).unwrap();
    let cfg = EntropyConfig {
        train: VaeTrainConfig {
            steps: 50,
            ..VaeTrainConfig::default()
        },
        iwae_samples: 20,
        ..EntropyConfig::default()
    };
    let r = client_entropy(&fd, 0, &cfg, 0).unwrap();
    assert_eq!(r.per_client.len(), 1);
    assert_eq!(r.mean, r.per_client["only"].entropy);
}
