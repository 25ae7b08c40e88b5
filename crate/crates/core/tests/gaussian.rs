use pvae::gaussian::*;
use pvae::graph::Graph;
use pvae::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_gaussian(rng: &mut ChaCha8Rng, d: usize) -> DiagGaussian {
    DiagGaussian::new(
        (0..d).map(|_| rng.random_range(-1.5..1.5)).collect(),
        (0..d).map(|_| rng.random_range(-1.5..1.0)).collect(),
    )
    .unwrap()
}

fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
    let h = 1e-6;
    let (mut p, mut m) = (x.to_vec(), x.to_vec());
    p[i] += h;
    m[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
}

/// Reverse-mode gradients of `KL(q ‖ p)` against differences of the plain form.
#[test]
fn kl_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (q, p) = (random_gaussian(&mut rng, 4), random_gaussian(&mut rng, 4));
    let mut g = Graph::new();
    let qv = GaussianVar {
        mean: g.variable(Tensor::matrix(1, 4, q.mean.clone()).unwrap()),
        log_var: g.variable(Tensor::matrix(1, 4, q.log_var.clone()).unwrap()),
    };
    let pv = GaussianVar {
        mean: g.variable(Tensor::matrix(1, 4, p.mean.clone()).unwrap()),
        log_var: g.variable(Tensor::matrix(1, 4, p.log_var.clone()).unwrap()),
    };
    let kl = kl_divergence_var(&mut g, qv, pv).unwrap();
    let loss = g.sum(kl).unwrap();
    let grads = g.backward(loss).unwrap();
    let flat: Vec<f64> = [&q.mean, &q.log_var, &p.mean, &p.log_var].into_iter().flatten().copied().collect();
    let f = |x: &[f64]| {
        let q = DiagGaussian::new(x[0..4].to_vec(), x[4..8].to_vec()).unwrap();
        let p = DiagGaussian::new(x[8..12].to_vec(), x[12..16].to_vec()).unwrap();
        kl_divergence(&q, &p).unwrap()
    };
    for (k, v) in [qv.mean, qv.log_var, pv.mean, pv.log_var].into_iter().enumerate() {
        for d in 0..4 {
            let a = grads.get(v).unwrap().data()[d];
            let n = central(f, &flat, 4 * k + d);
            assert!(close(a, n), "slot {k} dim {d}: {a} vs {n}");
        }
    }
}

#[test]
fn standard_kl_and_reparam_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = random_gaussian(&mut rng, 3);
    let eps: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
    let w = [0.7, -1.3, 0.4];

    let mut g = Graph::new();
    let qv = GaussianVar {
        mean: g.variable(Tensor::matrix(1, 3, q.mean.clone()).unwrap()),
        log_var: g.variable(Tensor::matrix(1, 3, q.log_var.clone()).unwrap()),
    };
    let e = g.constant(Tensor::matrix(1, 3, eps.clone()).unwrap());
    let z = sample_reparam_var(&mut g, qv, e).unwrap();
    let wv = g.constant(Tensor::matrix(1, 3, w.to_vec()).unwrap());
    let wz = g.mul(z, wv).unwrap();
    let lin = g.sum(wz).unwrap();
    let kl = kl_to_standard_var(&mut g, qv).unwrap();
    let kl = g.sum(kl).unwrap();
    let loss = g.add(lin, kl).unwrap();
    let grads = g.backward(loss).unwrap();

    let flat: Vec<f64> = q.mean.iter().chain(&q.log_var).copied().collect();
    let f = |x: &[f64]| {
        let q = DiagGaussian::new(x[0..3].to_vec(), x[3..6].to_vec()).unwrap();
        let z = sample_reparam(&q, &eps).unwrap();
        z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + kl_to_standard(&q)
    };
    for (k, v) in [qv.mean, qv.log_var].into_iter().enumerate() {
        for d in 0..3 {
            let a = grads.get(v).unwrap().data()[d];
            let n = central(f, &flat, 3 * k + d);
            assert!(close(a, n), "slot {k} dim {d}: {a} vs {n}");
        }
    }
}

/// `∂/∂μ = (x − μ)/σ²`, `∂/∂lv = −½ + ½(x − μ)²/σ²` against differences of `log_prob`.
#[test]
fn log_prob_derivatives() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = random_gaussian(&mut rng, 5);
    let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    let flat: Vec<f64> = q.mean.iter().chain(&q.log_var).copied().collect();
    let f = |p: &[f64]| log_prob(&x, &DiagGaussian::new(p[0..5].to_vec(), p[5..10].to_vec()).unwrap()).unwrap();
    for d in 0..5 {
        let r = x[d] - q.mean[d];
        let inv = (-q.log_var[d]).exp();
        assert!(close(r * inv, central(f, &flat, d)));
        assert!(close(-0.5 + 0.5 * r * r * inv, central(f, &flat, 5 + d)));
    }
}

#[test]
fn sample_mean_within_three_standard_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = random_gaussian(&mut rng, 6);
    let n = 100_000;
    let mut sum = vec![0.0; 6];
    for _ in 0..n {
        let eps: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        for (s, z) in sum.iter_mut().zip(sample_reparam(&q, &eps).unwrap()) {
            *s += z;
        }
    }
    for d in 0..6 {
        let se = (q.log_var[d].exp() / n as f64).sqrt();
        let z = (sum[d] / n as f64 - q.mean[d]).abs() / se;
        assert!(z <= 3.0, "dim {d}: {z} standard errors");
    }
}

/// Simpson's rule over ±12σ: total mass, mean and variance.
#[test]
fn log_prob_integrates_to_a_normalized_density() {
    let q = DiagGaussian::new(vec![0.4], vec![-0.6]).unwrap();
    let sd = (0.5 * q.log_var[0]).exp();
    let (lo, hi, n) = (q.mean[0] - 12.0 * sd, q.mean[0] + 12.0 * sd, 4000);
    let h = (hi - lo) / n as f64;
    let (mut mass, mut first, mut second) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let p = log_prob(&[x], &q).unwrap().exp() * w * h / 3.0;
        mass += p;
        first += p * x;
        second += p * x * x;
    }
    assert!((mass - 1.0).abs() <= 1e-6);
    assert!((first - q.mean[0]).abs() <= 1e-6);
    assert!((second - first * first - sd * sd).abs() <= 1e-6);
}

/// KL of a factorized pair equals the Monte-Carlo joint estimate.
#[test]
fn factorized_joint_kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let (qm, qs) = (random_gaussian(&mut rng, 2), random_gaussian(&mut rng, 3));
        let (rm, rs) = (random_gaussian(&mut rng, 2), random_gaussian(&mut rng, 3));
        let closed = kl_divergence(&qm, &rm).unwrap() + kl_divergence(&qs, &rs).unwrap();
        let joint_q = DiagGaussian::new(
            qm.mean.iter().chain(&qs.mean).copied().collect(),
            qm.log_var.iter().chain(&qs.log_var).copied().collect(),
        )
        .unwrap();
        let joint_r = DiagGaussian::new(
            rm.mean.iter().chain(&rs.mean).copied().collect(),
            rm.log_var.iter().chain(&rs.log_var).copied().collect(),
        )
        .unwrap();
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let eps: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
                let z = sample_reparam(&joint_q, &eps).unwrap();
                log_prob(&z, &joint_q).unwrap() - log_prob(&z, &joint_r).unwrap()
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        let z = (closed - mean).abs() / (var / n as f64).sqrt();
        assert!(z <= 3.0, "{closed} vs {mean}: {z} standard errors");
    }
}

#[test]
fn dimension_mismatches_are_errors() {
    let q = DiagGaussian::standard(3);
    assert!(kl_divergence(&q, &DiagGaussian::standard(2)).is_err());
    assert!(sample_reparam(&q, &[0.0; 2]).is_err());
    assert!(log_prob(&[0.0; 4], &q).is_err());
    assert!(rbf_kernel(&[0.0], &[0.0, 1.0]).is_err());
    assert!(DiagGaussian::new(vec![0.0], vec![f64::NAN]).is_err());
}

fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|d| {
        (
            prop::collection::vec(-5.0f64..5.0, d),
            prop::collection::vec(-5.0f64..5.0, d),
        )
    })
}

proptest! {
    #[test]
    fn rbf_is_a_symmetric_similarity((a, b) in vec_pair()) {
        let k = rbf_kernel(&a, &b).unwrap();
        prop_assert!(k > 0.0 && k <= 1.0);
        prop_assert_eq!(k, rbf_kernel(&b, &a).unwrap());
        prop_assert_eq!(rbf_kernel(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_equal((m, lv) in vec_pair(), (m2, lv2) in vec_pair()) {
        let q = DiagGaussian::new(m.clone(), lv.iter().map(|v| v * 0.5).collect()).unwrap();
        prop_assert!(kl_divergence(&q, &q).unwrap().abs() <= 1e-12);
        if m2.len() == m.len() {
            let p = DiagGaussian::new(m2, lv2.iter().map(|v| v * 0.5).collect()).unwrap();
            prop_assert!(kl_divergence(&q, &p).unwrap() >= 0.0);
        }
        prop_assert_eq!(kl_to_standard(&q), kl_divergence(&q, &DiagGaussian::standard(q.dim())).unwrap());
    }
}
