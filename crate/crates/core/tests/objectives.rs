use pvae::gaussian::{log_prob, sample_reparam, DiagGaussian};
use pvae::graph::Graph;
use pvae::networks::{ModelKind, PvaeModel};
use pvae::objectives::coherence;
use pvae::verify::{fixture_batch, tiny_arch};
use pvae::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn model(seed: u64) -> PvaeModel {
    PvaeModel::new(tiny_arch(), ModelKind::Pvae, seed).unwrap()
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assert_fd(name: &str, analytic: &[f64], numeric: impl Fn(usize) -> f64) {
    for (i, &a) in analytic.iter().enumerate() {
        let n = numeric(i);
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        assert!(err <= 1e-5, "{name}[{i}]: {a} vs {n}");
    }
}

#[test]
fn audio_decoder_gradient_wrt_semantic_latent() {
    let m = model(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (b, t, f) = (2, 5, m.arch().audio_feat_dim);
    let zs = random(&mut rng, b, m.arch().latent_dim_s);
    let za = random(&mut rng, b, m.arch().latent_dim_a);
    let target: Vec<f64> = (0..b * t * f).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut g = Graph::new();
    let p = m.params().bind_constant(&mut g);
    let zs_v = g.variable(zs.clone());
    let za_v = g.constant(za.clone());
    let out = m.audio_decoder(&mut g, &p, za_v, zs_v, t).unwrap();
    // time-major rows: row = step * b + sample
    let mut tm = vec![0.0; b * t * f];
    for s in 0..b {
        for step in 0..t {
            let src = (s * t + step) * f;
            let dst = (step * b + s) * f;
            tm[dst..dst + f].copy_from_slice(&target[src..src + f]);
        }
    }
    let tv = g.constant(Tensor::matrix(t * b, f, tm).unwrap());
    let d = g.sub(out, tv).unwrap();
    let d2 = g.mul(d, d).unwrap();
    let loss = g.mean(d2).unwrap();
    let grads = g.backward(loss).unwrap();

    let value = |z: &Tensor| {
        let frames = m.decode_audio(&za, z, &[t; 2]).unwrap();
        let flat: Vec<f64> = frames.concat();
        sq_dist(&flat, &target) / (b * t * f) as f64
    };
    let h = 1e-6;
    assert_fd("audio dz_s", grads.get(zs_v).unwrap().data(), |i| {
        let (mut p, mut q) = (zs.clone(), zs.clone());
        p.data_mut()[i] += h;
        q.data_mut()[i] -= h;
        (value(&p) - value(&q)) / (2.0 * h)
    });
}

#[test]
fn image_decoder_gradient_wrt_semantic_latent() {
    let m = model(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = 2;
    let zs = random(&mut rng, b, m.arch().latent_dim_s);
    let zi = random(&mut rng, b, m.arch().latent_dim_i);
    let target: Vec<f64> = (0..b * m.arch().image_pixels()).map(|_| rng.random_range(0.0..1.0)).collect();

    let mut g = Graph::new();
    let p = m.params().bind_constant(&mut g);
    let zs_v = g.variable(zs.clone());
    let zi_v = g.constant(zi.clone());
    let out = m.image_decoder(&mut g, &p, zi_v, zs_v).unwrap();
    let shape = g.shape(out).to_vec();
    let tv = g.constant(Tensor::new(&shape, target.clone()).unwrap());
    let d = g.sub(out, tv).unwrap();
    let d2 = g.mul(d, d).unwrap();
    let loss = g.mean(d2).unwrap();
    let grads = g.backward(loss).unwrap();

    let value = |z: &Tensor| sq_dist(m.decode_image(&zi, z).unwrap().data(), &target) / target.len() as f64;
    let h = 1e-6;
    assert_fd("image dz_s", grads.get(zs_v).unwrap().data(), |i| {
        let (mut p, mut q) = (zs.clone(), zs.clone());
        p.data_mut()[i] += h;
        q.data_mut()[i] -= h;
        (value(&p) - value(&q)) / (2.0 * h)
    });
}

fn concat(a: &DiagGaussian, b: &DiagGaussian) -> DiagGaussian {
    DiagGaussian::new(
        a.mean.iter().chain(&b.mean).copied().collect(),
        a.log_var.iter().chain(&b.log_var).copied().collect(),
    )
    .unwrap()
}

/// Coherence against `E_q[log q(z^m, z^s) − log r(z^m, z^s)]` sampled jointly.
#[test]
fn coherence_matches_joint_monte_carlo() {
    let m = model(3);
    let (batch, _) = fixture_batch(&m, 3, 3).unwrap();
    let mut g = Graph::new();
    let p = m.params().bind_constant(&mut g);
    let ch = coherence(&m, &mut g, &p, &batch).unwrap();
    let ch = g.scalar_value(ch);
    assert!(ch <= 0.0);

    let (qs, qa, qi) = m.infer_multimodal(&batch).unwrap();
    let (ras, raa) = m.infer_unimodal_audio(batch.audio().unwrap()).unwrap();
    let (ris, rii) = m.infer_unimodal_image(batch.image().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let (mut mean, mut var) = (0.0, 0.0);
    for s in 0..batch.len() {
        for (q, r) in [
            (concat(&qa.row(s), &qs.row(s)), concat(&raa.row(s), &ras.row(s))),
            (concat(&qi.row(s), &qs.row(s)), concat(&rii.row(s), &ris.row(s))),
        ] {
            let draws: Vec<f64> = (0..n)
                .map(|_| {
                    let eps: Vec<f64> = (0..q.dim()).map(|_| rng.sample(StandardNormal)).collect();
                    let z = sample_reparam(&q, &eps).unwrap();
                    log_prob(&z, &q).unwrap() - log_prob(&z, &r).unwrap()
                })
                .collect();
            let mu = draws.iter().sum::<f64>() / n as f64;
            let v = draws.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / (n - 1) as f64;
            mean += mu;
            var += v / n as f64;
        }
    }
    let b = batch.len() as f64;
    let (estimate, se) = (-mean / b, var.sqrt() / b);
    let z = (ch - estimate).abs() / se;
    assert!(z <= 3.0, "coherence {ch} vs {estimate} ({z} standard errors)");
}
