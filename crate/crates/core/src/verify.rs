//! Oracle suites: finite differences, Monte-Carlo estimates, brute-force
//! counting and byte-level fixtures, each checked against the library.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::idx::{encode_idx, parse_idx, IdxData, IMAGES_MAGIC, LABELS_MAGIC};
use crate::data::{negative_for, Dataset, GeneratorConfig, MultimodalBatch, NegativeMode, Split};
use crate::error::Result;
use crate::eval::cluster::{kmeans, kmeans_best, weighted_purity, DEFAULT_MAX_ITER};
use crate::gaussian::{kl_divergence, log_prob, sample_reparam, standard_log_prob, DiagGaussian};
use crate::graph::{lstm_step, Graph, LstmVars};
use crate::networks::{ArchConfig, ModelKind, PvaeModel};
use crate::objectives::{elbo, total_objective, ElboNoise, ObjectiveWeights};
use crate::params::{ParamGroup, ParamId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{} {} ({:.1}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.detail
        )
    }
}

/// `|a - b| / max(|a|, |b|)`, or the absolute difference when both are below `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central difference of `f` in coordinate `i` of `x`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> Result<f64>, x: &[f64], i: usize, h: f64) -> Result<f64> {
    let mut y = x.to_vec();
    y[i] = x[i] + h;
    let up = f(&y)?;
    y[i] = x[i] - h;
    let down = f(&y)?;
    Ok((up - down) / (2.0 * h))
}

/// Largest relative error between analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
    pub per_group: Vec<(ParamGroup, usize)>,
}

/// Central-difference step on the full objective; small enough to stay
/// clear of most ReLU kinks.
const OBJECTIVE_STEP: f64 = 1e-5;
/// Denominator floor for the full objective, whose magnitude (~1e3) puts
/// finite-difference roundoff near 1e-8.
pub const OBJECTIVE_FLOOR: f64 = 1e-3;
/// Denominator floor for the small op graphs.
pub const FD_FLOOR: f64 = 1e-6;

/// A small fixed batch with label-filtered negatives.
pub fn fixture_batch(model: &PvaeModel, pairs: usize, seed: u64) -> Result<(MultimodalBatch, MultimodalBatch)> {
    let cfg = GeneratorConfig {
        n_train: pairs.max(10),
        n_test: 10,
        feat_dim: model.arch().audio_feat_dim,
        t_min: 8,
        t_max: 16,
    };
    let data = Dataset::generate(&cfg, Split::Train, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools = data.images_by_identity();
    let anchors: Vec<(usize, usize)> = (0..pairs)
        .map(|a| {
            let pool = &pools[data.audio[a].identity as usize];
            (a, pool[rng.random_range(0..pool.len())])
        })
        .collect();
    let negs = negative_for(&anchors, &data, NegativeMode::LabelFiltered, &mut rng)?;
    Ok((data.batch(&anchors)?, data.batch(&negs)?))
}

/// Reverse-mode gradient of the total objective against central differences
/// on `n_params` coordinates drawn evenly from the θ, φ and ψ groups.
pub fn gradient_check_total(arch: &ArchConfig, n_params: usize, seed: u64) -> Result<GradReport> {
    let mut model = PvaeModel::new(arch.clone(), ModelKind::Pvae, seed)?;
    let (batch, negs) = fixture_batch(&model, 3, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let noise = ElboNoise::sample(&mut rng, &model, batch.len());
    let weights = ObjectiveWeights::default();

    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let out = total_objective(&model, &mut g, &p, &batch, &negs, &weights, &noise)?;
    let vars = p.vars().to_vec();
    let grads = g.backward(out.total)?;

    let groups = [ParamGroup::Theta, ParamGroup::Phi, ParamGroup::Psi];
    let mut picks: Vec<(ParamId, usize)> = Vec::new();
    let mut per_group = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        let members: Vec<(ParamId, usize)> = model
            .params()
            .ids()
            .filter(|&id| model.params().get(id).group == *group)
            .flat_map(|id| (0..model.params().get(id).value.len()).map(move |k| (id, k)))
            .collect();
        let want = n_params / 3 + usize::from(gi < n_params % 3);
        for _ in 0..want {
            picks.push(members[rng.random_range(0..members.len())]);
        }
        per_group.push((*group, want));
    }

    let eval = |model: &PvaeModel| -> Result<f64> {
        let mut g = Graph::new();
        let p = model.params().bind_constant(&mut g);
        let out = total_objective(model, &mut g, &p, &batch, &negs, &weights, &noise)?;
        Ok(g.scalar_value(out.total))
    };
    let mut report = GradReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
        per_group,
    };
    for (id, k) in picks {
        let analytic = grads.get(vars[id.index()]).map_or(0.0, |t| t.data()[k]);
        let x0 = model.params().get(id).value.data()[k];
        let mut at = |offset: f64| -> Result<f64> {
            model.params_mut().get_mut(id).value.data_mut()[k] = x0 + offset * OBJECTIVE_STEP;
            eval(&model)
        };
        let numeric = (at(1.0)? - at(-1.0)?) / (2.0 * OBJECTIVE_STEP);
        model.params_mut().get_mut(id).value.data_mut()[k] = x0;
        let e = rel_err(analytic, numeric, OBJECTIVE_FLOOR);
        report.checked += 1;
        if e > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = e.max(report.max_rel_err);
            report.worst = format!(
                "{}[{k}] analytic {analytic:.6e} numeric {numeric:.6e}",
                model.params().get(id).name
            );
        }
    }
    Ok(report)
}

/// Gradients of small graphs against central differences: largest relative
/// error for `sum(A × B)`, an LSTM step and a conv → LSTM → linear chain.
pub fn gradient_check_ops(seed: u64) -> Result<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut randn = |shape: &[usize], s: f64| {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
    };
    let mut worst = [0.0f64; 3];

    // sum(A × B) w.r.t. A
    let a = randn(&[4, 5], 1.0);
    let b = randn(&[5, 3], 1.0);
    let mut f = |x: &[f64]| -> Result<f64> {
        let mut g = Graph::new();
        let av = g.constant(Tensor::new(&[4, 5], x.to_vec())?);
        let bv = g.constant(b.clone());
        let c = g.matmul(av, bv)?;
        let s = g.sum(c)?;
        Ok(g.scalar_value(s))
    };
    let mut g = Graph::new();
    let av = g.variable(a.clone());
    let bv = g.constant(b.clone());
    let c = g.matmul(av, bv)?;
    let s = g.sum(c)?;
    let ga = g.backward(s)?.take(av).expect("leaf gradient");
    for i in 0..a.len() {
        worst[0] = worst[0].max(rel_err(ga.data()[i], central_difference(&mut f, a.data(), i, 1e-6)?, FD_FLOOR));
    }

    // LSTM step with D_h = 8, every parameter matrix
    let (bsz, din, hd) = (3, 5, 8);
    let leaves = [
        randn(&[bsz, din], 1.0),
        randn(&[bsz, hd], 0.5),
        randn(&[bsz, hd], 0.5),
        randn(&[din, 4 * hd], 0.4),
        randn(&[hd, 4 * hd], 0.4),
        randn(&[4 * hd], 0.4),
    ];
    let readout = randn(&[bsz, 2 * hd], 1.0);
    let lstm_loss = |g: &mut Graph, v: &[crate::graph::Var]| -> Result<crate::graph::Var> {
        let (h, c) = lstm_step(
            g,
            v[0],
            v[1],
            v[2],
            LstmVars {
                w_ih: v[3],
                w_hh: v[4],
                bias: v[5],
            },
        )?;
        let hc = g.concat(&[h, c])?;
        let r = g.constant(readout.clone());
        let prod = g.mul(hc, r)?;
        g.sum(prod)
    };
    worst[1] = check_leaves(&leaves, lstm_loss)?;

    // conv → LSTM over rows → linear
    let leaves = [
        randn(&[2, 1, 4, 4], 1.0),
        randn(&[2, 1, 4, 4], 0.5),
        randn(&[2], 0.1),
        randn(&[4, 12], 0.4),
        randn(&[3, 12], 0.4),
        randn(&[12], 0.1),
        randn(&[3, 2], 0.5),
    ];
    let composite = |g: &mut Graph, v: &[crate::graph::Var]| -> Result<crate::graph::Var> {
        let y = g.conv2d(v[0], v[1], Some(v[2]))?; // [2, 2, 2, 2]
        let y = g.tanh(y)?;
        let seq = g.reshape(y, &[4, 4])?;
        let mut h = g.constant(Tensor::zeros(&[2, 3]));
        let mut c = g.constant(Tensor::zeros(&[2, 3]));
        for t in 0..2 {
            let x = g.slice_rows(seq, 2 * t, 2 * t + 2)?;
            (h, c) = lstm_step(
                g,
                x,
                h,
                c,
                LstmVars {
                    w_ih: v[3],
                    w_hh: v[4],
                    bias: v[5],
                },
            )?;
        }
        let o = g.matmul(h, v[6])?;
        let sq = g.mul(o, o)?;
        g.sum(sq)
    };
    worst[2] = check_leaves(&leaves, composite)?;
    Ok(worst)
}

/// Checks every coordinate of every leaf for a scalar function built by `build`.
fn check_leaves(
    leaves: &[Tensor],
    build: impl Fn(&mut Graph, &[crate::graph::Var]) -> Result<crate::graph::Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<_> = leaves.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let mut grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(leaves)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let mut f = |x: &[f64]| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<_> = leaves
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    let t = if j == li { Tensor::new(t.shape(), x.to_vec()).expect("same shape") } else { t.clone() };
                    g.constant(t)
                })
                .collect();
            let loss = build(&mut g, &vars)?;
            Ok(g.scalar_value(loss))
        };
        for i in 0..leaf.len() {
            let n = central_difference(&mut f, leaf.data(), i, 1e-6)?;
            worst = worst.max(rel_err(analytic[li].data()[i], n, FD_FLOOR));
        }
    }
    Ok(worst)
}

/// ⟨conv2d(x, k), y⟩ against ⟨x, conv_transpose2d(y, k)⟩; returns the
/// largest relative discrepancy over `trials` random instances.
pub fn adjoint_check(trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (b, ci, co, side) = (2, rng.random_range(1..4), rng.random_range(1..4), 2 * rng.random_range(2..6));
        let mut randn = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
        };
        let x = randn(&[b, ci, side, side]);
        let k = randn(&[co, ci, 4, 4]);
        let y = randn(&[b, co, side / 2, side / 2]);
        let mut g = Graph::new();
        let (xv, kv, yv) = (g.constant(x.clone()), g.constant(k), g.constant(y.clone()));
        let fwd = g.conv2d(xv, kv, None)?;
        let back = g.conv_transpose2d(yv, kv, None)?;
        let lhs = g.value(fwd).dot(&y);
        let rhs = x.dot(g.value(back));
        worst = worst.max(rel_err(lhs, rhs, 1e-12));
    }
    Ok(worst)
}

fn random_gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DiagGaussian {
    let mean = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let log_var = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    DiagGaussian::new(mean, log_var).expect("finite")
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Per pair: `|closed form − Monte-Carlo| / standard error`.
pub fn kl_monte_carlo(pairs: usize, dim: usize, samples: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs);
    let mut eps = vec![0.0; dim];
    for _ in 0..pairs {
        let q = random_gaussian(&mut rng, dim);
        let p = random_gaussian(&mut rng, dim);
        let closed = kl_divergence(&q, &p)?;
        let draws = (0..samples)
            .map(|_| {
                eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
                let z = sample_reparam(&q, &eps)?;
                Ok(log_prob(&z, &q)? - log_prob(&z, &p)?)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (m, se) = mean_se(&draws);
        out.push((closed - m).abs() / se);
    }
    Ok(out)
}

/// Tiny architecture used by the bound and coherence oracles.
pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        latent_dim_s: 3,
        latent_dim_a: 2,
        latent_dim_i: 2,
        lstm_cells: 4,
        preenc_out: 5,
        fc_units: (6, 7 * 7 * 2),
        ..ArchConfig::default()
    }
}

/// `log p(x | z)` under the unit-variance Gaussian decoders.
fn gaussian_ll(x: &[f64], mean: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .map(|(a, b)| -0.5 * (a - b) * (a - b) - crate::gaussian::HALF_LN_2PI)
        .sum()
}

/// For one tiny model and one sample: `(mean ELBO, SE, mean IW bound, SE)` over `reps`
/// independent single-sample ELBO estimates and `k`-sample importance-weighted bounds.
pub fn elbo_vs_iw(seed: u64, k: usize, reps: usize) -> Result<(f64, f64, f64, f64)> {
    let model = PvaeModel::new(tiny_arch(), ModelKind::Pvae, seed)?;
    let (batch, _) = fixture_batch(&model, 1, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));

    let elbos = (0..reps)
        .map(|_| {
            let noise = ElboNoise::sample(&mut rng, &model, 1);
            let mut g = Graph::new();
            let p = model.params().bind_constant(&mut g);
            Ok(elbo(&model, &mut g, &p, &batch, &noise)?.breakdown.elbo())
        })
        .collect::<Result<Vec<f64>>>()?;

    let (qs, qa, qi) = model.infer_multimodal(&batch)?;
    let (qs, qa, qi) = (qs.row(0), qa.row(0), qi.row(0));
    let n = reps * k;
    let draw = |rng: &mut ChaCha8Rng, q: &DiagGaussian| -> Result<Vec<f64>> {
        let eps: Vec<f64> = (0..q.dim()).map(|_| rng.sample(StandardNormal)).collect();
        sample_reparam(q, &eps)
    };
    let mut zs = Vec::with_capacity(n);
    let mut za = Vec::with_capacity(n);
    let mut zi = Vec::with_capacity(n);
    let mut log_ratio = Vec::with_capacity(n);
    for _ in 0..n {
        let (s, a, i) = (draw(&mut rng, &qs)?, draw(&mut rng, &qa)?, draw(&mut rng, &qi)?);
        log_ratio.push(
            standard_log_prob(&s) + standard_log_prob(&a) + standard_log_prob(&i)
                - log_prob(&s, &qs)?
                - log_prob(&a, &qa)?
                - log_prob(&i, &qi)?,
        );
        zs.extend(s);
        za.extend(a);
        zi.extend(i);
    }
    let zs = Tensor::new(&[n, qs.dim()], zs)?;
    let za = Tensor::new(&[n, qa.dim()], za)?;
    let zi = Tensor::new(&[n, qi.dim()], zi)?;
    let audio = batch.audio()?.sequence(0);
    let image = batch.image()?.data().to_vec();
    let t = batch.audio()?.lengths[0];
    let audio_means = model.decode_audio(&za, &zs, &vec![t; n])?;
    let image_means = model.decode_image(&zi, &zs)?;
    let side = image.len();
    let log_w: Vec<f64> = (0..n)
        .map(|j| {
            log_ratio[j]
                + gaussian_ll(&audio, &audio_means[j])
                + gaussian_ll(&image, &image_means.data()[j * side..(j + 1) * side])
        })
        .collect();
    let iw: Vec<f64> = log_w
        .chunks(k)
        .map(|c| {
            let m = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + (c.iter().map(|v| (v - m).exp()).sum::<f64>() / k as f64).ln()
        })
        .collect();
    let (me, se) = mean_se(&elbos);
    let (mi, si) = mean_se(&iw);
    Ok((me, se, mi, si))
}

/// `(1/N) Σ_c max_l count(c, l)` by nested scanning, independent of [`weighted_purity`].
pub fn brute_force_purity(assignments: &[usize], labels: &[u8]) -> f64 {
    let clusters: Vec<usize> = {
        let mut c = assignments.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut majority = 0;
    for &c in &clusters {
        let mut best = 0;
        for l in 0..=u8::MAX {
            let n = assignments.iter().zip(labels).filter(|&(&a, &b)| a == c && b == l).count();
            best = best.max(n);
        }
        majority += best;
    }
    majority as f64 / assignments.len() as f64
}

/// Number of random instances where library and brute-force purity disagree,
/// including under a random relabelling of the clusters.
pub fn purity_mismatches(instances: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..instances {
        let n = rng.random_range(1..=200);
        let k = rng.random_range(1..=12);
        let classes = rng.random_range(1..=10u8);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let l: Vec<u8> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let relabelled: Vec<usize> = a.iter().map(|&c| perm[c]).collect();
        let lib = weighted_purity(&a, &l)?;
        let oracle = brute_force_purity(&a, &l);
        if lib != oracle || weighted_purity(&relabelled, &l)? != lib {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Runs k-means on random point clouds; counts logged iterations where the
/// inertia rose.
pub fn lloyd_increases(runs: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rises = 0;
    for r in 0..runs {
        let n = rng.random_range(20..120);
        let d = rng.random_range(1..6);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let res = kmeans(&pts, rng.random_range(1..10), r as u64, DEFAULT_MAX_ITER)?;
        rises += res.trace.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-12)).count();
    }
    Ok(rises)
}

/// Fraction of points whose k-means cluster matches their blob (up to relabelling).
pub fn blob_recovery(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [[-20.0, -20.0], [20.0, -20.0], [-20.0, 20.0], [20.0, 20.0]];
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for (l, c) in centers.iter().enumerate() {
        for _ in 0..50 {
            pts.push(vec![c[0] + rng.sample::<f64, _>(StandardNormal), c[1] + rng.sample::<f64, _>(StandardNormal)]);
            truth.push(l);
        }
    }
    let res = kmeans_best(&pts, 4, seed, 5)?;
    let mut map: HashMap<usize, usize> = HashMap::new();
    let mut agree = 0;
    for (&a, &t) in res.assignments.iter().zip(&truth) {
        if *map.entry(a).or_insert(t) == t {
            agree += 1;
        }
    }
    let distinct: std::collections::HashSet<_> = map.values().collect();
    Ok(if distinct.len() == 4 { agree as f64 / pts.len() as f64 } else { 0.0 })
}

/// A two-image 28×28 file and its label file, written byte by byte.
pub fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::new();
    for word in [0x0000_0803u32, 2, 28, 28] {
        images.extend_from_slice(&word.to_be_bytes());
    }
    for i in 0..2 * 28 * 28 {
        images.push(((i * 37 + 11) % 256) as u8);
    }
    let mut labels = Vec::new();
    for word in [0x0000_0801u32, 2] {
        labels.extend_from_slice(&word.to_be_bytes());
    }
    labels.extend_from_slice(&[7, 3]);
    (images, labels)
}

/// Parses and re-encodes the fixture; true when bytes and values survive.
pub fn idx_round_trip() -> Result<bool> {
    let (images, labels) = idx_fixture();
    let parsed_i = parse_idx(&images)?;
    let parsed_l = parse_idx(&labels)?;
    let values_ok = match (&parsed_i, &parsed_l) {
        (IdxData::Images(im), IdxData::Labels(l)) => {
            im.count() == 2
                && im.pixels(1)[0] == images[16 + 784] as f64 / 255.0
                && l == &[7, 3]
        }
        _ => false,
    };
    Ok(values_ok
        && encode_idx(&parsed_i) == images
        && encode_idx(&parsed_l) == labels
        && u32::from_be_bytes(images[..4].try_into().unwrap()) == IMAGES_MAGIC
        && u32::from_be_bytes(labels[..4].try_into().unwrap()) == LABELS_MAGIC)
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Desk-scale gradient tolerance.
pub const GRAD_TOL: f64 = 1e-4;

pub fn run(level: Level) -> Vec<CheckResult> {
    let full = level == Level::Full;
    let mut out = Vec::new();
    out.push(timed("op_gradients", || {
        let [mm, lstm, chain] = gradient_check_ops(1)?;
        Ok((
            mm <= 1e-6 && lstm <= 1e-5 && chain <= 1e-5,
            format!("max rel err matmul {mm:.2e}, lstm {lstm:.2e}, conv-lstm-linear {chain:.2e}"),
        ))
    }));
    out.push(timed("conv_adjoint", || {
        let e = adjoint_check(10, 2)?;
        Ok((e <= 1e-10, format!("max rel err {e:.2e}")))
    }));
    out.push(timed("objective_gradients", || {
        let (arch, n) = if full { (ArchConfig::default(), 200) } else { (tiny_arch(), 30) };
        let r = gradient_check_total(&arch, n, 3)?;
        Ok((
            r.max_rel_err <= GRAD_TOL,
            format!("{} coords, max rel err {:.2e} at {}", r.checked, r.max_rel_err, r.worst),
        ))
    }));
    out.push(timed("kl_monte_carlo", || {
        let (pairs, samples) = if full { (50, 100_000) } else { (5, 20_000) };
        let z = kl_monte_carlo(pairs, 16, samples, 0)?;
        let worst = z.iter().cloned().fold(0.0, f64::max);
        Ok((worst <= 3.0, format!("{pairs} pairs, worst |diff|/se {worst:.2}")))
    }));
    out.push(timed("elbo_below_iw_bound", || {
        let models = if full { 20 } else { 3 };
        let mut worst = f64::NEG_INFINITY;
        for s in 0..models {
            let (me, se, mi, si) = elbo_vs_iw(s, 64, 100)?;
            worst = worst.max((me - mi) / (se * se + si * si).sqrt());
        }
        Ok((worst <= 3.0, format!("{models} models, worst (elbo - iw)/se {worst:.2}")))
    }));
    out.push(timed("purity_brute_force", || {
        let bad = purity_mismatches(100, 5)?;
        Ok((bad == 0, format!("{bad} mismatches in 100 instances")))
    }));
    out.push(timed("lloyd_monotone", || {
        let rises = lloyd_increases(50, 6)?;
        Ok((rises == 0, format!("{rises} inertia increases")))
    }));
    out.push(timed("kmeans_blobs", || {
        let a = blob_recovery(7)?;
        Ok((a == 1.0, format!("agreement {a}")))
    }));
    out.push(timed("idx_round_trip", || {
        let ok = idx_round_trip()?;
        Ok((ok, "2-image fixture".into()))
    }));
    out
}
