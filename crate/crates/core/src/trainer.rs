//! Adam training of all three parameter groups against the combined objective.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{negative_for, pair_epoch, Dataset, NegativeMode};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::networks::PvaeModel;
use crate::objectives::{total_objective, ElboNoise, ObjectiveBreakdown, ObjectiveWeights};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: ObjectiveWeights,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 saves only the final one.
    pub checkpoint_every: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub negative_mode: NegativeMode,
    /// Record elapsed seconds in the log; off by default so logs are
    /// byte-reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.95,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            epochs: 60,
            weights: ObjectiveWeights::default(),
            seed: 0,
            checkpoint_every: 0,
            grad_clip: Some(5.0),
            negative_mode: NegativeMode::LabelFiltered,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    /// The published settings: batch 256 for 400 epochs.
    pub fn paper() -> Self {
        Self {
            batch_size: 256,
            epochs: 400,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        self.weights.validate()
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam descent step on `grads` (gradients of the loss,
/// i.e. the negated objective). Parameters and moments are stored at 32-bit
/// precision afterwards.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape("adam_step", &[params.len()], &[grads.len()]));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::shape("adam_step", p.value.shape(), g.shape()));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, (w, &g)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[k] = round(b1 * m[k] + (1.0 - b1) * g);
            v[k] = round(b2 * v[k] + (1.0 - b2) * g * g);
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *w = round(*w - config.lr * m_hat / (v_hat.sqrt() + config.eps));
        }
    }
    Ok(())
}

fn round(v: f64) -> f64 {
    v as f32 as f64
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Per-epoch means of the objective terms, weighted by batch size.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub breakdown: ObjectiveBreakdown,
    pub wall_time_s: f64,
}

pub const LOG_HEADER: &str =
    "epoch,recon_audio,recon_image,kl_za,kl_zi,kl_zs,coherence,contrastive,total,wall_time_s";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let b = &self.breakdown;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            b.recon_audio,
            b.recon_image,
            b.kl_za,
            b.kl_zi,
            b.kl_zs,
            b.coherence,
            b.contrastive,
            b.total,
            self.wall_time_s
        )
    }
}

pub fn log_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for l in logs {
        let _ = writeln!(out, "{}", l.csv_row());
    }
    out
}

/// Where a training run currently stands. `epoch` counts completed epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub adam: AdamState,
}

/// The generator used for epoch `epoch` (0-based): pairing, shuffling,
/// negatives and reparameterization noise all draw from it, so a run can
/// resume from `(seed, epoch)` alone.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

pub struct Trainer {
    pub model: PvaeModel,
    pub config: TrainConfig,
    pub state: TrainState,
    out_dir: Option<PathBuf>,
    started: Instant,
}

impl Trainer {
    /// Parameters are rounded to 32-bit precision up front so the run is
    /// exactly representable by its checkpoints.
    pub fn new(mut model: PvaeModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        model.params_mut().round_to_f32();
        let adam = AdamState::new(model.params());
        Ok(Self {
            model,
            config,
            state: TrainState { epoch: 0, adam },
            out_dir: None,
            started: Instant::now(),
        })
    }

    /// Continues from a checkpoint; `epochs` in `config` is the new total.
    pub fn resume(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.seed != ckpt.train.seed {
            return Err(Error::ConfigMismatch(format!(
                "seed {} vs checkpoint seed {}",
                config.seed, ckpt.train.seed
            )));
        }
        let (model, state) = ckpt.into_parts()?;
        Ok(Self {
            model,
            config,
            state,
            out_dir: None,
            started: Instant::now(),
        })
    }

    /// Checkpoints and failed-batch reports go to `dir`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.model, &self.config, &self.state)
    }

    fn dump_failed_batch(&self, epoch: usize, batch: usize, pairs: &[(usize, usize)], negatives: &[(usize, usize)]) {
        let Some(dir) = &self.out_dir else { return };
        let report = serde_json::json!({
            "epoch": epoch,
            "batch": batch,
            "seed": self.config.seed,
            "pairs": pairs,
            "negatives": negatives,
        });
        let _ = fs::create_dir_all(dir);
        let _ = fs::write(dir.join("nonfinite_batch.json"), report.to_string());
    }

    /// Gradients of the negated objective for one batch, plus its breakdown.
    pub fn batch_gradients<R: Rng + ?Sized>(
        &self,
        dataset: &Dataset,
        pairs: &[(usize, usize)],
        rng: &mut R,
    ) -> Result<(Vec<Tensor>, ObjectiveBreakdown, Vec<(usize, usize)>)> {
        let negatives = negative_for(pairs, dataset, self.config.negative_mode, rng)?;
        let noise = ElboNoise::sample(rng, &self.model, pairs.len());
        let x = dataset.batch(pairs)?;
        let x_neg = dataset.batch(&negatives)?;
        let mut g = Graph::new();
        let p = self.model.params().bind(&mut g);
        let out = total_objective(&self.model, &mut g, &p, &x, &x_neg, &self.config.weights, &noise)?;
        let loss = g.scale(out.total, -1.0)?;
        let mut grads = g.backward(loss)?;
        let grads = self
            .model
            .params()
            .ids()
            .map(|id| grads.take(p[id]).expect("parameters are variables"))
            .collect();
        Ok((grads, out.breakdown, negatives))
    }

    /// Runs the next epoch and returns its log entry.
    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<EpochLog> {
        let epoch = self.state.epoch;
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mut pairs = pair_epoch(dataset, rng.random())?;
        pairs.shuffle(&mut rng);
        let mut sum = ObjectiveBreakdown::default();
        for (bi, chunk) in pairs.chunks(self.config.batch_size).enumerate() {
            let result = self.batch_gradients(dataset, chunk, &mut rng);
            let (mut grads, b, negatives) = match result {
                Err(Error::NonFinite { .. }) => {
                    self.dump_failed_batch(epoch, bi, chunk, &[]);
                    return Err(Error::NonFiniteLoss { epoch, batch: bi });
                }
                r => r?,
            };
            if !b.total.is_finite() {
                self.dump_failed_batch(epoch, bi, chunk, &negatives);
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            if let Some(c) = self.config.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            adam_step(self.model.params_mut(), &grads, &mut self.state.adam, &self.config)?;
            let w = chunk.len() as f64;
            sum.recon_audio += w * b.recon_audio;
            sum.recon_image += w * b.recon_image;
            sum.kl_za += w * b.kl_za;
            sum.kl_zi += w * b.kl_zi;
            sum.kl_zs += w * b.kl_zs;
            sum.coherence += w * b.coherence;
            sum.contrastive += w * b.contrastive;
            sum.total += w * b.total;
        }
        let n = pairs.len() as f64;
        let mean = ObjectiveBreakdown {
            recon_audio: sum.recon_audio / n,
            recon_image: sum.recon_image / n,
            kl_za: sum.kl_za / n,
            kl_zi: sum.kl_zi / n,
            kl_zs: sum.kl_zs / n,
            coherence: sum.coherence / n,
            contrastive: sum.contrastive / n,
            total: sum.total / n,
        };
        self.state.epoch += 1;
        Ok(EpochLog {
            epoch: self.state.epoch,
            breakdown: mean,
            wall_time_s: if self.config.log_wall_time {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })
    }

    /// Trains until `config.epochs` epochs are complete, saving checkpoints
    /// at the configured cadence when an output directory is set.
    pub fn fit(&mut self, dataset: &Dataset) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.state.epoch < self.config.epochs {
            logs.push(self.run_epoch(dataset)?);
            let every = self.config.checkpoint_every;
            if let (Some(dir), true) = (&self.out_dir, every > 0 && self.state.epoch % every == 0) {
                self.checkpoint()
                    .save(&dir.join(format!("checkpoint_epoch{:04}.ckpt", self.state.epoch)))?;
            }
        }
        Ok(logs)
    }
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn fit(model: PvaeModel, dataset: &Dataset, config: &TrainConfig) -> Result<(PvaeModel, Vec<EpochLog>, Checkpoint)> {
    let mut t = Trainer::new(model, config.clone())?;
    let logs = t.fit(dataset)?;
    let ckpt = t.checkpoint();
    Ok((t.model, logs, ckpt))
}

/// Keeps the rows of an existing log with `epoch <= upto`, so a resumed run
/// appends to its own history.
pub fn truncate_log(path: &Path, upto: usize) -> Result<Vec<String>> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e <= upto))
        .map(str::to_owned)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{GeneratorConfig, Split};
    use crate::networks::{ArchConfig, ModelKind};
    use crate::params::ParamGroup;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", ParamGroup::Theta, Tensor::vector(vec![v]));
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        for g in [3.0, -0.02] {
            let mut p = scalar_store(0.5);
            let mut st = AdamState::new(&p);
            adam_step(&mut p, &[Tensor::vector(vec![g])], &mut st, &cfg).unwrap();
            let moved = 0.5 - p.iter().next().unwrap().value.data()[0];
            let expect = cfg.lr * g.abs() / (g.abs() + cfg.eps) * g.signum();
            assert!((moved - expect).abs() < 1e-7, "{moved} vs {expect}");
        }
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let cfg = TrainConfig::default();
        let mut p = scalar_store(0.25);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::vector(vec![1.0])], &mut st, &cfg).unwrap();
        let before = p.clone();
        let (m, v) = (st.m[0].data()[0], st.v[0].data()[0]);
        let mut zero_cfg = cfg.clone();
        zero_cfg.lr = 0.0;
        adam_step(&mut p, &[Tensor::vector(vec![0.0])], &mut st, &zero_cfg).unwrap();
        assert_eq!(p, before);
        assert!(st.m[0].data()[0] < m && st.v[0].data()[0] < v);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_store(0.0);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &[Tensor::vector(vec![f64::NAN])], &mut st, &TrainConfig::default());
        assert!(matches!(err, Err(Error::NonFiniteGradient(n)) if n == "w"));
        let err = adam_step(&mut p, &[Tensor::vector(vec![1.0, 2.0])], &mut st, &TrainConfig::default());
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut g = vec![Tensor::vector(vec![3.0, 0.0]), Tensor::vector(vec![4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            beta1: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(TrainConfig::paper().batch_size, 256);
    }

    fn tiny() -> (PvaeModel, Dataset) {
        let arch = ArchConfig {
            latent_dim_s: 3,
            latent_dim_a: 2,
            latent_dim_i: 2,
            lstm_cells: 4,
            preenc_out: 5,
            fc_units: (6, 7 * 7 * 2),
            ..ArchConfig::default()
        };
        let data = GeneratorConfig {
            n_train: 20,
            n_test: 10,
            ..GeneratorConfig::default()
        };
        (
            PvaeModel::new(arch, ModelKind::Pvae, 1).unwrap(),
            Dataset::generate(&data, Split::Train, 2).unwrap(),
        )
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let (m, d) = tiny();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut init = m.params().clone();
        init.round_to_f32();
        let (trained, logs, _) = fit(m, &d, &cfg).unwrap();
        assert_eq!(trained.params(), &init);
        assert_eq!(logs.len(), 2);
        for l in &logs {
            let b = &l.breakdown;
            assert!((b.combined(&cfg.weights) - b.total).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_runs_are_identical() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (m, d) = tiny();
        let (a, la, _) = fit(m.clone(), &d, &cfg).unwrap();
        let (b, lb, _) = fit(m, &d, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(log_csv(&la), log_csv(&lb));
    }

    #[test]
    fn contrastive_only_step_leaves_theta_and_phi() {
        let (m, d) = tiny();
        let cfg = TrainConfig {
            weights: ObjectiveWeights {
                alpha_ch: 0.0,
                alpha_cm: 1.0,
                margin_t: 0.5,
            },
            ..TrainConfig::default()
        };
        let t = Trainer::new(m, cfg).unwrap();
        let pairs = pair_epoch(&d, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let negatives = negative_for(&pairs[..6], &d, NegativeMode::LabelFiltered, &mut rng).unwrap();
        let mut g = Graph::new();
        let p = t.model.params().bind(&mut g);
        let cm = crate::objectives::contrastive(
            &t.model,
            &mut g,
            &p,
            &d.batch(&pairs[..6]).unwrap(),
            &d.batch(&negatives).unwrap(),
            0.5,
        )
        .unwrap();
        let loss = g.scale(cm, -1.0).unwrap();
        let mut grads = g.backward(loss).unwrap();
        let grads: Vec<Tensor> = t.model.params().ids().map(|id| grads.take(p[id]).unwrap()).collect();
        let mut params = t.model.params().clone();
        let mut st = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut st, &t.config).unwrap();
        for (after, before) in params.iter().zip(t.model.params().iter()) {
            if after.group != ParamGroup::Psi {
                assert_eq!(after.value, before.value, "{}", after.name);
            }
        }
    }
}
