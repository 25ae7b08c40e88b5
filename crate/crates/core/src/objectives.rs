//! Training objectives: the variational lower bound, multimodal-unimodal
//! coherence, cross-modality semantic contrastiveness, and their weighted sum.
//!
//! All three are maximized. Batch values are means over samples so the
//! weights do not depend on batch size.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{AudioBatch, MultimodalBatch};
use crate::error::{Error, Result};
use crate::gaussian::{kl_divergence_var, kl_to_standard_var, rbf_kernel_var, sample_reparam_var, GaussianVar, HALF_LN_2PI};
use crate::graph::{Graph, Var};
use crate::networks::{ModelKind, Modality, MultimodalPosteriors, PvaeModel, UnimodalPosteriors};
use crate::params::Bound;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveWeights {
    pub alpha_ch: f64,
    pub alpha_cm: f64,
    pub margin_t: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            alpha_ch: 0.1,
            alpha_cm: 10.0,
            margin_t: 0.5,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_ch", self.alpha_ch), ("alpha_cm", self.alpha_cm)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.margin_t.is_finite() {
            return Err(Error::InvalidArgument("margin_t must be finite".into()));
        }
        Ok(())
    }
}

/// Batch-mean value of every objective term.
///
/// Reconstruction terms are log-likelihoods; KL terms are reported as
/// non-negative divergences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub recon_audio: f64,
    pub recon_image: f64,
    pub kl_za: f64,
    pub kl_zi: f64,
    pub kl_zs: f64,
    pub coherence: f64,
    pub contrastive: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    pub fn elbo(&self) -> f64 {
        self.recon_audio + self.recon_image - self.kl_za - self.kl_zi - self.kl_zs
    }

    /// `elbo + alpha_ch * coherence + alpha_cm * contrastive`, evaluated in the
    /// same order the graph uses.
    pub fn combined(&self, w: &ObjectiveWeights) -> f64 {
        self.elbo() + w.alpha_ch * self.coherence + w.alpha_cm * self.contrastive
    }
}

/// One standard-normal draw per latent variable per sample, `[B, D]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboNoise {
    pub zs: Tensor,
    pub za: Option<Tensor>,
    pub zi: Option<Tensor>,
}

impl ElboNoise {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, model: &PvaeModel, batch: usize) -> Self {
        let arch = model.arch();
        let mut draw = |d: usize| {
            let data = (0..batch * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Tensor::from_parts(vec![batch, d], data)
        };
        let zs = draw(arch.latent_dim_s);
        let za = model.kind().has(Modality::Audio).then(|| draw(arch.latent_dim_a));
        let zi = model.kind().has(Modality::Image).then(|| draw(arch.latent_dim_i));
        Self { zs, za, zi }
    }

    /// All-zero noise: every sample equals its posterior mean.
    pub fn zeros(model: &PvaeModel, batch: usize) -> Self {
        let arch = model.arch();
        Self {
            zs: Tensor::zeros(&[batch, arch.latent_dim_s]),
            za: model.kind().has(Modality::Audio).then(|| Tensor::zeros(&[batch, arch.latent_dim_a])),
            zi: model.kind().has(Modality::Image).then(|| Tensor::zeros(&[batch, arch.latent_dim_i])),
        }
    }
}

/// A scalar objective on the graph plus its numeric breakdown.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveOutput {
    pub total: Var,
    pub breakdown: ObjectiveBreakdown,
}

struct ElboVars {
    recon_audio: Option<Var>,
    recon_image: Option<Var>,
    kl_za: Option<Var>,
    kl_zi: Option<Var>,
    kl_zs: Var,
}

fn check_batch(model: &PvaeModel, batch: &MultimodalBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for m in [Modality::Audio, Modality::Image] {
        if !model.kind().has(m) {
            continue;
        }
        let n = match m {
            Modality::Audio => batch.audio()?.batch_size(),
            Modality::Image => batch.image()?.rows(),
        };
        if n != batch.len() {
            return Err(Error::Misaligned(n, batch.len()));
        }
    }
    Ok(())
}

/// Unit-variance Gaussian log-likelihood of `target` under `mean`, summed over
/// valid entries and averaged over `batch`.
fn gaussian_recon(g: &mut Graph, mean: Var, target: Var, mask: Option<Tensor>, batch: usize) -> Result<Var> {
    let diff = g.sub(target, mean)?;
    let sq = g.mul(diff, diff)?;
    let valid = match &mask {
        Some(m) => m.data().iter().sum::<f64>(),
        None => g.value(target).len() as f64,
    };
    let sq = match mask {
        Some(m) => {
            let m = g.constant(m);
            g.mul(sq, m)?
        }
        None => sq,
    };
    let s = g.sum(sq)?;
    let ll = g.scale(s, -0.5 / batch as f64)?;
    g.add_scalar(ll, -valid * HALF_LN_2PI / batch as f64)
}

fn audio_recon(model: &PvaeModel, g: &mut Graph, p: &Bound, audio: &AudioBatch, z_a: Var, z_s: Var) -> Result<Var> {
    let mean = model.audio_decoder(g, p, z_a, z_s, audio.max_len())?;
    let target = g.constant(audio.frames.clone());
    let mask = audio.step_mask(audio.max_len() - 1).map(|_| audio.frame_mask());
    gaussian_recon(g, mean, target, mask, audio.batch_size())
}

fn image_recon(model: &PvaeModel, g: &mut Graph, p: &Bound, image: Var, z_i: Var, z_s: Var) -> Result<Var> {
    let mean = model.image_decoder(g, p, z_i, z_s)?;
    let b = g.shape(image)[0];
    gaussian_recon(g, mean, image, None, b)
}

fn mean_kl_standard(g: &mut Graph, q: GaussianVar) -> Result<Var> {
    let rows = kl_to_standard_var(g, q)?;
    g.mean(rows)
}

fn noise_var(g: &mut Graph, t: Option<&Tensor>, q: GaussianVar, what: &'static str) -> Result<Var> {
    let t = t.ok_or_else(|| Error::InvalidArgument(format!("missing noise for {what}")))?;
    if t.shape() != g.shape(q.mean) {
        return Err(Error::shape("elbo noise", t.shape(), g.shape(q.mean)));
    }
    Ok(g.constant(t.clone()))
}

fn elbo_vars(
    model: &PvaeModel,
    g: &mut Graph,
    p: &Bound,
    batch: &MultimodalBatch,
    image: Option<Var>,
    q: &MultimodalPosteriors,
    noise: &ElboNoise,
) -> Result<ElboVars> {
    let eps_s = noise_var(g, Some(&noise.zs), q.zs, "z^s")?;
    let z_s = sample_reparam_var(g, q.zs, eps_s)?;
    let (mut recon_audio, mut kl_za) = (None, None);
    if let Some(qa) = q.za {
        let eps = noise_var(g, noise.za.as_ref(), qa, "z^a")?;
        let z_a = sample_reparam_var(g, qa, eps)?;
        recon_audio = Some(audio_recon(model, g, p, batch.audio()?, z_a, z_s)?);
        kl_za = Some(mean_kl_standard(g, qa)?);
    }
    let (mut recon_image, mut kl_zi) = (None, None);
    if let Some(qi) = q.zi {
        let eps = noise_var(g, noise.zi.as_ref(), qi, "z^i")?;
        let z_i = sample_reparam_var(g, qi, eps)?;
        let image = image.ok_or(Error::MissingModality("image"))?;
        recon_image = Some(image_recon(model, g, p, image, z_i, z_s)?);
        kl_zi = Some(mean_kl_standard(g, qi)?);
    }
    let kl_zs = mean_kl_standard(g, q.zs)?;
    Ok(ElboVars {
        recon_audio,
        recon_image,
        kl_za,
        kl_zi,
        kl_zs,
    })
}

/// `recon_a + recon_i - kl_za - kl_zi - kl_zs` on the graph, in [`ObjectiveBreakdown::elbo`] order.
fn elbo_total(g: &mut Graph, e: &ElboVars) -> Result<Var> {
    let mut acc: Option<Var> = None;
    let mut add = |g: &mut Graph, v: Var, sign: f64| -> Result<()> {
        acc = Some(match (acc, sign > 0.0) {
            (None, true) => v,
            (None, false) => g.scale(v, -1.0)?,
            (Some(a), true) => g.add(a, v)?,
            (Some(a), false) => g.sub(a, v)?,
        });
        Ok(())
    };
    for (v, s) in [
        (e.recon_audio, 1.0),
        (e.recon_image, 1.0),
        (e.kl_za, -1.0),
        (e.kl_zi, -1.0),
        (Some(e.kl_zs), -1.0),
    ] {
        if let Some(v) = v {
            add(g, v, s)?;
        }
    }
    Ok(acc.expect("kl_zs always present"))
}

fn breakdown_of(g: &Graph, e: &ElboVars) -> ObjectiveBreakdown {
    let val = |v: Option<Var>| v.map_or(0.0, |v| g.scalar_value(v));
    ObjectiveBreakdown {
        recon_audio: val(e.recon_audio),
        recon_image: val(e.recon_image),
        kl_za: val(e.kl_za),
        kl_zi: val(e.kl_zi),
        kl_zs: g.scalar_value(e.kl_zs),
        ..ObjectiveBreakdown::default()
    }
}

fn image_input(g: &mut Graph, model: &PvaeModel, batch: &MultimodalBatch) -> Result<Option<Var>> {
    if model.kind().has(Modality::Image) {
        Ok(Some(g.constant(batch.image()?.clone())))
    } else {
        Ok(None)
    }
}

/// Single-sample reparameterized variational lower bound, batch mean.
pub fn elbo(model: &PvaeModel, g: &mut Graph, p: &Bound, batch: &MultimodalBatch, noise: &ElboNoise) -> Result<ObjectiveOutput> {
    check_batch(model, batch)?;
    let image = image_input(g, model, batch)?;
    let audio = if model.kind().has(Modality::Audio) { Some(batch.audio()?) } else { None };
    let q = model.multimodal_posteriors(g, p, audio, image)?;
    let e = elbo_vars(model, g, p, batch, image, &q, noise)?;
    let total = elbo_total(g, &e)?;
    let mut breakdown = breakdown_of(g, &e);
    breakdown.total = g.scalar_value(total);
    Ok(ObjectiveOutput { total, breakdown })
}

struct UnimodalPair {
    audio: UnimodalPosteriors,
    image: UnimodalPosteriors,
}

fn unimodal_pair(model: &PvaeModel, g: &mut Graph, p: &Bound, batch: &MultimodalBatch, image: Var) -> Result<UnimodalPair> {
    Ok(UnimodalPair {
        audio: model.unimodal_audio_posteriors(g, p, batch.audio()?)?,
        image: model.unimodal_image_posteriors(g, p, image)?,
    })
}

fn coherence_var(g: &mut Graph, q: &MultimodalPosteriors, r: &UnimodalPair) -> Result<Var> {
    let qa = q.za.expect("pvae posterior z^a");
    let qi = q.zi.expect("pvae posterior z^i");
    let terms = [
        kl_divergence_var(g, qa, r.audio.style)?,
        kl_divergence_var(g, q.zs, r.audio.zs)?,
        kl_divergence_var(g, qi, r.image.style)?,
        kl_divergence_var(g, q.zs, r.image.zs)?,
    ];
    let mut sum = terms[0];
    for &t in &terms[1..] {
        sum = g.add(sum, t)?;
    }
    let m = g.mean(sum)?;
    g.scale(m, -1.0)
}

fn contrastive_var(g: &mut Graph, pos: &UnimodalPair, neg: &UnimodalPair, margin: f64) -> Result<Var> {
    let (mu_a, mu_i) = (pos.audio.zs.mean, pos.image.zs.mean);
    let (neg_a, neg_i) = (neg.audio.zs.mean, neg.image.zs.mean);
    let hinge = |g: &mut Graph, anchor: Var, positive: Var, negative: Var| -> Result<Var> {
        let kp = rbf_kernel_var(g, anchor, positive)?;
        let kn = rbf_kernel_var(g, anchor, negative)?;
        let d = g.sub(kn, kp)?;
        let d = g.add_scalar(d, margin)?;
        g.relu(d)
    };
    let audio_anchor = hinge(g, mu_a, mu_i, neg_i)?;
    let image_anchor = hinge(g, mu_i, mu_a, neg_a)?;
    let s = g.add(audio_anchor, image_anchor)?;
    let m = g.mean(s)?;
    // -(1/M) with M = 2 modalities
    g.scale(m, -0.5)
}

fn zero_scalar(g: &mut Graph) -> Var {
    g.constant(Tensor::scalar(0.0))
}

/// Multimodal-unimodal coherence: `-Σ_m KL(q(z^m, z^s|X) ‖ r(z^m, z^s|x^m))`,
/// decomposed over the factorized posteriors. Zero for single-modality models.
pub fn coherence(model: &PvaeModel, g: &mut Graph, p: &Bound, batch: &MultimodalBatch) -> Result<Var> {
    check_batch(model, batch)?;
    if model.kind() != ModelKind::Pvae {
        return Ok(zero_scalar(g));
    }
    let image = g.constant(batch.image()?.clone());
    let q = model.multimodal_posteriors(g, p, Some(batch.audio()?), Some(image))?;
    let r = unimodal_pair(model, g, p, batch, image)?;
    coherence_var(g, &q, &r)
}

/// Cross-modality semantic contrastiveness with RBF similarity of unimodal
/// semantic means and margin `margin`. Zero for single-modality models.
pub fn contrastive(
    model: &PvaeModel,
    g: &mut Graph,
    p: &Bound,
    batch: &MultimodalBatch,
    negatives: &MultimodalBatch,
    margin: f64,
) -> Result<Var> {
    check_batch(model, batch)?;
    if model.kind() != ModelKind::Pvae {
        return Ok(zero_scalar(g));
    }
    check_batch(model, negatives)?;
    if negatives.len() != batch.len() {
        return Err(Error::Misaligned(batch.len(), negatives.len()));
    }
    let image = g.constant(batch.image()?.clone());
    let pos = unimodal_pair(model, g, p, batch, image)?;
    let neg_image = g.constant(negatives.image()?.clone());
    let neg = unimodal_pair(model, g, p, negatives, neg_image)?;
    contrastive_var(g, &pos, &neg, margin)
}

/// `L + alpha_ch * CH + alpha_cm * CM`, sharing encoder passes between terms.
///
/// Terms whose weight is zero are skipped entirely and reported as 0.
pub fn total_objective(
    model: &PvaeModel,
    g: &mut Graph,
    p: &Bound,
    batch: &MultimodalBatch,
    negatives: &MultimodalBatch,
    weights: &ObjectiveWeights,
    noise: &ElboNoise,
) -> Result<ObjectiveOutput> {
    weights.validate()?;
    check_batch(model, batch)?;
    let image = image_input(g, model, batch)?;
    let audio = if model.kind().has(Modality::Audio) { Some(batch.audio()?) } else { None };
    let q = model.multimodal_posteriors(g, p, audio, image)?;
    let e = elbo_vars(model, g, p, batch, image, &q, noise)?;
    let mut total = elbo_total(g, &e)?;
    let mut breakdown = breakdown_of(g, &e);

    let pvae = model.kind() == ModelKind::Pvae;
    if pvae && (weights.alpha_ch > 0.0 || weights.alpha_cm > 0.0) {
        let image = image.expect("pvae has images");
        let r = unimodal_pair(model, g, p, batch, image)?;
        if weights.alpha_ch > 0.0 {
            let ch = coherence_var(g, &q, &r)?;
            breakdown.coherence = g.scalar_value(ch);
            let w = g.scale(ch, weights.alpha_ch)?;
            total = g.add(total, w)?;
        }
        if weights.alpha_cm > 0.0 {
            check_batch(model, negatives)?;
            if negatives.len() != batch.len() {
                return Err(Error::Misaligned(batch.len(), negatives.len()));
            }
            let neg_image = g.constant(negatives.image()?.clone());
            let neg = unimodal_pair(model, g, p, negatives, neg_image)?;
            let cm = contrastive_var(g, &r, &neg, weights.margin_t)?;
            breakdown.contrastive = g.scalar_value(cm);
            let w = g.scale(cm, weights.alpha_cm)?;
            total = g.add(total, w)?;
        }
    }
    breakdown.total = g.scalar_value(total);
    Ok(ObjectiveOutput { total, breakdown })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::ArchConfig;
    use crate::params::ParamGroup;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            latent_dim_s: 3,
            latent_dim_a: 2,
            latent_dim_i: 2,
            lstm_cells: 4,
            preenc_out: 5,
            audio_feat_dim: 3,
            fc_units: (6, 7 * 7 * 2),
            ..ArchConfig::default()
        }
    }

    fn batch(b: usize, shift: f64) -> MultimodalBatch {
        let f = 3;
        let seqs: Vec<Vec<f64>> = (0..b)
            .map(|i| (0..(3 + i) * f).map(|k| ((k + i) as f64 * 0.31 + shift).sin()).collect())
            .collect();
        let refs: Vec<(&[f64], usize)> = seqs.iter().enumerate().map(|(i, s)| (&s[..], 3 + i)).collect();
        let image = (0..b * 784).map(|k| ((k as f64) * 0.013 + shift).sin().abs()).collect();
        MultimodalBatch {
            audio: Some(AudioBatch::from_sequences(&refs, f).unwrap()),
            image: Some(Tensor::new(&[b, 1, 28, 28], image).unwrap()),
            identities: (0..b as u8).collect(),
        }
    }

    fn model(kind: ModelKind) -> PvaeModel {
        PvaeModel::new(tiny_arch(), kind, 3).unwrap()
    }

    fn zero_params(m: &mut PvaeModel) {
        for p in m.params_mut().iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn breakdown_identity_holds() {
        let m = model(ModelKind::Pvae);
        let (x, neg) = (batch(3, 0.0), batch(3, 1.0));
        let noise = ElboNoise::sample(&mut ChaCha8Rng::seed_from_u64(0), &m, 3);
        let mut g = Graph::new();
        let p = m.params().bind(&mut g);
        let w = ObjectiveWeights::default();
        let out = total_objective(&m, &mut g, &p, &x, &neg, &w, &noise).unwrap();
        let b = out.breakdown;
        assert!((b.combined(&w) - b.total).abs() <= 1e-12);
        assert_eq!(g.scalar_value(out.total), b.total);
        assert!(b.coherence <= 0.0 && b.contrastive <= 0.0 && b.contrastive >= -1.5);
        assert!(b.kl_za >= 0.0 && b.kl_zi >= 0.0 && b.kl_zs >= 0.0);
        assert!(b.recon_audio + b.recon_image >= b.elbo());
    }

    #[test]
    fn zero_weights_give_elbo() {
        let m = model(ModelKind::Pvae);
        let (x, neg) = (batch(2, 0.0), batch(2, 1.0));
        let noise = ElboNoise::sample(&mut ChaCha8Rng::seed_from_u64(1), &m, 2);
        let w = ObjectiveWeights {
            alpha_ch: 0.0,
            alpha_cm: 0.0,
            margin_t: 0.5,
        };
        let mut g = Graph::new();
        let p = m.params().bind(&mut g);
        let t = total_objective(&m, &mut g, &p, &x, &neg, &w, &noise).unwrap().breakdown;
        let mut g = Graph::new();
        let p = m.params().bind(&mut g);
        let e = elbo(&m, &mut g, &p, &x, &noise).unwrap().breakdown;
        assert_eq!(t, e);
        assert_eq!(ObjectiveWeights::default().alpha_ch, 0.1);
        assert_eq!(ObjectiveWeights::default().alpha_cm, 10.0);
    }

    #[test]
    fn prior_posteriors_have_zero_kl_and_coherence() {
        let mut m = model(ModelKind::Pvae);
        zero_params(&mut m);
        let x = batch(2, 0.0);
        let mut g = Graph::new();
        let p = m.params().bind(&mut g);
        let noise = ElboNoise::sample(&mut ChaCha8Rng::seed_from_u64(2), &m, 2);
        let b = elbo(&m, &mut g, &p, &x, &noise).unwrap().breakdown;
        assert_eq!((b.kl_za, b.kl_zi, b.kl_zs), (0.0, 0.0, 0.0));
        assert_eq!(b.total, b.recon_audio + b.recon_image);
        let ch = coherence(&m, &mut g, &p, &x).unwrap();
        assert_eq!(g.scalar_value(ch), 0.0);
    }

    #[test]
    fn missing_modality_is_an_error() {
        let m = model(ModelKind::Pvae);
        let mut x = batch(2, 0.0);
        x.image = None;
        let mut g = Graph::new();
        let p = m.params().bind(&mut g);
        let noise = ElboNoise::zeros(&m, 2);
        assert!(matches!(elbo(&m, &mut g, &p, &x, &noise), Err(Error::MissingModality("image"))));
    }

    fn pair(g: &mut Graph, a: &[f64], i: &[f64]) -> UnimodalPair {
        let mut post = |mean: &[f64]| {
            let m = g.constant(Tensor::matrix(1, mean.len(), mean.to_vec()).unwrap());
            let lv = g.constant(Tensor::zeros(&[1, mean.len()]));
            let q = GaussianVar { mean: m, log_var: lv };
            UnimodalPosteriors { zs: q, style: q }
        };
        UnimodalPair {
            audio: post(a),
            image: post(i),
        }
    }

    #[test]
    fn contrastive_hand_values() {
        let mut g = Graph::new();
        let far = [10.0, 0.0];
        let pos = pair(&mut g, &[0.0, 0.0], &[0.0, 0.0]);
        let neg = pair(&mut g, &far, &far);
        let v = contrastive_var(&mut g, &pos, &neg, 0.5).unwrap();
        assert_eq!(g.scalar_value(v), 0.0);

        // ‖d‖² = -2 ln 0.9 gives kernel 0.9 for both positive and negative.
        let r = (-2.0 * 0.9f64.ln()).sqrt();
        let pos = pair(&mut g, &[0.0, 0.0], &[r, 0.0]);
        let neg = pair(&mut g, &[2.0 * r, 0.0], &[0.0, -r]);
        let v = contrastive_var(&mut g, &pos, &neg, 0.5).unwrap();
        assert!((g.scalar_value(v) + 0.5).abs() < 1e-12);

        let pos = pair(&mut g, &[0.0, 0.0], &[far[0], 0.0]);
        let neg = pair(&mut g, &[0.0, 0.0], &[0.0, 0.0]);
        let v = contrastive_var(&mut g, &pos, &neg, 0.5).unwrap();
        assert!(g.scalar_value(v) >= -1.5);
    }

    fn grad_norm_by_group(m: &PvaeModel, f: impl Fn(&mut Graph, &Bound) -> Var) -> [f64; 3] {
        let mut g = Graph::new();
        let p = m.params().bind(&mut g);
        let loss = f(&mut g, &p);
        let grads = g.backward(loss).unwrap();
        let mut out = [0.0; 3];
        for id in m.params().ids() {
            let slot = match m.params().get(id).group {
                ParamGroup::Theta => 0,
                ParamGroup::Phi => 1,
                ParamGroup::Psi => 2,
            };
            out[slot] += grads.get(p[id]).unwrap().data().iter().map(|v| v * v).sum::<f64>();
        }
        out
    }

    #[test]
    fn gradient_routing() {
        let m = model(ModelKind::Pvae);
        let (x, neg) = (batch(3, 0.0), batch(3, 2.0));
        let cm = grad_norm_by_group(&m, |g, p| contrastive(&m, g, p, &x, &neg, 0.5).unwrap());
        assert_eq!(cm[0], 0.0);
        assert_eq!(cm[1], 0.0);
        assert!(cm[2] > 0.0);
        let ch = grad_norm_by_group(&m, |g, p| coherence(&m, g, p, &x).unwrap());
        assert_eq!(ch[0], 0.0);
        assert!(ch[1] > 0.0 && ch[2] > 0.0);
    }

    #[test]
    fn baselines_have_no_cross_modal_terms() {
        for kind in [ModelKind::VaeAudio, ModelKind::VaeImage] {
            let m = model(kind);
            let x = batch(2, 0.0);
            let noise = ElboNoise::sample(&mut ChaCha8Rng::seed_from_u64(4), &m, 2);
            let mut g = Graph::new();
            let p = m.params().bind(&mut g);
            let b = total_objective(&m, &mut g, &p, &x, &x, &ObjectiveWeights::default(), &noise)
                .unwrap()
                .breakdown;
            assert_eq!((b.coherence, b.contrastive), (0.0, 0.0));
            assert_eq!(b.total, b.elbo());
        }
    }
}
