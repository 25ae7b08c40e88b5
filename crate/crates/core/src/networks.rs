//! The partitioned VAE: modality pre-encoders, multimodal (φ) and unimodal (ψ)
//! inference heads, and the audio/image decoders (θ).
//!
//! Every forward function records onto a caller-supplied [`Graph`] using
//! parameters bound with [`ParamStore::bind`]; the `infer_*` / `decode_*`
//! methods without a graph argument are value-level conveniences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AudioBatch, MultimodalBatch};
use crate::error::{Error, Result};
use crate::gaussian::{DiagGaussian, GaussianVar};
use crate::graph::{split_cell, Graph, Var};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Image,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Image => "image",
        }
    }
}

/// Which model family: the full two-modality PVAE or a single-modality VAE
/// baseline (the same architecture with one modality).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "pvae")]
    Pvae,
    #[serde(rename = "vae-sp")]
    VaeAudio,
    #[serde(rename = "vae-im")]
    VaeImage,
}

impl ModelKind {
    pub fn has(self, m: Modality) -> bool {
        matches!(
            (self, m),
            (ModelKind::Pvae, _) | (ModelKind::VaeAudio, Modality::Audio) | (ModelKind::VaeImage, Modality::Image)
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pvae => "pvae",
            ModelKind::VaeAudio => "vae-sp",
            ModelKind::VaeImage => "vae-im",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub latent_dim_s: usize,
    pub latent_dim_a: usize,
    pub latent_dim_i: usize,
    pub lstm_cells: usize,
    pub preenc_out: usize,
    pub image_side: usize,
    pub audio_feat_dim: usize,
    pub conv_channels: (usize, usize),
    pub deconv_channels: (usize, usize),
    pub fc_units: (usize, usize),
}

impl Default for ArchConfig {
    /// Desk-scale sizes.
    fn default() -> Self {
        Self {
            latent_dim_s: 16,
            latent_dim_a: 16,
            latent_dim_i: 16,
            lstm_cells: 32,
            preenc_out: 64,
            image_side: 28,
            audio_feat_dim: 8,
            conv_channels: (4, 8),
            deconv_channels: (8, 1),
            fc_units: (64, 7 * 7 * 16),
        }
    }
}

impl ArchConfig {
    /// The published sizes: 32-d latents, 512-unit LSTMs and fully connected layers, 80 FBank channels.
    pub fn paper() -> Self {
        Self {
            latent_dim_s: 32,
            latent_dim_a: 32,
            latent_dim_i: 32,
            lstm_cells: 512,
            preenc_out: 512,
            image_side: 28,
            audio_feat_dim: 80,
            conv_channels: (4, 8),
            deconv_channels: (8, 1),
            fc_units: (512, 7 * 7 * 16),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim_s", self.latent_dim_s),
            ("latent_dim_a", self.latent_dim_a),
            ("latent_dim_i", self.latent_dim_i),
            ("lstm_cells", self.lstm_cells),
            ("preenc_out", self.preenc_out),
            ("audio_feat_dim", self.audio_feat_dim),
            ("conv_channels.0", self.conv_channels.0),
            ("conv_channels.1", self.conv_channels.1),
            ("deconv_channels.0", self.deconv_channels.0),
            ("fc_units.0", self.fc_units.0),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("arch.{name} must be positive")));
        }
        if self.image_side == 0 || self.image_side % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "arch.image_side {} must halve twice exactly",
                self.image_side
            )));
        }
        if self.deconv_channels.1 != 1 {
            return Err(Error::InvalidArgument("arch.deconv_channels.1 must be 1 (grayscale output)".into()));
        }
        let q = self.quarter_area();
        if self.fc_units.1 == 0 || self.fc_units.1 % q != 0 {
            return Err(Error::InvalidArgument(format!(
                "arch.fc_units.1 {} must be a multiple of {q} to reshape onto the quarter-size grid",
                self.fc_units.1
            )));
        }
        Ok(())
    }

    fn quarter(&self) -> usize {
        self.image_side / 4
    }

    fn quarter_area(&self) -> usize {
        self.quarter() * self.quarter()
    }

    /// Channels of the decoder tensor reshaped from the second fully connected layer.
    pub fn decoder_channels(&self) -> usize {
        self.fc_units.1 / self.quarter_area()
    }

    pub fn image_pixels(&self) -> usize {
        self.image_side * self.image_side
    }

    pub fn latent_dim(&self, which: LatentKind) -> usize {
        match which {
            LatentKind::Semantic => self.latent_dim_s,
            LatentKind::AudioStyle => self.latent_dim_a,
            LatentKind::ImageStyle => self.latent_dim_i,
        }
    }
}

/// The three latent variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LatentKind {
    #[serde(rename = "zs")]
    Semantic,
    #[serde(rename = "za")]
    AudioStyle,
    #[serde(rename = "zi")]
    ImageStyle,
}

impl LatentKind {
    pub fn name(self) -> &'static str {
        match self {
            LatentKind::Semantic => "zs",
            LatentKind::AudioStyle => "za",
            LatentKind::ImageStyle => "zi",
        }
    }

    pub fn style_of(m: Modality) -> Self {
        match m {
            Modality::Audio => LatentKind::AudioStyle,
            Modality::Image => LatentKind::ImageStyle,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct LstmIds {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct LinearIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct ImagePreIds {
    conv1_k: ParamId,
    conv1_b: ParamId,
    conv2_k: ParamId,
    conv2_b: ParamId,
    fc: LinearIds,
}

#[derive(Clone, Copy, Debug)]
struct ImageDecoderIds {
    fc1: LinearIds,
    fc2: LinearIds,
    deconv1_k: ParamId,
    deconv1_b: ParamId,
    deconv2_k: ParamId,
    deconv2_b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct AudioDecoderIds {
    lstm: LstmIds,
    out: LinearIds,
}

/// An inference network: pre-encoders feeding linear Gaussian heads.
#[derive(Clone, Copy, Debug)]
struct EncoderIds {
    audio: Option<LstmIds>,
    image: Option<ImagePreIds>,
    head_s: LinearIds,
    head_a: Option<LinearIds>,
    head_i: Option<LinearIds>,
}

#[derive(Clone, Debug)]
struct Layout {
    multimodal: EncoderIds,
    unimodal_audio: Option<EncoderIds>,
    unimodal_image: Option<EncoderIds>,
    dec_audio: Option<AudioDecoderIds>,
    dec_image: Option<ImageDecoderIds>,
}

/// Posteriors of the multimodal inference network. Style posteriors are
/// present only for the modalities the model covers.
#[derive(Clone, Copy, Debug)]
pub struct MultimodalPosteriors {
    pub zs: GaussianVar,
    pub za: Option<GaussianVar>,
    pub zi: Option<GaussianVar>,
}

/// Posteriors of a unimodal inference network: semantic plus own style.
#[derive(Clone, Copy, Debug)]
pub struct UnimodalPosteriors {
    pub zs: GaussianVar,
    pub style: GaussianVar,
}

/// Value-level batch of diagonal Gaussians, `[B, D]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorBatch {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl PosteriorBatch {
    fn read(g: &Graph, q: GaussianVar) -> Self {
        Self {
            mean: g.value(q.mean).clone(),
            log_var: g.value(q.log_var).clone(),
        }
    }

    pub fn batch(&self) -> usize {
        self.mean.rows()
    }

    pub fn dim(&self) -> usize {
        self.mean.last_dim()
    }

    pub fn row(&self, i: usize) -> DiagGaussian {
        let d = self.dim();
        DiagGaussian {
            mean: self.mean.data()[i * d..(i + 1) * d].to_vec(),
            log_var: self.log_var.data()[i * d..(i + 1) * d].to_vec(),
        }
    }

    pub fn mean_row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.mean.data()[i * d..(i + 1) * d]
    }
}

/// A partitioned VAE: parameters θ, φ, ψ plus architecture.
#[derive(Clone, Debug)]
pub struct PvaeModel {
    arch: ArchConfig,
    kind: ModelKind,
    params: ParamStore,
    layout: Layout,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = (1.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    fn linear(&mut self, name: &str, group: ParamGroup, fan_in: usize, out: usize) -> LinearIds {
        let w = self.uniform(&[fan_in, out], fan_in);
        LinearIds {
            w: self.store.add(format!("{name}.w"), group, w),
            b: self.store.add(format!("{name}.b"), group, Tensor::zeros(&[out])),
        }
    }

    fn lstm(&mut self, name: &str, group: ParamGroup, input: usize, cells: usize) -> LstmIds {
        let w_ih = self.uniform(&[input, 4 * cells], input);
        let w_hh = self.uniform(&[cells, 4 * cells], cells);
        let mut bias = Tensor::zeros(&[4 * cells]);
        bias.data_mut()[cells..2 * cells].iter_mut().for_each(|b| *b = 1.0);
        LstmIds {
            w_ih: self.store.add(format!("{name}.w_ih"), group, w_ih),
            w_hh: self.store.add(format!("{name}.w_hh"), group, w_hh),
            bias: self.store.add(format!("{name}.bias"), group, bias),
        }
    }

    fn image_pre(&mut self, name: &str, group: ParamGroup, arch: &ArchConfig) -> ImagePreIds {
        let (c1, c2) = arch.conv_channels;
        let k1 = self.uniform(&[c1, 1, 4, 4], 16);
        let k2 = self.uniform(&[c2, c1, 4, 4], c1 * 16);
        let flat = c2 * arch.quarter_area();
        ImagePreIds {
            conv1_k: self.store.add(format!("{name}.conv1.k"), group, k1),
            conv1_b: self.store.add(format!("{name}.conv1.b"), group, Tensor::zeros(&[c1])),
            conv2_k: self.store.add(format!("{name}.conv2.k"), group, k2),
            conv2_b: self.store.add(format!("{name}.conv2.b"), group, Tensor::zeros(&[c2])),
            fc: self.linear(&format!("{name}.fc"), group, flat, arch.preenc_out),
        }
    }

    fn audio_decoder(&mut self, arch: &ArchConfig) -> AudioDecoderIds {
        let input = arch.latent_dim_s + arch.latent_dim_a;
        AudioDecoderIds {
            lstm: self.lstm("theta.audio.lstm", ParamGroup::Theta, input, arch.lstm_cells),
            out: self.linear("theta.audio.out", ParamGroup::Theta, arch.lstm_cells, arch.audio_feat_dim),
        }
    }

    fn image_decoder(&mut self, arch: &ArchConfig) -> ImageDecoderIds {
        let t = ParamGroup::Theta;
        let input = arch.latent_dim_s + arch.latent_dim_i;
        let fc1 = self.linear("theta.image.fc1", t, input, arch.fc_units.0);
        let fc2 = self.linear("theta.image.fc2", t, arch.fc_units.0, arch.fc_units.1);
        let (d1, d2) = arch.deconv_channels;
        let c0 = arch.decoder_channels();
        // Each output pixel of a stride-2 4x4 transposed conv sees 2x2 taps per input channel.
        let k1 = self.uniform(&[c0, d1, 4, 4], c0 * 4);
        let k2 = self.uniform(&[d1, d2, 4, 4], d1 * 4);
        ImageDecoderIds {
            fc1,
            fc2,
            deconv1_k: self.store.add("theta.image.deconv1.k", t, k1),
            deconv1_b: self.store.add("theta.image.deconv1.b", t, Tensor::zeros(&[d1])),
            deconv2_k: self.store.add("theta.image.deconv2.k", t, k2),
            deconv2_b: self.store.add("theta.image.deconv2.b", t, Tensor::zeros(&[d2])),
        }
    }

    fn head(&mut self, name: &str, group: ParamGroup, input: usize, latent: usize) -> LinearIds {
        self.linear(name, group, input, 2 * latent)
    }
}

impl PvaeModel {
    /// A freshly initialized model; parameters depend only on `(arch, kind, seed)`.
    pub fn new(arch: ArchConfig, kind: ModelKind, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let has_a = kind.has(Modality::Audio);
        let has_i = kind.has(Modality::Image);
        let (phi, psi) = (ParamGroup::Phi, ParamGroup::Psi);

        let dec_audio = has_a.then(|| b.audio_decoder(&arch));
        let dec_image = has_i.then(|| b.image_decoder(&arch));

        let mm_audio = has_a.then(|| b.lstm("phi.audio.lstm", phi, arch.audio_feat_dim, arch.lstm_cells));
        let mm_image = has_i.then(|| b.image_pre("phi.image", phi, &arch));
        let summary = if has_a { arch.lstm_cells } else { 0 } + if has_i { arch.preenc_out } else { 0 };
        let multimodal = EncoderIds {
            audio: mm_audio,
            image: mm_image,
            head_s: b.head("phi.head_zs", phi, summary, arch.latent_dim_s),
            head_a: has_a.then(|| b.head("phi.head_za", phi, summary, arch.latent_dim_a)),
            head_i: has_i.then(|| b.head("phi.head_zi", phi, summary, arch.latent_dim_i)),
        };

        let (unimodal_audio, unimodal_image) = if kind == ModelKind::Pvae {
            let ua = EncoderIds {
                audio: Some(b.lstm("psi.audio.lstm", psi, arch.audio_feat_dim, arch.lstm_cells)),
                image: None,
                head_s: b.head("psi.audio.head_zs", psi, arch.lstm_cells, arch.latent_dim_s),
                head_a: Some(b.head("psi.audio.head_za", psi, arch.lstm_cells, arch.latent_dim_a)),
                head_i: None,
            };
            let ui = EncoderIds {
                audio: None,
                image: Some(b.image_pre("psi.image", psi, &arch)),
                head_s: b.head("psi.image.head_zs", psi, arch.preenc_out, arch.latent_dim_s),
                head_a: None,
                head_i: Some(b.head("psi.image.head_zi", psi, arch.preenc_out, arch.latent_dim_i)),
            };
            (Some(ua), Some(ui))
        } else {
            (None, None)
        };

        Ok(Self {
            arch,
            kind,
            params,
            layout: Layout {
                multimodal,
                unimodal_audio,
                unimodal_image,
                dec_audio,
                dec_image,
            },
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn require(&self, m: Modality) -> Result<()> {
        if !self.kind.has(m) {
            return Err(Error::InvalidArgument(format!(
                "{} model has no {} modality",
                self.kind.name(),
                m.name()
            )));
        }
        Ok(())
    }

    fn check_image(&self, g: &Graph, image: Var) -> Result<()> {
        let s = g.shape(image);
        let side = self.arch.image_side;
        if s.len() != 4 || s[1] != 1 || s[2] != side || s[3] != side {
            return Err(Error::InvalidShape {
                op: "image input",
                detail: format!("expected [B, 1, {side}, {side}], got {s:?}"),
            });
        }
        Ok(())
    }

    fn check_audio(&self, audio: &AudioBatch) -> Result<()> {
        if audio.feat_dim() != self.arch.audio_feat_dim {
            return Err(Error::shape(
                "audio input",
                audio.frames.shape(),
                &[audio.frames.rows(), self.arch.audio_feat_dim],
            ));
        }
        if audio.lengths.contains(&0) {
            return Err(Error::InvalidArgument("empty audio sequence".into()));
        }
        Ok(())
    }

    fn linear(g: &mut Graph, p: &Bound, l: LinearIds, x: Var) -> Result<Var> {
        let y = g.matmul(x, p[l.w])?;
        g.add_bias(y, p[l.b])
    }

    fn head(g: &mut Graph, p: &Bound, l: LinearIds, x: Var) -> Result<GaussianVar> {
        let out = Self::linear(g, p, l, x)?;
        let d = g.shape(out)[1] / 2;
        Ok(GaussianVar {
            mean: g.slice_last(out, 0, d)?,
            log_var: g.slice_last(out, d, 2 * d)?,
        })
    }

    /// LSTM over padded frames; returns each sequence's hidden state at its own last frame.
    fn audio_summary(&self, g: &mut Graph, p: &Bound, lstm: LstmIds, audio: &AudioBatch) -> Result<Var> {
        self.check_audio(audio)?;
        let b = audio.batch_size();
        let cells = self.arch.lstm_cells;
        let frames = g.constant(audio.frames.clone());
        let xw = g.matmul(frames, p[lstm.w_ih])?;
        let xw = g.add_bias(xw, p[lstm.bias])?;
        let mut h = g.constant(Tensor::zeros(&[b, cells]));
        let mut c = g.constant(Tensor::zeros(&[b, cells]));
        for t in 0..audio.max_len() {
            let xt = g.slice_rows(xw, t * b, (t + 1) * b)?;
            let gates = if t == 0 {
                xt
            } else {
                let hw = g.matmul(h, p[lstm.w_hh])?;
                g.add(xt, hw)?
            };
            (h, c) = split_cell(g, gates, h, c, audio.step_mask(t))?;
        }
        Ok(h)
    }

    fn image_summary(&self, g: &mut Graph, p: &Bound, ids: ImagePreIds, image: Var) -> Result<Var> {
        self.check_image(g, image)?;
        let b = g.shape(image)[0];
        let x = g.conv2d(image, p[ids.conv1_k], Some(p[ids.conv1_b]))?;
        let x = g.relu(x)?;
        let x = g.conv2d(x, p[ids.conv2_k], Some(p[ids.conv2_b]))?;
        let x = g.relu(x)?;
        let flat = self.arch.conv_channels.1 * self.arch.quarter_area();
        let x = g.reshape(x, &[b, flat])?;
        let x = Self::linear(g, p, ids.fc, x)?;
        g.relu(x)
    }

    /// Multimodal posteriors `q(z^s|X) q(z^a|X) q(z^i|X)` from three independent heads.
    pub fn multimodal_posteriors(
        &self,
        g: &mut Graph,
        p: &Bound,
        audio: Option<&AudioBatch>,
        image: Option<Var>,
    ) -> Result<MultimodalPosteriors> {
        let enc = self.layout.multimodal;
        let mut parts = Vec::with_capacity(2);
        if let Some(lstm) = enc.audio {
            let audio = audio.ok_or(Error::MissingModality("audio"))?;
            parts.push(self.audio_summary(g, p, lstm, audio)?);
        }
        if let Some(ids) = enc.image {
            let image = image.ok_or(Error::MissingModality("image"))?;
            parts.push(self.image_summary(g, p, ids, image)?);
        }
        if parts.len() == 2 && g.shape(parts[0])[0] != g.shape(parts[1])[0] {
            return Err(Error::Misaligned(g.shape(parts[0])[0], g.shape(parts[1])[0]));
        }
        let summary = if parts.len() == 1 { parts[0] } else { g.concat(&parts)? };
        Ok(MultimodalPosteriors {
            zs: Self::head(g, p, enc.head_s, summary)?,
            za: enc.head_a.map(|h| Self::head(g, p, h, summary)).transpose()?,
            zi: enc.head_i.map(|h| Self::head(g, p, h, summary)).transpose()?,
        })
    }

    /// `r(z^s|x^a) r(z^a|x^a)`. Single-modality baselines reuse their only encoder.
    pub fn unimodal_audio_posteriors(&self, g: &mut Graph, p: &Bound, audio: &AudioBatch) -> Result<UnimodalPosteriors> {
        self.require(Modality::Audio)?;
        let enc = self.layout.unimodal_audio.unwrap_or(self.layout.multimodal);
        let lstm = enc.audio.expect("audio encoder present");
        let summary = self.audio_summary(g, p, lstm, audio)?;
        Ok(UnimodalPosteriors {
            zs: Self::head(g, p, enc.head_s, summary)?,
            style: Self::head(g, p, enc.head_a.expect("audio style head"), summary)?,
        })
    }

    /// `r(z^s|x^i) r(z^i|x^i)`.
    pub fn unimodal_image_posteriors(&self, g: &mut Graph, p: &Bound, image: Var) -> Result<UnimodalPosteriors> {
        self.require(Modality::Image)?;
        let enc = self.layout.unimodal_image.unwrap_or(self.layout.multimodal);
        let ids = enc.image.expect("image encoder present");
        let summary = self.image_summary(g, p, ids, image)?;
        Ok(UnimodalPosteriors {
            zs: Self::head(g, p, enc.head_s, summary)?,
            style: Self::head(g, p, enc.head_i.expect("image style head"), summary)?,
        })
    }

    /// Frame means `[T * B, F]` (time-major) from latents `[B, ·]`, rolled out `num_frames` steps.
    pub fn audio_decoder(&self, g: &mut Graph, p: &Bound, z_a: Var, z_s: Var, num_frames: usize) -> Result<Var> {
        self.require(Modality::Audio)?;
        let ids = self.layout.dec_audio.expect("audio decoder present");
        self.check_latents(g, z_s, z_a, self.arch.latent_dim_a)?;
        if num_frames == 0 {
            return Err(Error::InvalidArgument("num_frames must be at least 1".into()));
        }
        let b = g.shape(z_s)[0];
        let cells = self.arch.lstm_cells;
        let zin = g.concat(&[z_s, z_a])?;
        let xw = g.matmul(zin, p[ids.lstm.w_ih])?;
        let xw = g.add_bias(xw, p[ids.lstm.bias])?;
        let mut h = g.constant(Tensor::zeros(&[b, cells]));
        let mut c = g.constant(Tensor::zeros(&[b, cells]));
        let mut hs = Vec::with_capacity(num_frames);
        for t in 0..num_frames {
            let gates = if t == 0 {
                xw
            } else {
                let hw = g.matmul(h, p[ids.lstm.w_hh])?;
                g.add(xw, hw)?
            };
            (h, c) = split_cell(g, gates, h, c, None)?;
            hs.push(h);
        }
        let all = g.concat_rows(&hs)?;
        Self::linear(g, p, ids.out, all)
    }

    /// Image means `[B, 1, side, side]`; no output nonlinearity.
    pub fn image_decoder(&self, g: &mut Graph, p: &Bound, z_i: Var, z_s: Var) -> Result<Var> {
        self.require(Modality::Image)?;
        let ids = self.layout.dec_image.expect("image decoder present");
        self.check_latents(g, z_s, z_i, self.arch.latent_dim_i)?;
        let b = g.shape(z_s)[0];
        let zin = g.concat(&[z_s, z_i])?;
        let x = Self::linear(g, p, ids.fc1, zin)?;
        let x = g.relu(x)?;
        let x = Self::linear(g, p, ids.fc2, x)?;
        let x = g.relu(x)?;
        let q = self.arch.quarter();
        let x = g.reshape(x, &[b, self.arch.decoder_channels(), q, q])?;
        let x = g.conv_transpose2d(x, p[ids.deconv1_k], Some(p[ids.deconv1_b]))?;
        let x = g.relu(x)?;
        g.conv_transpose2d(x, p[ids.deconv2_k], Some(p[ids.deconv2_b]))
    }

    fn check_latents(&self, g: &Graph, z_s: Var, z_m: Var, style_dim: usize) -> Result<()> {
        let (ss, sm) = (g.shape(z_s), g.shape(z_m));
        if ss.len() != 2 || ss[1] != self.arch.latent_dim_s {
            return Err(Error::shape("decoder z_s", ss, &[ss.first().copied().unwrap_or(0), self.arch.latent_dim_s]));
        }
        if sm.len() != 2 || sm[1] != style_dim || sm[0] != ss[0] {
            return Err(Error::shape("decoder style latent", sm, &[ss[0], style_dim]));
        }
        Ok(())
    }

    // Value-level conveniences.

    pub fn infer_multimodal(&self, batch: &MultimodalBatch) -> Result<(PosteriorBatch, PosteriorBatch, PosteriorBatch)> {
        if self.kind != ModelKind::Pvae {
            return Err(Error::InvalidArgument("multimodal inference needs a pvae model".into()));
        }
        let mut g = Graph::new();
        let p = self.params.bind_constant(&mut g);
        let image = g.constant(batch.image()?.clone());
        let q = self.multimodal_posteriors(&mut g, &p, Some(batch.audio()?), Some(image))?;
        Ok((
            PosteriorBatch::read(&g, q.zs),
            PosteriorBatch::read(&g, q.za.expect("pvae has z^a")),
            PosteriorBatch::read(&g, q.zi.expect("pvae has z^i")),
        ))
    }

    /// `(r(z^s|x^a), r(z^a|x^a))`.
    pub fn infer_unimodal_audio(&self, audio: &AudioBatch) -> Result<(PosteriorBatch, PosteriorBatch)> {
        let mut g = Graph::new();
        let p = self.params.bind_constant(&mut g);
        let r = self.unimodal_audio_posteriors(&mut g, &p, audio)?;
        Ok((PosteriorBatch::read(&g, r.zs), PosteriorBatch::read(&g, r.style)))
    }

    /// `(r(z^s|x^i), r(z^i|x^i))`.
    pub fn infer_unimodal_image(&self, images: &Tensor) -> Result<(PosteriorBatch, PosteriorBatch)> {
        let mut g = Graph::new();
        let p = self.params.bind_constant(&mut g);
        let image = g.constant(images.clone());
        let r = self.unimodal_image_posteriors(&mut g, &p, image)?;
        Ok((PosteriorBatch::read(&g, r.zs), PosteriorBatch::read(&g, r.style)))
    }

    /// Decodes each row of `(z_a, z_s)` to its requested length; returns row-major `[T_b, F]` per sample.
    pub fn decode_audio(&self, z_a: &Tensor, z_s: &Tensor, lengths: &[usize]) -> Result<Vec<Vec<f64>>> {
        if lengths.len() != z_s.rows() {
            return Err(Error::Misaligned(lengths.len(), z_s.rows()));
        }
        let t_max = lengths.iter().copied().max().unwrap_or(0);
        let mut g = Graph::new();
        let p = self.params.bind_constant(&mut g);
        let za = g.constant(z_a.clone());
        let zs = g.constant(z_s.clone());
        let out = self.audio_decoder(&mut g, &p, za, zs, t_max)?;
        let b = z_s.rows();
        let f = self.arch.audio_feat_dim;
        let data = g.value(out).data();
        Ok(lengths
            .iter()
            .enumerate()
            .map(|(bi, &t)| {
                let mut seq = Vec::with_capacity(t * f);
                for step in 0..t {
                    let at = (step * b + bi) * f;
                    seq.extend_from_slice(&data[at..at + f]);
                }
                seq
            })
            .collect())
    }

    /// Image means `[B, 1, side, side]`.
    pub fn decode_image(&self, z_i: &Tensor, z_s: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind_constant(&mut g);
        let zi = g.constant(z_i.clone());
        let zs = g.constant(z_s.clone());
        let out = self.image_decoder(&mut g, &p, zi, zs)?;
        Ok(g.value(out).clone())
    }

    /// Replaces parameter values from another store with identical names and shapes.
    pub fn load_params(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::ConfigMismatch(format!(
                "parameter count {} vs model {}",
                other.len(),
                self.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(other.iter()) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter `{}` {:?} vs `{}` {:?}",
                    src.name,
                    src.value.shape(),
                    dst.name,
                    dst.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

/// Rollout length for each sample: training decodes to the observed length;
/// generation uses an explicit length or the style reference's length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FramePolicy {
    GroundTruth,
    Fixed(usize),
    FromStyleReference,
}

/// Resolves [`FramePolicy`] for a batch given observed and style-reference lengths.
pub fn num_frames_policy(policy: FramePolicy, observed: &[usize], style_reference: &[usize]) -> Result<Vec<usize>> {
    let lengths = match policy {
        FramePolicy::GroundTruth => observed.to_vec(),
        FramePolicy::Fixed(t) => vec![t; observed.len().max(style_reference.len())],
        FramePolicy::FromStyleReference => style_reference.to_vec(),
    };
    if lengths.contains(&0) {
        return Err(Error::InvalidArgument("rollout length must be at least 1".into()));
    }
    Ok(lengths)
}

#[cfg(test)]
mod tests {
    use super::*;

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

    fn audio(b: usize, f: usize) -> AudioBatch {
        let seqs: Vec<Vec<f64>> = (0..b)
            .map(|i| (0..(3 + i) * f).map(|k| ((k + i) as f64 * 0.31).sin()).collect())
            .collect();
        let refs: Vec<(&[f64], usize)> = seqs.iter().enumerate().map(|(i, s)| (&s[..], 3 + i)).collect();
        AudioBatch::from_sequences(&refs, f).unwrap()
    }

    fn images(b: usize) -> Tensor {
        let data = (0..b * 784).map(|k| ((k as f64) * 0.013).sin().abs()).collect();
        Tensor::new(&[b, 1, 28, 28], data).unwrap()
    }

    #[test]
    fn arch_validation() {
        assert!(ArchConfig::default().validate().is_ok());
        assert!(ArchConfig::paper().validate().is_ok());
        let bad = ArchConfig {
            image_side: 30,
            ..ArchConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ArchConfig {
            fc_units: (64, 100),
            ..ArchConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn parameter_groups_are_partitioned() {
        let m = PvaeModel::new(tiny_arch(), ModelKind::Pvae, 1).unwrap();
        for p in m.params().iter() {
            let expect = match p.name.split('.').next().unwrap() {
                "theta" => ParamGroup::Theta,
                "phi" => ParamGroup::Phi,
                "psi" => ParamGroup::Psi,
                other => panic!("unexpected prefix {other}"),
            };
            assert_eq!(p.group, expect, "{}", p.name);
        }
        let forget = m.params().find("phi.audio.lstm.bias").unwrap();
        let b = m.params().get(forget).value.data();
        assert_eq!(&b[4..8], &[1.0; 4]);
        assert_eq!(&b[..4], &[0.0; 4]);
    }

    #[test]
    fn posterior_dims_and_determinism() {
        let arch = tiny_arch();
        let m = PvaeModel::new(arch.clone(), ModelKind::Pvae, 7).unwrap();
        let batch = MultimodalBatch {
            audio: Some(audio(2, 3)),
            image: Some(images(2)),
            identities: vec![0, 1],
        };
        let (zs, za, zi) = m.infer_multimodal(&batch).unwrap();
        assert_eq!(zs.mean.shape(), &[2, 3]);
        assert_eq!(za.mean.shape(), &[2, 2]);
        assert_eq!(zi.log_var.shape(), &[2, 2]);
        let again = m.infer_multimodal(&batch).unwrap();
        assert_eq!(zs, again.0);

        let (rs, ra) = m.infer_unimodal_audio(batch.audio().unwrap()).unwrap();
        assert_eq!((rs.dim(), ra.dim()), (3, 2));
        let (rs_i, ri) = m.infer_unimodal_image(batch.image().unwrap()).unwrap();
        assert_eq!((rs_i.dim(), ri.dim()), (3, 2));
    }

    #[test]
    fn wrong_image_size_rejected() {
        let m = PvaeModel::new(tiny_arch(), ModelKind::Pvae, 7).unwrap();
        let bad = Tensor::zeros(&[1, 1, 14, 14]);
        assert!(m.infer_unimodal_image(&bad).is_err());
        let batch = MultimodalBatch {
            audio: None,
            image: Some(images(1)),
            identities: vec![0],
        };
        assert!(matches!(m.infer_multimodal(&batch), Err(Error::MissingModality("audio"))));
    }

    #[test]
    fn zero_head_weights_give_bias_mean() {
        let mut m = PvaeModel::new(tiny_arch(), ModelKind::Pvae, 3).unwrap();
        let w = m.params().find("phi.head_zs.w").unwrap();
        let b = m.params().find("phi.head_zs.b").unwrap();
        let shape = m.params().get(w).value.shape().to_vec();
        m.params_mut().get_mut(w).value = Tensor::zeros(&shape);
        let bias: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect();
        m.params_mut().get_mut(b).value = Tensor::vector(bias.clone());
        for seed in 0..2 {
            let batch = MultimodalBatch {
                audio: Some(audio(2, 3)),
                image: Some(images(2).map(|v| v * (seed as f64 + 0.5))),
                identities: vec![0, 1],
            };
            let (zs, _, _) = m.infer_multimodal(&batch).unwrap();
            assert_eq!(zs.mean_row(1), &bias[..3]);
            assert_eq!(zs.row(0).log_var, bias[3..].to_vec());
        }
    }

    #[test]
    fn decoders_produce_requested_shapes() {
        let m = PvaeModel::new(tiny_arch(), ModelKind::Pvae, 5).unwrap();
        let zs = Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 1.0, 0.0, -1.0]).unwrap();
        let za = Tensor::matrix(2, 2, vec![0.5, 0.5, -0.5, 0.1]).unwrap();
        let seqs = m.decode_audio(&za, &zs, &[4, 7]).unwrap();
        assert_eq!(seqs[0].len(), 4 * 3);
        assert_eq!(seqs[1].len(), 7 * 3);
        let long = m.decode_audio(&za, &zs, &[7, 7]).unwrap();
        assert_eq!(&long[0][..12], &seqs[0][..]);
        assert_eq!(m.decode_audio(&za, &zs, &[4, 7]).unwrap(), seqs);

        let img = m.decode_image(&za, &zs).unwrap();
        assert_eq!(img.shape(), &[2, 1, 28, 28]);
        assert!(m.decode_image(&zs, &zs).is_err());
    }

    #[test]
    fn constant_image_from_zero_decoder() {
        let mut m = PvaeModel::new(tiny_arch(), ModelKind::Pvae, 5).unwrap();
        let ids: Vec<ParamId> = m.params().ids().collect();
        for id in ids {
            let p = m.params_mut().get_mut(id);
            if p.name.starts_with("theta.image") {
                p.value = Tensor::zeros(p.value.shape());
            }
        }
        let b = m.params().find("theta.image.deconv2.b").unwrap();
        m.params_mut().get_mut(b).value = Tensor::vector(vec![0.25]);
        let img = m.decode_image(&Tensor::zeros(&[1, 2]), &Tensor::zeros(&[1, 3])).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn unimodal_audio_ignores_images_and_returns_two() {
        let m = PvaeModel::new(tiny_arch(), ModelKind::Pvae, 9).unwrap();
        let mut g = Graph::new();
        let p = m.params().bind(&mut g);
        let a = audio(2, 3);
        let r = m.unimodal_audio_posteriors(&mut g, &p, &a).unwrap();
        let zs_a = g.value(r.zs.mean).clone();
        let img = g.constant(images(2));
        let _ = m.unimodal_image_posteriors(&mut g, &p, img).unwrap();
        let r2 = m.unimodal_audio_posteriors(&mut g, &p, &a).unwrap();
        assert_eq!(&zs_a, g.value(r2.zs.mean));
    }

    #[test]
    fn psi_and_phi_are_isolated() {
        let m = PvaeModel::new(tiny_arch(), ModelKind::Pvae, 11).unwrap();
        let batch = MultimodalBatch {
            audio: Some(audio(2, 3)),
            image: Some(images(2)),
            identities: vec![0, 1],
        };
        let before_mm = m.infer_multimodal(&batch).unwrap();
        let before_uni = m.infer_unimodal_image(batch.image().unwrap()).unwrap();
        let mut zero_psi = m.clone();
        let mut zero_phi = m.clone();
        for p in zero_psi.params_mut().iter_mut().filter(|p| p.group == ParamGroup::Psi) {
            p.value = Tensor::zeros(p.value.shape());
        }
        for p in zero_phi.params_mut().iter_mut().filter(|p| p.group == ParamGroup::Phi) {
            p.value = Tensor::zeros(p.value.shape());
        }
        assert_eq!(zero_psi.infer_multimodal(&batch).unwrap(), before_mm);
        assert_eq!(zero_phi.infer_unimodal_image(batch.image().unwrap()).unwrap(), before_uni);
    }

    #[test]
    fn baseline_models_have_one_modality() {
        let sp = PvaeModel::new(tiny_arch(), ModelKind::VaeAudio, 1).unwrap();
        assert!(sp.params().iter().all(|p| !p.name.contains("image") && p.group != ParamGroup::Psi));
        let (zs, za) = sp.infer_unimodal_audio(&audio(2, 3)).unwrap();
        assert_eq!((zs.dim(), za.dim()), (3, 2));
        assert!(sp.infer_unimodal_image(&images(1)).is_err());
        let im = PvaeModel::new(tiny_arch(), ModelKind::VaeImage, 1).unwrap();
        assert!(im.infer_unimodal_image(&images(1)).is_ok());
    }

    #[test]
    fn frame_policy() {
        assert_eq!(num_frames_policy(FramePolicy::GroundTruth, &[3, 4], &[]).unwrap(), vec![3, 4]);
        assert_eq!(num_frames_policy(FramePolicy::Fixed(9), &[3, 4], &[]).unwrap(), vec![9, 9]);
        assert_eq!(num_frames_policy(FramePolicy::FromStyleReference, &[], &[5]).unwrap(), vec![5]);
        assert!(num_frames_policy(FramePolicy::Fixed(0), &[1], &[]).is_err());
    }
}
