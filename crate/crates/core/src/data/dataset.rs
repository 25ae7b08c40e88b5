use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{AudioBatch, MultimodalBatch};
use super::synth::{render_glyph, synth_audio, AudioStyle, ImageStyle, IMAGE_SIDE, MAX_ONSET, NUM_IDENTITIES};
use crate::binio;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_FORMAT: &str = "pvae-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Synthetic generator settings. Counts are per modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub feat_dim: usize,
    pub t_min: usize,
    pub t_max: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 1000,
            feat_dim: 8,
            t_min: 20,
            t_max: 60,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train < NUM_IDENTITIES || self.n_test < NUM_IDENTITIES {
            return Err(Error::InvalidArgument(format!(
                "each split needs at least {NUM_IDENTITIES} samples per modality"
            )));
        }
        if self.feat_dim < 2 {
            return Err(Error::InvalidArgument("feat_dim must be at least 2".into()));
        }
        if self.t_min < 2 || self.t_max < self.t_min + MAX_ONSET {
            return Err(Error::InvalidArgument(format!(
                "need 2 <= t_min and t_min + {MAX_ONSET} <= t_max, got [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Test => self.n_test,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub identity: u8,
    /// Ground-truth factors; absent for external images.
    pub style: Option<ImageStyle>,
    /// Row-major 28×28 in `[0, 1]`.
    pub pixels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudioSample {
    pub identity: u8,
    pub style: AudioStyle,
    /// Row-major `T × F`.
    pub frames: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub seed: u64,
    pub config: GeneratorConfig,
    pub images: Vec<ImageSample>,
    pub audio: Vec<AudioSample>,
}

/// How contrastive negatives are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Uniform over samples whose identity differs from the anchor.
    #[default]
    LabelFiltered,
    /// Uniform over all samples.
    Uniform,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of one sample, independent across split, modality and index.
pub(crate) fn sample_seed(seed: u64, split: Split, modality: u64, index: usize) -> u64 {
    let tag = (split as u64) << 1 | modality;
    splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index as u64)
}

impl Dataset {
    /// Identities cycle `0..10` so every class is equally represented.
    pub fn generate(config: &GeneratorConfig, split: Split, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.count(split);
        let mut images = Vec::with_capacity(n);
        let mut audio = Vec::with_capacity(n);
        for i in 0..n {
            let identity = (i % NUM_IDENTITIES) as u8;
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, split, 0, i));
            let style = ImageStyle::sample(&mut rng);
            let pixels = render_glyph(identity, &style, rng.random())?;
            images.push(ImageSample {
                identity,
                style: Some(style),
                pixels,
            });

            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, split, 1, i));
            let style = AudioStyle::sample(&mut rng, config.t_min, config.t_max);
            let frames = synth_audio(identity, &style, config.feat_dim, (config.t_min, config.t_max), rng.random())?;
            audio.push(AudioSample { identity, style, frames });
        }
        Ok(Self {
            split,
            seed,
            config: config.clone(),
            images,
            audio,
        })
    }

    pub fn feat_dim(&self) -> usize {
        self.config.feat_dim
    }

    pub fn audio_by_identity(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); NUM_IDENTITIES];
        for (i, s) in self.audio.iter().enumerate() {
            out[s.identity as usize].push(i);
        }
        out
    }

    pub fn images_by_identity(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); NUM_IDENTITIES];
        for (i, s) in self.images.iter().enumerate() {
            out[s.identity as usize].push(i);
        }
        out
    }

    /// Errors unless both pools hold every identity.
    pub fn check_classes(&self) -> Result<()> {
        for (modality, pools) in [("audio", self.audio_by_identity()), ("image", self.images_by_identity())] {
            if let Some(identity) = pools.iter().position(|p| p.is_empty()) {
                return Err(Error::MissingIdentity {
                    identity: identity as u8,
                    modality,
                });
            }
        }
        Ok(())
    }

    /// Replaces the image pool, e.g. with real digits read from IDX files.
    pub fn replace_images(&mut self, images: Vec<ImageSample>) -> Result<()> {
        if let Some(s) = images.iter().find(|s| s.pixels.len() != IMAGE_SIDE * IMAGE_SIDE) {
            return Err(Error::shape("replace_images", &[s.pixels.len()], &[IMAGE_SIDE * IMAGE_SIDE]));
        }
        self.images = images;
        Ok(())
    }

    pub fn audio_batch(&self, indices: &[usize]) -> Result<AudioBatch> {
        let f = self.feat_dim();
        let seqs: Vec<(&[f64], usize)> = indices
            .iter()
            .map(|&i| {
                let s = &self.audio[i];
                (s.frames.as_slice(), s.frames.len() / f)
            })
            .collect();
        AudioBatch::from_sequences(&seqs, f)
    }

    /// `[B, 1, 28, 28]`.
    pub fn image_batch(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * IMAGE_SIDE * IMAGE_SIDE);
        for &i in indices {
            data.extend_from_slice(&self.images[i].pixels);
        }
        Tensor::new(&[indices.len(), 1, IMAGE_SIDE, IMAGE_SIDE], data)
    }

    /// Paired batch from `(audio index, image index)` pairs; identities are
    /// taken from the audio side.
    pub fn batch(&self, pairs: &[(usize, usize)]) -> Result<MultimodalBatch> {
        let (a, i): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        Ok(MultimodalBatch {
            audio: Some(self.audio_batch(&a)?),
            image: Some(self.image_batch(&i)?),
            identities: a.iter().map(|&k| self.audio[k].identity).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            split: self.split,
            seed: self.seed,
            config: self.config.clone(),
            image_side: IMAGE_SIDE,
            feat_dim: self.feat_dim(),
            images: self
                .images
                .iter()
                .map(|s| ImageEntry {
                    identity: s.identity,
                    style: s.style,
                })
                .collect(),
            audio: self
                .audio
                .iter()
                .map(|s| AudioEntry {
                    identity: s.identity,
                    style: s.style,
                    frames: s.frames.len() / self.feat_dim(),
                })
                .collect(),
        };
        let payload = self
            .images
            .iter()
            .flat_map(|s| s.pixels.iter())
            .chain(self.audio.iter().flat_map(|s| s.frames.iter()))
            .copied();
        binio::write(path, &header, payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (Header, _) = binio::read(path, "dataset", DATASET_FORMAT, DATASET_VERSION)?;
        if h.image_side != IMAGE_SIDE || h.feat_dim != h.config.feat_dim {
            return Err(Error::Format {
                kind: "dataset",
                detail: format!("dims image_side={} feat_dim={}", h.image_side, h.feat_dim),
            });
        }
        let px = IMAGE_SIDE * IMAGE_SIDE;
        let total = h.images.len() * px + h.audio.iter().map(|a| a.frames * h.feat_dim).sum::<usize>();
        let values = binio::floats(&payload, total, "dataset")?;
        let mut at = 0;
        let mut take = |n: usize| {
            let v = values[at..at + n].to_vec();
            at += n;
            v
        };
        let mut images = Vec::with_capacity(h.images.len());
        for e in &h.images {
            if e.identity as usize >= NUM_IDENTITIES {
                return Err(Error::IdentityOutOfRange(e.identity as i64));
            }
            images.push(ImageSample {
                identity: e.identity,
                style: e.style,
                pixels: take(px),
            });
        }
        let mut audio = Vec::with_capacity(h.audio.len());
        for e in &h.audio {
            if e.identity as usize >= NUM_IDENTITIES {
                return Err(Error::IdentityOutOfRange(e.identity as i64));
            }
            audio.push(AudioSample {
                identity: e.identity,
                style: e.style,
                frames: take(e.frames * h.feat_dim),
            });
        }
        Ok(Self {
            split: h.split,
            seed: h.seed,
            config: h.config,
            images,
            audio,
        })
    }

    /// One row per sample with its ground-truth factors.
    pub fn metadata_csv(&self) -> String {
        let mut out = String::from(
            "split,modality,index,identity,tilt,thickness,scale,offset_x,offset_y,intensity,duration,amplitude,pitch,onset,frames\n",
        );
        let split = self.split.name();
        for (i, s) in self.images.iter().enumerate() {
            let _ = write!(out, "{split},image,{i},{}", s.identity);
            match &s.style {
                Some(st) => {
                    let _ = write!(
                        out,
                        ",{},{},{},{},{},{}",
                        st.tilt, st.thickness, st.scale, st.offset_x, st.offset_y, st.intensity
                    );
                }
                None => out.push_str(",,,,,,"),
            }
            out.push_str(",,,,,\n");
        }
        for (i, s) in self.audio.iter().enumerate() {
            let st = &s.style;
            let _ = writeln!(
                out,
                "{split},audio,{i},{},,,,,,,{},{},{},{},{}",
                s.identity,
                st.duration,
                st.amplitude,
                st.pitch,
                st.onset,
                s.frames.len() / self.feat_dim()
            );
        }
        out
    }

    pub fn write_metadata_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.metadata_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageEntry {
    identity: u8,
    style: Option<ImageStyle>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AudioEntry {
    identity: u8,
    style: AudioStyle,
    frames: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    split: Split,
    seed: u64,
    config: GeneratorConfig,
    image_side: usize,
    feat_dim: usize,
    images: Vec<ImageEntry>,
    audio: Vec<AudioEntry>,
}

/// Pairs every audio sample with a uniformly drawn image of the same
/// identity. Pairs come out in audio order.
pub fn pair_epoch(dataset: &Dataset, epoch_seed: u64) -> Result<Vec<(usize, usize)>> {
    dataset.check_classes()?;
    let pools = dataset.images_by_identity();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    Ok(dataset
        .audio
        .iter()
        .enumerate()
        .map(|(a, s)| {
            let pool = &pools[s.identity as usize];
            (a, pool[rng.random_range(0..pool.len())])
        })
        .collect())
}

/// Draws one negative pair per anchor pair: an audio sample chosen per
/// `mode`, and a random image sharing that sample's identity.
pub fn negative_for<R: Rng + ?Sized>(
    anchors: &[(usize, usize)],
    dataset: &Dataset,
    mode: NegativeMode,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    dataset.check_classes()?;
    let pools = dataset.images_by_identity();
    let n = dataset.audio.len();
    anchors
        .iter()
        .map(|&(a, _)| {
            let anchor = dataset.audio[a].identity;
            let j = loop {
                let j = rng.random_range(0..n);
                if mode == NegativeMode::Uniform || dataset.audio[j].identity != anchor {
                    break j;
                }
            };
            let pool = &pools[dataset.audio[j].identity as usize];
            Ok((j, pool[rng.random_range(0..pool.len())]))
        })
        .collect()
}
