//! Checkpoint files: a JSON header line followed by named little-endian
//! `f32` blobs (parameters, then Adam first moments, then second moments).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::networks::{ArchConfig, ModelKind, PvaeModel};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Tensor;
use crate::trainer::{AdamState, TrainConfig, TrainState};

pub const CHECKPOINT_FORMAT: &str = "pvae-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobRole {
    Param,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobEntry {
    pub name: String,
    pub role: BlobRole,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
}

/// Generator position: epoch `next_epoch` draws from stream `next_epoch` of
/// a ChaCha8 generator seeded with `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    model: ModelKind,
    arch: ArchConfig,
    train: TrainConfig,
    epoch: usize,
    adam_step: u64,
    rng: RngState,
    blobs: Vec<BlobEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub params: ParamStore,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn new(model: &PvaeModel, train: &TrainConfig, state: &TrainState) -> Self {
        Self {
            kind: model.kind(),
            arch: model.arch().clone(),
            train: train.clone(),
            epoch: state.epoch,
            params: model.params().clone(),
            adam: state.adam.clone(),
        }
    }

    pub fn rng_state(&self) -> RngState {
        RngState {
            seed: self.train.seed,
            next_epoch: self.epoch,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut blobs = Vec::new();
        for role in [BlobRole::Param, BlobRole::AdamM, BlobRole::AdamV] {
            for p in self.params.iter() {
                blobs.push(BlobEntry {
                    name: p.name.clone(),
                    role,
                    group: p.group,
                    shape: p.value.shape().to_vec(),
                });
            }
        }
        let header = Header {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.kind,
            arch: self.arch.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            adam_step: self.adam.step,
            rng: self.rng_state(),
            blobs,
        };
        let payload = self
            .params
            .iter()
            .map(|p| &p.value)
            .chain(&self.adam.m)
            .chain(&self.adam.v)
            .flat_map(|t| t.data().iter().copied());
        binio::write(path, &header, payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (Header, _) = binio::read(path, "checkpoint", CHECKPOINT_FORMAT, CHECKPOINT_VERSION)?;
        let total = h.blobs.iter().map(|b| b.shape.iter().product::<usize>()).sum();
        let values = binio::floats(&payload, total, "checkpoint")?;

        let template = PvaeModel::new(h.arch.clone(), h.model, 0)?;
        let expected: Vec<_> = [BlobRole::Param, BlobRole::AdamM, BlobRole::AdamV]
            .into_iter()
            .flat_map(|role| template.params().iter().map(move |p| (role, p)))
            .collect();
        if expected.len() != h.blobs.len() {
            return Err(Error::ConfigMismatch(format!(
                "{} blobs in file, architecture needs {}",
                h.blobs.len(),
                expected.len()
            )));
        }
        for ((role, p), b) in expected.iter().zip(&h.blobs) {
            if *role != b.role || p.name != b.name || p.value.shape() != b.shape.as_slice() {
                return Err(Error::ConfigMismatch(format!(
                    "blob `{}` ({:?}) {:?} does not match architecture parameter `{}` {:?}",
                    b.name,
                    b.role,
                    b.shape,
                    p.name,
                    p.value.shape()
                )));
            }
        }

        let mut at = 0;
        let mut tensors = h.blobs.iter().map(|b| {
            let n = b.shape.iter().product::<usize>();
            let t = Tensor::new(&b.shape, values[at..at + n].to_vec());
            at += n;
            t
        });
        let n = template.params().len();
        let mut params = template.params().clone();
        for p in params.iter_mut() {
            p.value = tensors.next().expect("counted above")?;
        }
        let m = tensors.by_ref().take(n).collect::<Result<Vec<_>>>()?;
        let v = tensors.collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind: h.model,
            arch: h.arch,
            train: h.train,
            epoch: h.epoch,
            params,
            adam: AdamState {
                step: h.adam_step,
                m,
                v,
            },
        })
    }

    /// Loads and checks the architecture against the one the caller expects.
    pub fn load_expecting(path: &Path, arch: &ArchConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if &ckpt.arch != arch {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint architecture {:?} differs from expected {:?}",
                ckpt.arch, arch
            )));
        }
        Ok(ckpt)
    }

    pub fn model(&self) -> Result<PvaeModel> {
        let mut model = PvaeModel::new(self.arch.clone(), self.kind, 0)?;
        model.load_params(&self.params)?;
        Ok(model)
    }

    pub fn into_parts(self) -> Result<(PvaeModel, TrainState)> {
        let model = self.model()?;
        Ok((
            model,
            TrainState {
                epoch: self.epoch,
                adam: self.adam,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn arch() -> ArchConfig {
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

    fn ckpt() -> Checkpoint {
        let mut m = PvaeModel::new(arch(), ModelKind::Pvae, 4).unwrap();
        m.params_mut().round_to_f32();
        let adam = AdamState::new(m.params());
        Checkpoint::new(&m, &TrainConfig::default(), &TrainState { epoch: 3, adam })
    }

    #[test]
    fn round_trip() {
        let c = ckpt();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        c.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.rng_state(), RngState { seed: 0, next_epoch: 3 });
    }

    #[test]
    fn truncated_and_version_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        ckpt().save(&p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let text = String::from_utf8_lossy(&bytes).into_owned();

        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header = &text[..nl];
        let grown = header.replacen("\"shape\":[", "\"shape\":[9", 1);
        assert_ne!(grown, header);
        let mut corrupt = grown.into_bytes();
        corrupt.extend_from_slice(&bytes[nl..]);
        fs::write(&p, &corrupt).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Truncated { .. })));

        let mut v2 = header.replacen("\"version\":1", "\"version\":2", 1).into_bytes();
        v2.extend_from_slice(&bytes[nl..]);
        fs::write(&p, &v2).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn different_latent_dim_is_a_config_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        ckpt().save(&p).unwrap();
        let other = ArchConfig {
            latent_dim_s: 4,
            ..arch()
        };
        assert!(matches!(Checkpoint::load_expecting(&p, &other), Err(Error::ConfigMismatch(_))));
    }
}
