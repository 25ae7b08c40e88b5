use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variable-length frame sequences padded to a common length.
///
/// `frames` is time-major `[T_max * B, F]`: rows `t*B..(t+1)*B` hold step `t`
/// of every sequence, zero-filled past each sequence's own length.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBatch {
    pub frames: Tensor,
    pub lengths: Vec<usize>,
}

impl AudioBatch {
    /// Packs row-major `[T_b, F]` sequences.
    pub fn from_sequences(seqs: &[(&[f64], usize)], feat_dim: usize) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::InvalidArgument("empty audio batch".into()));
        }
        let b = seqs.len();
        let mut lengths = Vec::with_capacity(b);
        for &(data, t) in seqs {
            if t == 0 {
                return Err(Error::InvalidArgument("audio sequence has no frames".into()));
            }
            if data.len() != t * feat_dim {
                return Err(Error::shape("audio_batch", &[data.len()], &[t, feat_dim]));
            }
            lengths.push(t);
        }
        let t_max = *lengths.iter().max().unwrap();
        let mut frames = vec![0.0; t_max * b * feat_dim];
        for (bi, &(data, t)) in seqs.iter().enumerate() {
            for step in 0..t {
                let dst = (step * b + bi) * feat_dim;
                frames[dst..dst + feat_dim].copy_from_slice(&data[step * feat_dim..(step + 1) * feat_dim]);
            }
        }
        Ok(Self {
            frames: Tensor::new(&[t_max * b, feat_dim], frames)?,
            lengths,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.frames.rows() / self.batch_size()
    }

    pub fn feat_dim(&self) -> usize {
        self.frames.last_dim()
    }

    /// Per-sample mask for step `t`; `None` when every sequence is active.
    pub fn step_mask(&self, t: usize) -> Option<Vec<f64>> {
        if self.lengths.iter().all(|&len| t < len) {
            return None;
        }
        Some(self.lengths.iter().map(|&len| if t < len { 1.0 } else { 0.0 }).collect())
    }

    /// `[T_max * B, F]` mask selecting valid frames.
    pub fn frame_mask(&self) -> Tensor {
        let (b, f) = (self.batch_size(), self.feat_dim());
        let mut m = vec![0.0; self.frames.len()];
        for t in 0..self.max_len() {
            for (bi, &len) in self.lengths.iter().enumerate() {
                if t < len {
                    let at = (t * b + bi) * f;
                    m[at..at + f].iter_mut().for_each(|v| *v = 1.0);
                }
            }
        }
        Tensor::from_parts(self.frames.shape().to_vec(), m)
    }

    /// Frames of sample `bi` as row-major `[T_b, F]`.
    pub fn sequence(&self, bi: usize) -> Vec<f64> {
        let (b, f) = (self.batch_size(), self.feat_dim());
        let mut out = Vec::with_capacity(self.lengths[bi] * f);
        for t in 0..self.lengths[bi] {
            let at = (t * b + bi) * f;
            out.extend_from_slice(&self.frames.data()[at..at + f]);
        }
        out
    }
}

/// A batch of paired samples; either modality may be absent for unimodal use.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalBatch {
    pub audio: Option<AudioBatch>,
    /// `[B, 1, side, side]`.
    pub image: Option<Tensor>,
    pub identities: Vec<u8>,
}

impl MultimodalBatch {
    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn audio(&self) -> Result<&AudioBatch> {
        self.audio.as_ref().ok_or(Error::MissingModality("audio"))
    }

    pub fn image(&self) -> Result<&Tensor> {
        self.image.as_ref().ok_or(Error::MissingModality("image"))
    }
}
