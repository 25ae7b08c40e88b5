//! Paired spoken/written digit data: generation, storage, pairing and batching.

mod batch;
mod dataset;
pub mod idx;
pub mod oracle;
pub mod synth;

pub use batch::{AudioBatch, MultimodalBatch};
pub use dataset::{
    negative_for, pair_epoch, AudioSample, Dataset, GeneratorConfig, ImageSample, NegativeMode, Split, DATASET_FORMAT,
    DATASET_VERSION,
};
pub use synth::{render_glyph, synth_audio, AudioStyle, ImageStyle};
