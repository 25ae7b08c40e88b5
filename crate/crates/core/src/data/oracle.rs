//! Nearest-clean-template identity classifiers, independent of any model.

use super::synth::{render_glyph_clean, voiced_template, ImageStyle, IMAGE_SIDE, NUM_IDENTITIES};

const RESAMPLED_FRAMES: usize = 32;
const ACTIVE_FRACTION: f64 = 0.3;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

fn argmax(scores: impl Iterator<Item = (u8, f64)>) -> u8 {
    let mut best = (0, f64::NEG_INFINITY);
    for (id, s) in scores {
        if s > best.1 {
            best = (id, s);
        }
    }
    best.0
}

/// Frame energies: sum of positive channel values.
pub fn frame_energies(frames: &[f64], feat_dim: usize) -> Vec<f64> {
    frames
        .chunks(feat_dim)
        .map(|f| f.iter().map(|v| v.max(0.0)).sum())
        .collect()
}

/// First and one-past-last frame whose energy exceeds a fixed fraction of the
/// loudest frame.
pub fn active_span(frames: &[f64], feat_dim: usize) -> (usize, usize) {
    let e = frame_energies(frames, feat_dim);
    let peak = e.iter().cloned().fold(0.0, f64::max);
    let thr = ACTIVE_FRACTION * peak;
    let first = e.iter().position(|&v| v > thr).unwrap_or(0);
    let last = e.iter().rposition(|&v| v > thr).map_or(e.len(), |i| i + 1);
    (first, last.max(first + 1).min(e.len().max(1)))
}

/// Number of active frames.
pub fn measured_duration(frames: &[f64], feat_dim: usize) -> usize {
    let (a, b) = active_span(frames, feat_dim);
    b - a
}

fn resample(frames: &[f64], feat_dim: usize, len: usize) -> Vec<f64> {
    let n = frames.len() / feat_dim;
    let mut out = Vec::with_capacity(len * feat_dim);
    for t in 0..len {
        let pos = if len > 1 && n > 1 {
            t as f64 * (n - 1) as f64 / (len - 1) as f64
        } else {
            0.0
        };
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let w = pos - lo as f64;
        for c in 0..feat_dim {
            out.push((1.0 - w) * frames[lo * feat_dim + c] + w * frames[hi * feat_dim + c]);
        }
    }
    out
}

/// Spoken-digit classifier: trims silence, normalizes time, and compares
/// against clean templates at every pitch shift.
#[derive(Clone, Debug)]
pub struct AudioOracle {
    feat_dim: usize,
    templates: Vec<(u8, Vec<f64>)>,
}

impl AudioOracle {
    pub fn new(feat_dim: usize) -> Self {
        let mut templates = Vec::new();
        for id in 0..NUM_IDENTITIES as u8 {
            for pitch in -1..=1 {
                templates.push((id, voiced_template(id, RESAMPLED_FRAMES, pitch as f64, feat_dim)));
            }
        }
        Self { feat_dim, templates }
    }

    /// `frames` is row-major `T × feat_dim`.
    pub fn classify(&self, frames: &[f64]) -> u8 {
        let (a, b) = active_span(frames, self.feat_dim);
        let voiced = resample(&frames[a * self.feat_dim..b * self.feat_dim], self.feat_dim, RESAMPLED_FRAMES);
        argmax(self.templates.iter().map(|(id, t)| (*id, cosine(&voiced, t))))
    }
}

fn centroid(pixels: &[f64]) -> (f64, f64) {
    let (mut m, mut y, mut x) = (0.0, 0.0, 0.0);
    for (p, v) in pixels.iter().enumerate() {
        m += v;
        y += v * (p / IMAGE_SIDE) as f64;
        x += v * (p % IMAGE_SIDE) as f64;
    }
    if m == 0.0 {
        let c = (IMAGE_SIDE as f64 - 1.0) / 2.0;
        return (c, c);
    }
    (y / m, x / m)
}

/// Integer-pixel translation putting the ink centroid at the image center.
fn center(pixels: &[f64]) -> Vec<f64> {
    let (cy, cx) = centroid(pixels);
    let mid = (IMAGE_SIDE as f64 - 1.0) / 2.0;
    let (dy, dx) = ((cy - mid).round() as i64, (cx - mid).round() as i64);
    let n = IMAGE_SIDE as i64;
    let mut out = vec![0.0; pixels.len()];
    for y in 0..n {
        for x in 0..n {
            let (sy, sx) = (y + dy, x + dx);
            if (0..n).contains(&sy) && (0..n).contains(&sx) {
                out[(y * n + x) as usize] = pixels[(sy * n + sx) as usize];
            }
        }
    }
    out
}

/// Written-digit classifier over a small grid of clean styles.
#[derive(Clone, Debug)]
pub struct ImageOracle {
    templates: Vec<(u8, Vec<f64>)>,
}

impl Default for ImageOracle {
    fn default() -> Self {
        Self::new()
    }
}

impl ImageOracle {
    pub fn new() -> Self {
        let mut templates = Vec::new();
        for id in 0..NUM_IDENTITIES as u8 {
            for tilt in [-0.3, -0.1, 0.1, 0.3] {
                for thickness in [0.3, 1.0, 1.7] {
                    let style = ImageStyle {
                        tilt,
                        thickness,
                        ..ImageStyle::default()
                    };
                    let img = render_glyph_clean(id, &style).expect("valid template style");
                    templates.push((id, center(&img)));
                }
            }
        }
        Self { templates }
    }

    /// `pixels` is a row-major 28×28 image.
    pub fn classify(&self, pixels: &[f64]) -> u8 {
        let img = center(pixels);
        argmax(self.templates.iter().map(|(id, t)| (*id, cosine(&img, t))))
    }
}

/// Total ink, the stroke-thickness proxy.
pub fn image_mass(pixels: &[f64]) -> f64 {
    pixels.iter().sum()
}
