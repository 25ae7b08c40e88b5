//! Synthetic spoken and written digits with known style factors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_IDENTITIES: usize = 10;
pub const IMAGE_SIDE: usize = 28;
pub const GLYPH_SIDE: usize = 20;
pub const IMAGE_NOISE: f64 = 0.02;
pub const AUDIO_NOISE: f64 = 0.05;
/// Noise draws are clipped to this many standard deviations.
pub const NOISE_CLIP: f64 = 3.0;
pub const MAX_ONSET: usize = 6;

const FONT: [[&str; 7]; NUM_IDENTITIES] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
];

/// Formant trajectories per digit on the 8-channel reference scale:
/// (first start, first end, second start, second end).
const FORMANTS: [[f64; 4]; NUM_IDENTITIES] = [
    [1.0, 1.0, 4.0, 4.0],
    [1.0, 3.0, 5.0, 5.0],
    [3.0, 1.0, 5.0, 6.0],
    [2.0, 2.0, 3.5, 6.0],
    [1.0, 1.0, 6.0, 3.0],
    [2.0, 4.0, 4.0, 6.0],
    [4.0, 2.0, 6.0, 4.0],
    [1.0, 3.5, 6.0, 4.5],
    [3.0, 3.0, 5.0, 5.0],
    [3.0, 1.0, 3.5, 6.0],
];
const SECOND_FORMANT_GAIN: f64 = 0.7;
const FORMANT_WIDTH: f64 = 0.6;

pub mod ranges {
    pub const TILT: (f64, f64) = (-0.35, 0.35);
    pub const THICKNESS: (f64, f64) = (0.0, 2.0);
    pub const SCALE: (f64, f64) = (0.9, 1.1);
    pub const OFFSET: (f64, f64) = (-2.0, 2.0);
    pub const INTENSITY: (f64, f64) = (0.75, 1.0);
    pub const AMPLITUDE: (f64, f64) = (0.8, 2.0);
    pub const PITCH: (i32, i32) = (-1, 1);
}

pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn check_identity(identity: u8) -> Result<()> {
    if identity as usize >= NUM_IDENTITIES {
        return Err(Error::IdentityOutOfRange(identity as i64));
    }
    Ok(())
}

fn clipped_noise<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z.clamp(-NOISE_CLIP, NOISE_CLIP)
}

fn within(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

/// Handwriting factors of a written digit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageStyle {
    /// Horizontal shear per pixel of height; positive leans right.
    pub tilt: f64,
    /// Stroke dilation radius in glyph pixels.
    pub thickness: f64,
    pub scale: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub intensity: f64,
}

impl Default for ImageStyle {
    fn default() -> Self {
        Self {
            tilt: 0.0,
            thickness: 0.8,
            scale: 1.0,
            offset_x: 0.0,
            offset_y: 0.0,
            intensity: 1.0,
        }
    }
}

impl ImageStyle {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        use ranges::*;
        let mut u = |(lo, hi): (f64, f64)| round_f32(rng.random_range(lo..=hi));
        Self {
            tilt: u(TILT),
            thickness: u(THICKNESS),
            scale: u(SCALE),
            offset_x: u(OFFSET),
            offset_y: u(OFFSET),
            intensity: u(INTENSITY),
        }
    }

    /// True when every factor lies in its generator range. Zero intensity is
    /// accepted for probing.
    pub fn in_range(&self) -> bool {
        use ranges::*;
        within(self.tilt, TILT)
            && within(self.thickness, THICKNESS)
            && within(self.scale, SCALE)
            && within(self.offset_x, OFFSET)
            && within(self.offset_y, OFFSET)
            && (within(self.intensity, INTENSITY) || self.intensity == 0.0)
    }
}

/// Speaking factors of a spoken digit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioStyle {
    /// Voiced frames.
    pub duration: usize,
    pub amplitude: f64,
    /// Channel shift of both formants.
    pub pitch: i32,
    /// Silent frames before the voiced part.
    pub onset: usize,
}

impl AudioStyle {
    pub fn new(duration: usize, amplitude: f64, pitch: i32, onset: usize) -> Self {
        Self {
            duration,
            amplitude,
            pitch,
            onset,
        }
    }

    /// Total frame count `T`.
    pub fn frames(&self) -> usize {
        self.onset + self.duration
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, t_min: usize, t_max: usize) -> Self {
        use ranges::*;
        let duration = rng.random_range(t_min..=t_max - MAX_ONSET);
        let amplitude = round_f32(rng.random_range(AMPLITUDE.0..=AMPLITUDE.1));
        let pitch = rng.random_range(PITCH.0..=PITCH.1);
        let onset = rng.random_range(0..=MAX_ONSET);
        Self::new(duration, amplitude, pitch, onset)
    }
}

fn font_pixel(identity: u8, row: usize, col: usize) -> bool {
    FONT[identity as usize][row].as_bytes()[col] == b'#'
}

/// Ink field of a glyph after dilation: `GLYPH_SIDE²` values in `[0, 1]`.
fn glyph_field(identity: u8, thickness: f64) -> Vec<f64> {
    let n = GLYPH_SIDE;
    let on: Vec<(f64, f64)> = (0..n * n)
        .filter(|&p| font_pixel(identity, (p / n) * 7 / n, (p % n) * 5 / n))
        .map(|p| ((p / n) as f64, (p % n) as f64))
        .collect();
    (0..n * n)
        .map(|p| {
            let (y, x) = ((p / n) as f64, (p % n) as f64);
            let d2 = on
                .iter()
                .map(|&(oy, ox)| (oy - y) * (oy - y) + (ox - x) * (ox - x))
                .fold(f64::INFINITY, f64::min);
            (thickness + 0.5 - d2.sqrt()).clamp(0.0, 1.0)
        })
        .collect()
}

fn bilinear(field: &[f64], side: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| {
        if yy < 0.0 || xx < 0.0 || yy >= side as f64 || xx >= side as f64 {
            0.0
        } else {
            field[yy as usize * side + xx as usize]
        }
    };
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0)) + fy * ((1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0))
}

fn render(identity: u8, style: &ImageStyle, mut noise: Option<&mut ChaCha8Rng>) -> Result<Vec<f64>> {
    check_identity(identity)?;
    if !(style.scale > 0.0) || !style.thickness.is_finite() || !style.tilt.is_finite() {
        return Err(Error::InvalidArgument(format!("bad image style {style:?}")));
    }
    let field = glyph_field(identity, style.thickness.max(0.0));
    let half = IMAGE_SIDE as f64 / 2.0;
    let ghalf = GLYPH_SIDE as f64 / 2.0;
    let mut out = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    for py in 0..IMAGE_SIDE {
        for px in 0..IMAGE_SIDE {
            let v = (py as f64 + 0.5 - half - style.offset_y) / style.scale;
            let u = (px as f64 + 0.5 - half - style.offset_x) / style.scale;
            let gx = u + style.tilt * v + ghalf - 0.5;
            let gy = v + ghalf - 0.5;
            let mut val = style.intensity * bilinear(&field, GLYPH_SIDE, gy, gx);
            if let Some(rng) = noise.as_deref_mut() {
                val += clipped_noise(rng, IMAGE_NOISE);
            }
            out.push(round_f32(val.clamp(0.0, 1.0)));
        }
    }
    Ok(out)
}

/// A 28×28 written digit, row-major, with pixel noise drawn from `seed`.
pub fn render_glyph(identity: u8, style: &ImageStyle, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    render(identity, style, Some(&mut rng))
}

/// Noise-free rendering.
pub fn render_glyph_clean(identity: u8, style: &ImageStyle) -> Result<Vec<f64>> {
    render(identity, style, None)
}

/// Clean voiced frame values for one digit: `duration × feat_dim`.
pub(crate) fn voiced_template(identity: u8, duration: usize, pitch: f64, feat_dim: usize) -> Vec<f64> {
    let [a1, b1, a2, b2] = FORMANTS[identity as usize];
    let s = (feat_dim as f64 - 1.0) / 7.0;
    let w = FORMANT_WIDTH * s.max(1.0);
    let bump = |c: f64, f: f64| (-(c - f) * (c - f) / (2.0 * w * w)).exp();
    let mut out = Vec::with_capacity(duration * feat_dim);
    for t in 0..duration {
        let u = if duration > 1 { t as f64 / (duration - 1) as f64 } else { 0.0 };
        let f1 = s * (a1 + (b1 - a1) * u + pitch);
        let f2 = s * (a2 + (b2 - a2) * u + pitch);
        let env = 0.6 + 0.4 * (std::f64::consts::PI * u).sin();
        for c in 0..feat_dim {
            let c = c as f64;
            out.push(env * (bump(c, f1) + SECOND_FORMANT_GAIN * bump(c, f2)));
        }
    }
    out
}

/// A spoken digit as `T × feat_dim` frames, row-major, `T = onset + duration`.
pub fn synth_audio(identity: u8, style: &AudioStyle, feat_dim: usize, t_range: (usize, usize), seed: u64) -> Result<Vec<f64>> {
    check_identity(identity)?;
    let t = style.frames();
    if t < t_range.0 || t > t_range.1 || style.duration == 0 {
        return Err(Error::InvalidArgument(format!(
            "audio length {t} outside [{}, {}]",
            t_range.0, t_range.1
        )));
    }
    if feat_dim < 2 {
        return Err(Error::InvalidArgument("feat_dim must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voiced = voiced_template(identity, style.duration, style.pitch as f64, feat_dim);
    let amp = style.amplitude;
    let mut out = vec![0.0; style.onset * feat_dim];
    out.extend(voiced.iter().map(|v| amp * v));
    for v in &mut out {
        *v = round_f32(*v + clipped_noise(&mut rng, AUDIO_NOISE));
    }
    Ok(out)
}
