//! Controlled generation grids and their PGM rendering.

use std::fs;
use std::path::Path;

use crate::data::synth::IMAGE_SIDE;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::networks::{Modality, PvaeModel};
use crate::tensor::Tensor;

use super::encode_indices;

/// One grid tile: an image or a `T × F` frame sequence.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Image(Vec<f64>),
    Audio { frames: Vec<f64>, feat_dim: usize },
}

impl Cell {
    fn from_dataset(dataset: &Dataset, modality: Modality, index: usize) -> Cell {
        match modality {
            Modality::Image => Cell::Image(dataset.images[index].pixels.clone()),
            Modality::Audio => Cell::Audio {
                frames: dataset.audio[index].frames.clone(),
                feat_dim: dataset.feat_dim(),
            },
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Cell::Image(p) => p,
            Cell::Audio { frames, .. } => frames,
        }
    }
}

/// Generated samples on the cross product of semantic and style sources.
///
/// `cells[r][c]` combines style source `r` with semantic source `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationGrid {
    pub semantic_modality: Modality,
    pub target_modality: Modality,
    pub semantic_sources: Vec<usize>,
    pub style_sources: Vec<usize>,
    pub semantic_inputs: Vec<Cell>,
    pub style_inputs: Vec<Cell>,
    pub cells: Vec<Vec<Cell>>,
}

impl GenerationGrid {
    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.semantic_sources.len()
    }
}

/// `z^s` from `semantic_modality` sources, the style latent from
/// `target_modality` sources, decoded into `target_modality`. Audio cells
/// take their length from the style source.
pub fn cross_modal_grid(
    model: &PvaeModel,
    dataset: &Dataset,
    semantic_modality: Modality,
    semantic_sources: &[usize],
    target_modality: Modality,
    style_sources: &[usize],
) -> Result<GenerationGrid> {
    if semantic_sources.is_empty() || style_sources.is_empty() {
        return Err(Error::InvalidArgument("grid needs at least one source per axis".into()));
    }
    let sem = encode_indices(model, dataset, semantic_modality, semantic_sources)?;
    let sty = encode_indices(model, dataset, target_modality, style_sources)?;
    let (ns, nt) = (semantic_sources.len(), style_sources.len());
    let (ds, dt) = (sem.zs[0].len(), sty.style[0].len());
    let mut zs = Vec::with_capacity(ns * nt * ds);
    let mut zt = Vec::with_capacity(ns * nt * dt);
    for r in 0..nt {
        for c in 0..ns {
            zs.extend_from_slice(&sem.zs[c]);
            zt.extend_from_slice(&sty.style[r]);
        }
    }
    let zs = Tensor::new(&[ns * nt, ds], zs)?;
    let zt = Tensor::new(&[ns * nt, dt], zt)?;
    let flat: Vec<Cell> = match target_modality {
        Modality::Image => {
            let out = model.decode_image(&zt, &zs)?;
            out.data()
                .chunks(IMAGE_SIDE * IMAGE_SIDE)
                .map(|c| Cell::Image(c.iter().map(|v| v.clamp(0.0, 1.0)).collect()))
                .collect()
        }
        Modality::Audio => {
            let f = dataset.feat_dim();
            let lengths: Vec<usize> = (0..nt)
                .flat_map(|r| std::iter::repeat_n(dataset.audio[style_sources[r]].frames.len() / f, ns))
                .collect();
            model
                .decode_audio(&zt, &zs, &lengths)?
                .into_iter()
                .map(|frames| Cell::Audio { frames, feat_dim: f })
                .collect()
        }
    };
    let mut it = flat.into_iter();
    let cells = (0..nt).map(|_| it.by_ref().take(ns).collect()).collect();
    Ok(GenerationGrid {
        semantic_modality,
        target_modality,
        semantic_sources: semantic_sources.to_vec(),
        style_sources: style_sources.to_vec(),
        semantic_inputs: semantic_sources
            .iter()
            .map(|&i| Cell::from_dataset(dataset, semantic_modality, i))
            .collect(),
        style_inputs: style_sources
            .iter()
            .map(|&i| Cell::from_dataset(dataset, target_modality, i))
            .collect(),
        cells,
    })
}

/// Both roles taken from the same modality.
pub fn style_transfer_grid(
    model: &PvaeModel,
    dataset: &Dataset,
    semantic_sources: &[usize],
    style_sources: &[usize],
    modality: Modality,
) -> Result<GenerationGrid> {
    cross_modal_grid(model, dataset, modality, semantic_sources, modality, style_sources)
}

const AUDIO_ROW_PX: usize = 3;
const SEPARATOR: u8 = 128;

/// 8-bit tile, `(width, height, pixels)`.
fn tile(cell: &Cell) -> (usize, usize, Vec<u8>) {
    match cell {
        Cell::Image(p) => (
            IMAGE_SIDE,
            IMAGE_SIDE,
            p.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        ),
        Cell::Audio { frames, feat_dim } => {
            let t = frames.len() / feat_dim;
            let lo = frames.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = frames.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            let h = feat_dim * AUDIO_ROW_PX;
            let mut px = vec![0u8; t * h];
            for y in 0..h {
                // highest channel at the top
                let ch = feat_dim - 1 - y / AUDIO_ROW_PX;
                for x in 0..t {
                    px[y * t + x] = (((frames[x * feat_dim + ch] - lo) / span) * 255.0).round() as u8;
                }
            }
            (t, h, px)
        }
    }
}

/// Tiles the grid into one binary PGM: semantic sources along the top row,
/// style sources down the left column, generated cells in the body.
pub fn grid_pgm(grid: &GenerationGrid) -> Vec<u8> {
    let blank = None;
    let mut rows: Vec<Vec<Option<&Cell>>> = vec![std::iter::once(blank).chain(grid.semantic_inputs.iter().map(Some)).collect()];
    for (r, row) in grid.cells.iter().enumerate() {
        rows.push(std::iter::once(Some(&grid.style_inputs[r])).chain(row.iter().map(Some)).collect());
    }
    let tiles: Vec<Vec<Option<(usize, usize, Vec<u8>)>>> =
        rows.iter().map(|r| r.iter().map(|c| c.map(tile)).collect()).collect();
    let tw = tiles.iter().flatten().flatten().map(|t| t.0).max().unwrap_or(1);
    let th = tiles.iter().flatten().flatten().map(|t| t.1).max().unwrap_or(1);
    let ncols = tiles[0].len();
    let width = ncols * tw + (ncols - 1);
    let height = tiles.len() * th + (tiles.len() - 1);
    let mut img = vec![SEPARATOR; width * height];
    for (ri, row) in tiles.iter().enumerate() {
        for (ci, t) in row.iter().enumerate() {
            let (x0, y0) = (ci * (tw + 1), ri * (th + 1));
            for y in 0..th {
                for x in 0..tw {
                    let v = match t {
                        Some((w, h, px)) if x < *w && y < *h => px[y * w + x],
                        _ => 0,
                    };
                    img[(y0 + y) * width + x0 + x] = v;
                }
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&img);
    out
}

pub fn render_grid_pgm(grid: &GenerationGrid, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, grid_pgm(grid)).map_err(|e| Error::io(path, e))
}
