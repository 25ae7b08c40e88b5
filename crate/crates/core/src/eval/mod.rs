//! Clustering metrics, latent export and generation grids over a frozen model.

pub mod cluster;
pub mod grid;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::oracle::{image_mass, measured_duration, AudioOracle, ImageOracle};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::networks::{LatentKind, Modality, ModelKind, PvaeModel};

pub use cluster::{inertia_curve, kmeans, kmeans_best, weighted_purity, ClusterResult};
pub use grid::{cross_modal_grid, grid_pgm, render_grid_pgm, style_transfer_grid, Cell, GenerationGrid};

const ENCODE_CHUNK: usize = 256;
pub const TABLE1_K: usize = 10;

/// Posterior means from a unimodal encoder, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub zs: Vec<Vec<f64>>,
    pub style: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

pub fn encode_indices(model: &PvaeModel, dataset: &Dataset, modality: Modality, indices: &[usize]) -> Result<Encoded> {
    if !model.kind().has(modality) {
        return Err(Error::MissingModality(modality.name()));
    }
    let mut out = Encoded {
        zs: Vec::with_capacity(indices.len()),
        style: Vec::with_capacity(indices.len()),
        labels: Vec::with_capacity(indices.len()),
    };
    for chunk in indices.chunks(ENCODE_CHUNK) {
        let (zs, style) = match modality {
            Modality::Audio => model.infer_unimodal_audio(&dataset.audio_batch(chunk)?)?,
            Modality::Image => model.infer_unimodal_image(&dataset.image_batch(chunk)?)?,
        };
        for (b, &i) in chunk.iter().enumerate() {
            out.zs.push(zs.mean_row(b).to_vec());
            out.style.push(style.mean_row(b).to_vec());
            out.labels.push(match modality {
                Modality::Audio => dataset.audio[i].identity,
                Modality::Image => dataset.images[i].identity,
            });
        }
    }
    Ok(out)
}

pub fn encode(model: &PvaeModel, dataset: &Dataset, modality: Modality) -> Result<Encoded> {
    let n = match modality {
        Modality::Audio => dataset.audio.len(),
        Modality::Image => dataset.images.len(),
    };
    encode_indices(model, dataset, modality, &(0..n).collect::<Vec<_>>())
}

/// Which coordinates to cluster or export.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentChoice {
    Latent(LatentKind),
    /// Semantic and style means side by side; the only latent of a baseline VAE.
    Joint,
}

impl LatentChoice {
    pub fn name(self) -> &'static str {
        match self {
            LatentChoice::Latent(k) => k.name(),
            LatentChoice::Joint => "z",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "zs" => LatentChoice::Latent(LatentKind::Semantic),
            "za" => LatentChoice::Latent(LatentKind::AudioStyle),
            "zi" => LatentChoice::Latent(LatentKind::ImageStyle),
            "z" => LatentChoice::Joint,
            _ => return Err(Error::InvalidArgument(format!("unknown latent `{s}`"))),
        })
    }

    /// The latent choices reported for `modality` of a `kind` model.
    pub fn reported(kind: ModelKind, modality: Modality) -> Vec<Self> {
        match kind {
            ModelKind::Pvae => vec![
                LatentChoice::Latent(LatentKind::Semantic),
                LatentChoice::Latent(LatentKind::style_of(modality)),
            ],
            _ => vec![LatentChoice::Joint],
        }
    }
}

impl Encoded {
    pub fn points(&self, which: LatentChoice, modality: Modality) -> Result<Vec<Vec<f64>>> {
        match which {
            LatentChoice::Latent(LatentKind::Semantic) => Ok(self.zs.clone()),
            LatentChoice::Latent(k) if k == LatentKind::style_of(modality) => Ok(self.style.clone()),
            LatentChoice::Latent(k) => Err(Error::InvalidArgument(format!(
                "latent {} is not inferred from {}",
                k.name(),
                modality.name()
            ))),
            LatentChoice::Joint => Ok(self.zs.iter().zip(&self.style).map(|(a, b)| [a.as_slice(), b].concat()).collect()),
        }
    }
}

/// One metrics.csv row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub model: String,
    pub dataset: String,
    pub modality: Modality,
    pub latent: String,
    pub k: usize,
    pub purity: f64,
    pub seed: u64,
}

pub const METRICS_HEADER: &str = "model,dataset,modality,latent,k,purity,seed";

impl MetricRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.model,
            self.dataset,
            self.modality.name(),
            self.latent,
            self.k,
            self.purity,
            self.seed
        )
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Weighted purity of a best-of-restarts k-means on the given points.
pub fn cluster_purity(points: &[Vec<f64>], labels: &[u8], k: usize, seed: u64, restarts: usize) -> Result<f64> {
    let r = kmeans_best(points, k, seed, restarts)?;
    weighted_purity(&r.assignments, labels)
}

/// Purity of k-means (k = 10) on unimodal posterior means, for every
/// modality the model has and every latent it reports.
pub fn table1(model: &PvaeModel, dataset: &Dataset, dataset_name: &str, seed: u64, restarts: usize) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for modality in [Modality::Audio, Modality::Image] {
        if !model.kind().has(modality) {
            continue;
        }
        let enc = encode(model, dataset, modality)?;
        for which in LatentChoice::reported(model.kind(), modality) {
            let points = enc.points(which, modality)?;
            rows.push(MetricRow {
                model: model.kind().name().into(),
                dataset: dataset_name.into(),
                modality,
                latent: which.name().into(),
                k: TABLE1_K,
                purity: cluster_purity(&points, &enc.labels, TABLE1_K, seed, restarts)?,
                seed,
            });
        }
    }
    Ok(rows)
}

/// Latent means with identity and ground-truth style, one row per sample.
pub fn export_latents(model: &PvaeModel, dataset: &Dataset, which: LatentChoice, modality: Modality) -> Result<String> {
    let enc = encode(model, dataset, modality)?;
    let points = enc.points(which, modality)?;
    let dim = points.first().map_or(0, Vec::len);
    let mut s = String::from("index,identity,");
    match modality {
        Modality::Audio => s.push_str("duration,amplitude,pitch,onset"),
        Modality::Image => s.push_str("tilt,thickness,scale,offset_x,offset_y,intensity"),
    }
    for d in 0..dim {
        write!(s, ",mu{d}").unwrap();
    }
    s.push('\n');
    for (i, p) in points.iter().enumerate() {
        write!(s, "{i},{}", enc.labels[i]).unwrap();
        match modality {
            Modality::Audio => {
                let st = &dataset.audio[i].style;
                write!(s, ",{},{},{},{}", st.duration, st.amplitude, st.pitch, st.onset).unwrap()
            }
            Modality::Image => match &dataset.images[i].style {
                Some(st) => write!(
                    s,
                    ",{},{},{},{},{},{}",
                    st.tilt, st.thickness, st.scale, st.offset_x, st.offset_y, st.intensity
                )
                .unwrap(),
                None => s.push_str(",,,,,,"),
            },
        }
        for v in p {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Ranks starting at 1; ties share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Misaligned(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("rank correlation needs two points".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Oracle judgement of a generation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridScore {
    /// Fraction of body cells the oracle assigns their semantic source's identity.
    pub identity_accuracy: f64,
    /// Per column: Spearman between the style sources' ground truth and the
    /// cells' measured style.
    pub style_spearman: Vec<f64>,
    /// Per row: whether the reconstruction cell (same source in both roles)
    /// has the row's smallest MSE against the style source, when present.
    pub reconstruction_is_min: Vec<Option<bool>>,
}

impl GridScore {
    pub fn min_spearman(&self) -> f64 {
        self.style_spearman.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Ground-truth style value of a grid's style source: duration for audio,
/// stroke thickness for images.
fn style_truth(dataset: &Dataset, modality: Modality, index: usize) -> Result<f64> {
    let missing = || Error::InvalidArgument(format!("{} sample {index} has no style metadata", modality.name()));
    Ok(match modality {
        Modality::Audio => dataset.audio[index].style.duration as f64,
        Modality::Image => dataset.images[index].style.as_ref().ok_or_else(missing)?.thickness,
    })
}

fn measured_style(cell: &Cell) -> f64 {
    match cell {
        Cell::Image(p) => image_mass(p),
        Cell::Audio { frames, feat_dim } => measured_duration(frames, *feat_dim) as f64,
    }
}

pub fn score_grid(grid: &GenerationGrid, dataset: &Dataset) -> Result<GridScore> {
    let audio_oracle = AudioOracle::new(dataset.feat_dim());
    let image_oracle = ImageOracle::new();
    let semantic_id = |i: usize| match grid.semantic_modality {
        Modality::Audio => dataset.audio[i].identity,
        Modality::Image => dataset.images[i].identity,
    };
    let mut hits = 0;
    for row in &grid.cells {
        for (c, cell) in row.iter().enumerate() {
            let id = match cell {
                Cell::Image(p) => image_oracle.classify(p),
                Cell::Audio { frames, .. } => audio_oracle.classify(frames),
            };
            hits += usize::from(id == semantic_id(grid.semantic_sources[c]));
        }
    }
    let truth = grid
        .style_sources
        .iter()
        .map(|&i| style_truth(dataset, grid.target_modality, i))
        .collect::<Result<Vec<_>>>()?;
    let style_spearman = if grid.rows() < 2 {
        Vec::new()
    } else {
        (0..grid.cols())
            .map(|c| {
                let measured: Vec<f64> = grid.cells.iter().map(|row| measured_style(&row[c])).collect();
                spearman(&truth, &measured)
            })
            .collect::<Result<_>>()?
    };
    let reconstruction_is_min = grid
        .style_sources
        .iter()
        .enumerate()
        .map(|(r, &s)| {
            if grid.semantic_modality != grid.target_modality {
                return None;
            }
            let c = grid.semantic_sources.iter().position(|&x| x == s)?;
            let target = grid.style_inputs[r].values();
            let mse: Vec<f64> = grid.cells[r]
                .iter()
                .map(|cell| {
                    let v = cell.values();
                    let n = v.len().min(target.len()).max(1);
                    v.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64
                })
                .collect();
            Some(mse.iter().all(|&m| mse[c] <= m))
        })
        .collect();
    Ok(GridScore {
        identity_accuracy: hits as f64 / (grid.rows() * grid.cols()) as f64,
        style_spearman,
        reconstruction_is_min,
    })
}

/// One index per identity (its first sample) in identity order.
pub fn first_of_each_identity(by_identity: &[Vec<usize>]) -> Vec<usize> {
    by_identity.iter().filter_map(|v| v.first().copied()).collect()
}

/// `n` style sources at evenly spaced quantiles of the ground-truth style
/// value, drawn from the whole split.
pub fn style_sources_by_quantile(dataset: &Dataset, modality: Modality, n: usize) -> Result<Vec<usize>> {
    let count = match modality {
        Modality::Audio => dataset.audio.len(),
        Modality::Image => dataset.images.len(),
    };
    if n == 0 || n > count {
        return Err(Error::InvalidArgument(format!("cannot pick {n} style sources from {count} samples")));
    }
    let mut order: Vec<(f64, usize)> = (0..count)
        .map(|i| Ok((style_truth(dataset, modality, i)?, i)))
        .collect::<Result<_>>()?;
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok((0..n)
        .map(|j| {
            let q = if n == 1 { 0.5 } else { j as f64 / (n - 1) as f64 };
            let at = ((count - 1) as f64 * (0.05 + 0.9 * q)).round() as usize;
            order[at].1
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{GeneratorConfig, Split};
    use crate::networks::ArchConfig;

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
        let cfg = GeneratorConfig {
            n_train: 20,
            n_test: 20,
            ..GeneratorConfig::default()
        };
        (
            PvaeModel::new(arch, ModelKind::Pvae, 1).unwrap(),
            Dataset::generate(&cfg, Split::Test, 3).unwrap(),
        )
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_known_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // d = (0, 1, -1, 0) with no ties: 1 - 6·2 / (4·15) = 0.8
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn export_shape_and_determinism() {
        let (m, d) = tiny();
        let a = export_latents(&m, &d, LatentChoice::Latent(LatentKind::Semantic), Modality::Image).unwrap();
        let b = export_latents(&m, &d, LatentChoice::Latent(LatentKind::Semantic), Modality::Image).unwrap();
        assert_eq!(a, b);
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines.len(), 1 + d.images.len());
        assert!(lines.iter().all(|l| l.split(',').count() == 2 + 6 + 3));
        let audio = export_latents(&m, &d, LatentChoice::Latent(LatentKind::AudioStyle), Modality::Audio).unwrap();
        assert!(audio.lines().all(|l| l.split(',').count() == 2 + 4 + 2));
        assert!(export_latents(&m, &d, LatentChoice::Latent(LatentKind::ImageStyle), Modality::Audio).is_err());
    }

    #[test]
    fn table1_rows() {
        let (m, d) = tiny();
        let rows = table1(&m, &d, "synthetic", 0, 1).unwrap();
        let names: Vec<_> = rows.iter().map(|r| (r.modality.name(), r.latent.as_str())).collect();
        assert_eq!(names, [("audio", "zs"), ("audio", "za"), ("image", "zs"), ("image", "zi")]);
        assert!(rows.iter().all(|r| (0.1..=1.0).contains(&r.purity) && r.k == 10));
        assert!(metrics_csv(&rows).starts_with("model,dataset,modality,latent,k,purity,seed\npvae,synthetic,audio,zs,10,"));
    }

    #[test]
    fn grid_shapes_and_pgm() {
        let (m, d) = tiny();
        let sem = [0, 1, 2];
        let sty = [3, 4];
        for (a, b) in [
            (Modality::Image, Modality::Image),
            (Modality::Audio, Modality::Audio),
            (Modality::Audio, Modality::Image),
            (Modality::Image, Modality::Audio),
        ] {
            let g = cross_modal_grid(&m, &d, a, &sem, b, &sty).unwrap();
            assert_eq!((g.rows(), g.cols()), (2, 3));
            assert!(g.cells.iter().all(|r| r.len() == 3));
            if b == Modality::Audio {
                for (r, &s) in sty.iter().enumerate() {
                    for cell in &g.cells[r] {
                        assert_eq!(cell.values().len(), d.audio[s].frames.len());
                    }
                }
            }
            let pgm = grid_pgm(&g);
            let text = String::from_utf8_lossy(&pgm[..20]).into_owned();
            let mut it = text.split_ascii_whitespace();
            assert_eq!(it.next(), Some("P5"));
            let w: usize = it.next().unwrap().parse().unwrap();
            let h: usize = it.next().unwrap().parse().unwrap();
            let header = format!("P5\n{w} {h}\n255\n").len();
            assert_eq!(pgm.len(), header + w * h);
            let score = score_grid(&g, &d).unwrap();
            assert_eq!(score.style_spearman.len(), 3);
        }
        assert!(cross_modal_grid(&m, &d, Modality::Image, &[], Modality::Image, &[0]).is_err());
    }

    #[test]
    fn image_pgm_layout() {
        let g = GenerationGrid {
            semantic_modality: Modality::Image,
            target_modality: Modality::Image,
            semantic_sources: vec![0],
            style_sources: vec![1],
            semantic_inputs: vec![Cell::Image(vec![1.0; 784])],
            style_inputs: vec![Cell::Image(vec![0.2; 784])],
            cells: vec![vec![Cell::Image(vec![0.0; 784])]],
        };
        let pgm = grid_pgm(&g);
        let header = b"P5\n57 57\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        let px = &pgm[header.len()..];
        let at = |x: usize, y: usize| px[y * 57 + x];
        assert_eq!(at(0, 0), 0);
        assert_eq!(at(28, 0), 128);
        assert_eq!(at(29, 0), 255);
        assert!((0..57).all(|x| at(x, 28) == 128));
        assert_eq!(at(0, 29), 51);
        assert_eq!(at(28, 56), 128);
        assert_eq!(at(56, 56), 0);
    }

    #[test]
    fn quantile_sources_are_ordered() {
        let (_, d) = tiny();
        let s = style_sources_by_quantile(&d, Modality::Image, 5).unwrap();
        let t: Vec<f64> = s.iter().map(|&i| d.images[i].style.unwrap().thickness).collect();
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
    }
}
