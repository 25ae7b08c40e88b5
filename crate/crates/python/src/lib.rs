//! Python bindings for the `pvae` crate.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pvae::checkpoint::Checkpoint;
use pvae::data::{Dataset, GeneratorConfig, NegativeMode, Split};
use pvae::eval::cluster::{inertia_curve, kmeans_best, weighted_purity};
use pvae::eval::{encode, table1, LatentChoice};
use pvae::gaussian::{self, DiagGaussian};
use pvae::networks::{ArchConfig, Modality, ModelKind, PvaeModel};
use pvae::trainer::{TrainConfig, Trainer};
use pvae::verify::{self, Level};

fn err(e: pvae::Error) -> PyErr {
    let msg = format!("pvae-error[{}]: {e}", e.code());
    match e {
        pvae::Error::Io { .. } => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn modality(name: &str) -> PyResult<Modality> {
    match name {
        "audio" => Ok(Modality::Audio),
        "image" => Ok(Modality::Image),
        other => Err(PyValueError::new_err(format!("unknown modality `{other}`"))),
    }
}

fn split(name: &str) -> PyResult<Split> {
    match name {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!("unknown split `{other}`"))),
    }
}

fn model_kind(name: &str) -> PyResult<ModelKind> {
    match name {
        "pvae" => Ok(ModelKind::Pvae),
        "vae-sp" => Ok(ModelKind::VaeAudio),
        "vae-im" => Ok(ModelKind::VaeImage),
        other => Err(PyValueError::new_err(format!("unknown model `{other}`"))),
    }
}

fn arch(name: &str) -> PyResult<ArchConfig> {
    match name {
        "desk" => Ok(ArchConfig::default()),
        "paper" => Ok(ArchConfig::paper()),
        "tiny" => Ok(verify::tiny_arch()),
        other => Err(PyValueError::new_err(format!("unknown arch `{other}`"))),
    }
}

/// Paired synthetic audio/image samples.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (split="train", seed=0, n_train=2000, n_test=1000, feat_dim=8, t_min=20, t_max=60))]
    fn generate(
        split: &str,
        seed: u64,
        n_train: usize,
        n_test: usize,
        feat_dim: usize,
        t_min: usize,
        t_max: usize,
    ) -> PyResult<Self> {
        let cfg = GeneratorConfig {
            n_train,
            n_test,
            feat_dim,
            t_min,
            t_max,
        };
        let s = self::split(split)?;
        Ok(Self {
            inner: Dataset::generate(&cfg, s, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Dataset::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.audio.len()
    }

    fn labels(&self, modality: &str) -> PyResult<Vec<u8>> {
        Ok(match self::modality(modality)? {
            Modality::Audio => self.inner.audio.iter().map(|s| s.identity).collect(),
            Modality::Image => self.inner.images.iter().map(|s| s.identity).collect(),
        })
    }

    /// Row-major 28×28 pixels of image `i`.
    fn image(&self, i: usize) -> PyResult<Vec<f64>> {
        self.inner
            .images
            .get(i)
            .map(|s| s.pixels.clone())
            .ok_or_else(|| PyValueError::new_err(format!("image index {i} out of range")))
    }

    /// Frames of audio sample `i`, one list per frame.
    fn audio(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        let f = self.inner.feat_dim();
        self.inner
            .audio
            .get(i)
            .map(|s| s.frames.chunks(f).map(<[f64]>::to_vec).collect())
            .ok_or_else(|| PyValueError::new_err(format!("audio index {i} out of range")))
    }

    fn metadata_csv(&self) -> String {
        self.inner.metadata_csv()
    }
}

/// A model together with its optimizer state.
#[pyclass(name = "Model")]
struct PyModel {
    trainer: Trainer,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (kind="pvae", arch="desk", seed=0, alpha_ch=0.1, alpha_cm=10.0, batch_size=64, lr=1e-3, uniform_negatives=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        arch: &str,
        seed: u64,
        alpha_ch: f64,
        alpha_cm: f64,
        batch_size: usize,
        lr: f64,
        uniform_negatives: bool,
    ) -> PyResult<Self> {
        let model = PvaeModel::new(self::arch(arch)?, model_kind(kind)?, seed).map_err(err)?;
        let mut cfg = TrainConfig {
            seed,
            batch_size,
            lr,
            epochs: 0,
            ..TrainConfig::default()
        };
        cfg.weights.alpha_ch = alpha_ch;
        cfg.weights.alpha_cm = alpha_cm;
        if uniform_negatives {
            cfg.negative_mode = NegativeMode::Uniform;
        }
        Ok(Self {
            trainer: Trainer::new(model, cfg).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).map_err(err)?;
        let cfg = ckpt.train.clone();
        Ok(Self {
            trainer: Trainer::resume(ckpt, cfg).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.trainer.checkpoint().save(&path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.trainer.model.kind().name()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.trainer.state.epoch
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.trainer.model.params().numel()
    }

    /// Trains for `epochs` more epochs; returns one dict per epoch.
    fn fit<'py>(&mut self, py: Python<'py>, dataset: &PyDataset, epochs: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.trainer.config.epochs = self.trainer.state.epoch + epochs;
        let logs = self.trainer.fit(&dataset.inner).map_err(err)?;
        logs.iter()
            .map(|l| {
                let d = PyDict::new(py);
                let b = &l.breakdown;
                d.set_item("epoch", l.epoch)?;
                for (k, v) in [
                    ("recon_audio", b.recon_audio),
                    ("recon_image", b.recon_image),
                    ("kl_za", b.kl_za),
                    ("kl_zi", b.kl_zi),
                    ("kl_zs", b.kl_zs),
                    ("coherence", b.coherence),
                    ("contrastive", b.contrastive),
                    ("total", b.total),
                ] {
                    d.set_item(k, v)?;
                }
                Ok(d)
            })
            .collect()
    }

    /// Posterior means from the unimodal encoder of `modality`: `(z_s, style)`.
    fn encode(&self, dataset: &PyDataset, modality: &str) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let e = encode(&self.trainer.model, &dataset.inner, self::modality(modality)?).map_err(err)?;
        Ok((e.zs, e.style))
    }

    /// Purity rows as reported in the Table-1 protocol.
    #[pyo3(signature = (dataset, seed=0, restarts=5))]
    fn table1<'py>(&self, py: Python<'py>, dataset: &PyDataset, seed: u64, restarts: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let rows = table1(&self.trainer.model, &dataset.inner, "synthetic", seed, restarts).map_err(err)?;
        rows.iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("model", &r.model)?;
                d.set_item("modality", r.modality.name())?;
                d.set_item("latent", &r.latent)?;
                d.set_item("k", r.k)?;
                d.set_item("purity", r.purity)?;
                Ok(d)
            })
            .collect()
    }

    /// Latent CSV export (`zs`, `za`, `zi` or `z`).
    fn export_latents(&self, dataset: &PyDataset, latent: &str, modality: &str) -> PyResult<String> {
        let which = LatentChoice::parse(latent).map_err(err)?;
        pvae::eval::export_latents(&self.trainer.model, &dataset.inner, which, self::modality(modality)?).map_err(err)
    }
}

/// Best-of-restarts k-means: `(assignments, inertia)`.
#[pyfunction]
#[pyo3(signature = (points, k, seed=0, restarts=5))]
fn kmeans(points: Vec<Vec<f64>>, k: usize, seed: u64, restarts: usize) -> PyResult<(Vec<usize>, f64)> {
    let r = kmeans_best(&points, k, seed, restarts).map_err(err)?;
    Ok((r.assignments, r.inertia))
}

#[pyfunction]
#[pyo3(name = "inertia_curve", signature = (points, k_min=2, k_max=20, seed=0, restarts=5))]
fn py_inertia_curve(points: Vec<Vec<f64>>, k_min: usize, k_max: usize, seed: u64, restarts: usize) -> PyResult<Vec<(usize, f64)>> {
    inertia_curve(&points, k_min, k_max, seed, restarts).map_err(err)
}

#[pyfunction]
#[pyo3(name = "weighted_purity")]
fn py_weighted_purity(assignments: Vec<usize>, labels: Vec<u8>) -> PyResult<f64> {
    weighted_purity(&assignments, &labels).map_err(err)
}

#[pyfunction]
fn kl_divergence(mean_q: Vec<f64>, log_var_q: Vec<f64>, mean_p: Vec<f64>, log_var_p: Vec<f64>) -> PyResult<f64> {
    let q = DiagGaussian::new(mean_q, log_var_q).map_err(err)?;
    let p = DiagGaussian::new(mean_p, log_var_p).map_err(err)?;
    gaussian::kl_divergence(&q, &p).map_err(err)
}

#[pyfunction]
fn log_prob(x: Vec<f64>, mean: Vec<f64>, log_var: Vec<f64>) -> PyResult<f64> {
    gaussian::log_prob(&x, &DiagGaussian::new(mean, log_var).map_err(err)?).map_err(err)
}

#[pyfunction]
fn rbf_kernel(mu: Vec<f64>, mu_prime: Vec<f64>) -> PyResult<f64> {
    gaussian::rbf_kernel(&mu, &mu_prime).map_err(err)
}

/// Runs the oracle suites; one `(name, passed, detail)` per check.
#[pyfunction]
#[pyo3(name = "verify", signature = (level="fast"))]
fn py_verify(level: &str) -> PyResult<Vec<(String, bool, String)>> {
    let level = match level {
        "fast" => Level::Fast,
        "full" => Level::Full,
        other => return Err(PyValueError::new_err(format!("unknown level `{other}`"))),
    };
    Ok(verify::run(level)
        .into_iter()
        .map(|c| (c.name.to_string(), c.passed, c.detail))
        .collect())
}

#[pymodule]
fn pvae_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(py_inertia_curve, m)?)?;
    m.add_function(wrap_pyfunction!(py_weighted_purity, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(log_prob, m)?)?;
    m.add_function(wrap_pyfunction!(rbf_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(py_verify, m)?)?;
    Ok(())
}
