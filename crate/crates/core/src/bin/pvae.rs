use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pvae::checkpoint::Checkpoint;
use pvae::config::RunConfig;
use pvae::data::idx::load_digits;
use pvae::data::{Dataset, Split};
use pvae::eval::{self, LatentChoice};
use pvae::networks::{Modality, ModelKind, PvaeModel};
use pvae::trainer::{truncate_log, Trainer, LOG_HEADER};
use pvae::verify::{self, Level};
use pvae::{Error, Result};

pub const TRAIN_FILE: &str = "train.pvds";
pub const TEST_FILE: &str = "test.pvds";
pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Parser)]
#[command(name = "pvae", version, about = "Partitioned multimodal VAE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Pvae,
    VaeSp,
    VaeIm,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Pvae => ModelKind::Pvae,
            ModelArg::VaeSp => ModelKind::VaeAudio,
            ModelArg::VaeIm => ModelKind::VaeImage,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Within,
    Cross,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Audio,
    Image,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Audio => Modality::Audio,
            ModalityArg::Image => Modality::Image,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Fast,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/test datasets.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// IDX image file whose digits replace the synthetic training images.
        #[arg(long, requires = "mnist_train_labels")]
        mnist_train_images: Option<PathBuf>,
        #[arg(long)]
        mnist_train_labels: Option<PathBuf>,
        #[arg(long, requires = "mnist_test_labels")]
        mnist_test_images: Option<PathBuf>,
        #[arg(long)]
        mnist_test_labels: Option<PathBuf>,
    },
    /// Train a model; writes the log and checkpoints.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        /// Sets alpha_cm to 0.
        #[arg(long)]
        no_cm: bool,
        /// Sets alpha_ch to 0.
        #[arg(long)]
        no_ch: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Purity table, inertia curves and latent exports.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Controlled generation grids as PGM images.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Modality of the generated cells.
        #[arg(long, value_enum)]
        modality: ModalityArg,
        /// Dataset indices supplying z^s (comma separated); defaults to one per identity.
        #[arg(long, value_delimiter = ',')]
        semantic_ids: Option<Vec<usize>>,
        /// Dataset indices supplying the style latent; defaults to style quantiles.
        #[arg(long, value_delimiter = ',')]
        style_ids: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Run the oracle suites.
    Verify {
        #[arg(long, value_enum, default_value = "fast")]
        level: LevelArg,
    },
}

fn split_file(data: &Path, split: SplitArg) -> PathBuf {
    data.join(match split {
        SplitArg::Train => TRAIN_FILE,
        SplitArg::Test => TEST_FILE,
    })
}

fn gen_data(cfg: &RunConfig, out: &Path, seed: u64, mnist: [Option<(PathBuf, PathBuf)>; 2]) -> Result<()> {
    for (split, file, real) in [(Split::Train, TRAIN_FILE, &mnist[0]), (Split::Test, TEST_FILE, &mnist[1])] {
        let mut d = Dataset::generate(&cfg.data, split, seed)?;
        if let Some((images, labels)) = real {
            d.replace_images(load_digits(images, labels)?)?;
            d.check_classes()?;
        }
        d.save(&out.join(file))?;
        d.write_metadata_csv(&out.join(format!("{}_metadata.csv", split.name())))?;
    }
    cfg.write_effective(out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    eval::write_text(path, text)
}

fn train(cfg: RunConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let dataset = Dataset::load(&data.join(TRAIN_FILE))?;
    if dataset.feat_dim() != cfg.arch.audio_feat_dim {
        return Err(Error::ConfigMismatch(format!(
            "dataset feat_dim {} vs arch audio_feat_dim {}",
            dataset.feat_dim(),
            cfg.arch.audio_feat_dim
        )));
    }
    let (trainer, mut rows) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load_expecting(path, &cfg.arch)?;
            if ckpt.kind != cfg.model {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint holds a {} model, config asks for {}",
                    ckpt.kind.name(),
                    cfg.model.name()
                )));
            }
            let done = ckpt.epoch;
            (Trainer::resume(ckpt, cfg.train.clone())?, truncate_log(&out.join(LOG_FILE), done)?)
        }
        None => {
            let model = PvaeModel::new(cfg.arch.clone(), cfg.model, cfg.train.seed)?;
            (Trainer::new(model, cfg.train.clone())?, Vec::new())
        }
    };
    cfg.write_effective(out)?;
    let mut trainer = trainer.with_output(out);
    let log_path = out.join(LOG_FILE);
    let write_log = |rows: &[String]| {
        let mut s = format!("{LOG_HEADER}\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        write(&log_path, &s)
    };
    write_log(&rows)?;
    while trainer.state.epoch < trainer.config.epochs {
        let log = trainer.run_epoch(&dataset)?;
        rows.push(log.csv_row());
        write_log(&rows)?;
        let every = trainer.config.checkpoint_every;
        if every > 0 && trainer.state.epoch % every == 0 {
            trainer
                .checkpoint()
                .save(&out.join(format!("checkpoint_epoch{:04}.ckpt", trainer.state.epoch)))?;
        }
    }
    trainer.checkpoint().save(&out.join(FINAL_CHECKPOINT))
}

fn evaluate(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path, split: SplitArg) -> Result<()> {
    let model = Checkpoint::load(checkpoint)?.model()?;
    let dataset = Dataset::load(&split_file(data, split))?;
    let e = &cfg.eval;
    let mut rows = Vec::new();
    for modality in [Modality::Audio, Modality::Image] {
        if !model.kind().has(modality) {
            continue;
        }
        let enc = eval::encode(&model, &dataset, modality)?;
        for which in LatentChoice::reported(model.kind(), modality) {
            let points = enc.points(which, modality)?;
            rows.push(eval::MetricRow {
                model: model.kind().name().into(),
                dataset: e.dataset_name.clone(),
                modality,
                latent: which.name().into(),
                k: e.k,
                purity: eval::cluster_purity(&points, &enc.labels, e.k, e.seed, e.restarts)?,
                seed: e.seed,
            });
            let csv = eval::export_latents(&model, &dataset, which, modality)?;
            write(&out.join(format!("latents_{}_{}.csv", modality.name(), which.name())), &csv)?;
            if matches!(which, LatentChoice::Joint) || which.name() == "zs" {
                let curve = eval::inertia_curve(&points, e.k_min, e.k_max, e.seed, e.restarts)?;
                let mut s = String::from("k,inertia\n");
                for (k, v) in curve {
                    s.push_str(&format!("{k},{v}\n"));
                }
                write(&out.join(format!("inertia_{}_{}.csv", modality.name(), which.name())), &s)?;
            }
        }
    }
    write(&out.join("metrics.csv"), &eval::metrics_csv(&rows))?;
    cfg.write_effective(out)
}

#[allow(clippy::too_many_arguments)]
fn generate(
    checkpoint: &Path,
    data: &Path,
    mode: Mode,
    target: Modality,
    semantic_ids: Option<Vec<usize>>,
    style_ids: Option<Vec<usize>>,
    out: &Path,
    split: SplitArg,
) -> Result<()> {
    let model = Checkpoint::load(checkpoint)?.model()?;
    let dataset = Dataset::load(&split_file(data, split))?;
    let source = match (mode, target) {
        (Mode::Within, m) => m,
        (Mode::Cross, Modality::Audio) => Modality::Image,
        (Mode::Cross, Modality::Image) => Modality::Audio,
    };
    let pool_len = |m: Modality| match m {
        Modality::Audio => dataset.audio.len(),
        Modality::Image => dataset.images.len(),
    };
    let semantic = match semantic_ids {
        Some(ids) => ids,
        None => eval::first_of_each_identity(&match source {
            Modality::Audio => dataset.audio_by_identity(),
            Modality::Image => dataset.images_by_identity(),
        }),
    };
    let style = match style_ids {
        Some(ids) => ids,
        None => eval::style_sources_by_quantile(&dataset, target, 5)?,
    };
    for (ids, m) in [(&semantic, source), (&style, target)] {
        if let Some(&bad) = ids.iter().find(|&&i| i >= pool_len(m)) {
            return Err(Error::InvalidArgument(format!(
                "index {bad} out of range for {} pool of {}",
                m.name(),
                pool_len(m)
            )));
        }
    }
    let grid = eval::cross_modal_grid(&model, &dataset, source, &semantic, target, &style)?;
    let stem = format!(
        "grid_{}_{}_to_{}",
        if mode == Mode::Within { "within" } else { "cross" },
        source.name(),
        target.name()
    );
    eval::render_grid_pgm(&grid, &out.join(format!("{stem}.pgm")))?;
    let mut s = String::from("row,col,style_source,semantic_source\n");
    for (r, &st) in style.iter().enumerate() {
        for (c, &se) in semantic.iter().enumerate() {
            s.push_str(&format!("{r},{c},{st},{se}\n"));
        }
    }
    write(&out.join(format!("{stem}.csv")), &s)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData {
            config,
            out,
            seed,
            mnist_train_images,
            mnist_train_labels,
            mnist_test_images,
            mnist_test_labels,
        } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            let pair = |a: Option<PathBuf>, b: Option<PathBuf>| a.zip(b);
            gen_data(
                &cfg,
                &out,
                seed,
                [pair(mnist_train_images, mnist_train_labels), pair(mnist_test_images, mnist_test_labels)],
            )?;
        }
        Command::Train {
            config,
            data,
            out,
            resume,
            model,
            no_cm,
            no_ch,
            epochs,
            seed,
        } => {
            let mut cfg = RunConfig::load_or_default(config.as_deref())?;
            if let Some(m) = model {
                cfg.model = m.into();
            }
            if no_cm {
                cfg.train.weights.alpha_cm = 0.0;
            }
            if no_ch {
                cfg.train.weights.alpha_ch = 0.0;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            train(cfg, &data, &out, resume.as_deref())?;
        }
        Command::Eval {
            config,
            checkpoint,
            data,
            out,
            split,
        } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            evaluate(&cfg, &checkpoint, &data, &out, split)?;
        }
        Command::Generate {
            checkpoint,
            data,
            mode,
            modality,
            semantic_ids,
            style_ids,
            out,
            split,
        } => generate(&checkpoint, &data, mode, modality.into(), semantic_ids, style_ids, &out, split)?,
        Command::Verify { level } => {
            let level = match level {
                LevelArg::Fast => Level::Fast,
                LevelArg::Full => Level::Full,
            };
            let results = verify::run(level);
            for r in &results {
                println!("{}", r.line());
            }
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("pvae-error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("pvae-error[verify]: one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("pvae-error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
