mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use leafnet::data::image::load_and_resize;
use leafnet::data::{canonical_classes, scan_directory, split_dataset, DatasetManifest, Normalization, OnError, Split};
use leafnet::metrics::{compute_report, ConfusionMatrix, Reference, Rounding, DEFAULT_TOLERANCE};
use leafnet::model::{build_resnet34, Checkpoint, HeadPolicy, ModelSpec, ResNet};
use leafnet::ops::loss::softmax;
use leafnet::train::{argmax_rows, evaluate, stored_classes, EvalOptions, Precision, Trainer};
use leafnet::{Scalar, Tensor};

use config::{FileConfig, Overrides, RunConfig};

const PUBLISHED_MATRIX: &str = include_str!("../../../fixtures/published_confusion.csv");
const PUBLISHED_METRICS: &str = include_str!("../../../fixtures/published_metrics.txt");

/// Exit status when some, but not all, images in `predict` failed.
const PARTIAL_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "leafnet", version, about = "Apple leaf disease classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a directory of class subfolders and write a stratified split manifest.
    Split {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        ratio: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated class order (defaults to the directory names).
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
    },
    /// Train or fine-tune; writes best.ckpt, last.ckpt and epochs.csv.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Initialize from this checkpoint.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        /// Replace a pretrained head of a different size with this many classes.
        #[arg(long)]
        classes: Option<usize>,
        /// Continue a run from a checkpoint written by `train`.
        #[arg(long, conflicts_with = "pretrained")]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        input_size: Option<usize>,
        #[arg(long)]
        freeze_backbone: bool,
        #[arg(long)]
        no_augment: bool,
        #[arg(long, value_parser = parse_precision)]
        precision: Option<Precision>,
    },
    /// Evaluate a checkpoint on one split; writes confusion.csv, report.txt, report.json.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "val", value_parser = parse_split)]
        split: Split,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value = "truncate", value_parser = parse_rounding)]
        rounding: Rounding,
    },
    /// Classify images with a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "image", required = true, num_args = 1..)]
        images: Vec<PathBuf>,
    },
    /// Per-class metrics from a confusion matrix CSV.
    Metrics {
        #[arg(long)]
        cm: PathBuf,
        /// `key = value` reference values to compare against.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value = "truncate", value_parser = parse_rounding)]
        rounding: Rounding,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        text: Option<PathBuf>,
    },
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(format!("expected f32 or f64, got {s:?}")),
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: leafnet::Error| e.to_string())
}

fn parse_rounding(s: &str) -> Result<Rounding, String> {
    s.parse().map_err(|e: leafnet::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Split { data_dir, ratio, seed, out, classes } => cmd_split(&data_dir, ratio, seed, &out, classes),
        Command::Train {
            manifest,
            config,
            pretrained,
            classes,
            resume,
            out,
            seed,
            lr,
            batch_size,
            epochs,
            input_size,
            freeze_backbone,
            no_augment,
            precision,
        } => {
            let flags = Overrides {
                seed,
                manifest,
                out_dir: out,
                pretrained,
                classes,
                learning_rate: lr,
                batch_size,
                max_epochs: epochs,
                freeze_backbone,
                input_size,
                precision,
                no_augment,
            };
            cmd_train(config.as_deref(), flags, resume.as_deref())
        }
        Command::Eval { manifest, split, checkpoint, out, batch_size, rounding } => {
            cmd_eval(&manifest, split, &checkpoint, out.as_deref(), batch_size, rounding)
        }
        Command::Predict { checkpoint, images } => cmd_predict(&checkpoint, &images),
        Command::Metrics { cm, reference, rounding, tolerance, json, text } => {
            cmd_metrics(&cm, reference.as_deref(), rounding, tolerance, json.as_deref(), text.as_deref())
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn count_table(m: &DatasetManifest) -> String {
    let width = m.classes.iter().map(String::len).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>8}  {:>10}  {:>6}\n", "Class", "Training", "Validation", "Total");
    let (mut tt, mut tv) = (0, 0);
    for (name, [t, v]) in m.classes.iter().zip(m.class_counts()) {
        let _ = writeln!(out, "{name:<width$}  {t:>8}  {v:>10}  {:>6}", t + v);
        tt += t;
        tv += v;
    }
    let _ = writeln!(out, "{:<width$}  {tt:>8}  {tv:>10}  {:>6}", "Total", tt + tv);
    out
}

fn cmd_split(data_dir: &Path, ratio: f64, seed: u64, out: &Path, classes: Option<Vec<String>>) -> Result<ExitCode> {
    let (names, samples) = scan_directory(data_dir, classes.as_deref())?;
    let manifest = split_dataset(&samples, &names, ratio, seed)?;
    manifest.save(out)?;
    println!("seed: {seed}");
    println!("ratio: {ratio}");
    print!("{}", count_table(&manifest));
    println!("manifest: {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(config: Option<&Path>, flags: Overrides, resume: Option<&Path>) -> Result<ExitCode> {
    let file = match config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let cfg = RunConfig::merge(file, flags)?;
    println!("# effective configuration");
    print!("{}", cfg.to_toml());
    println!("# seed: {}", cfg.seed);
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    match cfg.train.precision {
        Precision::F32 => train_with::<f32>(&cfg, &manifest, resume),
        Precision::F64 => train_with::<f64>(&cfg, &manifest, resume),
    }
}

fn train_with<T: Scalar>(cfg: &RunConfig, manifest: &DatasetManifest, resume: Option<&Path>) -> Result<ExitCode> {
    let k = manifest.classes.len();
    if let Some(c) = cfg.classes {
        if c != k {
            bail!("--classes {c} disagrees with the manifest's {k} classes");
        }
    }
    let mut trainer = if let Some(path) = resume {
        Trainer::<T>::resume(path, cfg.train.clone()).with_context(|| format!("cannot resume from {}", path.display()))?
    } else {
        let model = match &cfg.pretrained {
            Some(path) => {
                let policy = if cfg.classes.is_some() { HeadPolicy::Replace(k) } else { HeadPolicy::Expect(k) };
                ResNet::<T>::load(path, policy)
                    .with_context(|| format!("cannot load pretrained weights from {}", path.display()))?
                    .with_input_size(cfg.train.input_size)?
            }
            None => {
                let spec = ModelSpec {
                    input_size: cfg.train.input_size,
                    ..ModelSpec::with_classes(k)
                };
                build_resnet34(spec, cfg.seed)?
            }
        };
        Trainer::new(model, cfg.train.clone())?
    };
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("cannot create {}", cfg.out_dir.display()))?;
    std::fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml())?;
    println!("epoch  train_loss  train_acc  val_loss  val_acc  seconds");
    trainer.run(manifest, Some(&cfg.out_dir), |l| {
        println!(
            "{:>5}  {:>10.4}  {:>9.2}  {:>8.4}  {:>7.2}  {:>7.1}",
            l.epoch, l.train_loss, l.train_accuracy, l.val_loss, l.val_accuracy, l.wall_time_s
        );
    })?;
    if let (Some((best, epoch)), Some(last)) = (trainer.best(), trainer.logs().last()) {
        println!("best validation accuracy: {best:.2}% (epoch {epoch})");
        println!("final validation accuracy: {:.2}% (epoch {})", last.val_accuracy, last.epoch);
    }
    println!("outputs: {}", cfg.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

/// Class names stored by `train`, else the canonical six, else generic labels.
fn checkpoint_classes(ckpt: &Checkpoint, k: usize) -> Result<Vec<String>> {
    Ok(match stored_classes(ckpt)? {
        Some(c) if c.len() == k => c,
        Some(c) => bail!("checkpoint lists {} class names for a {k}-way head", c.len()),
        None if k == 6 => canonical_classes(),
        None => (0..k).map(|i| format!("class{i}")).collect(),
    })
}

fn cmd_eval(
    manifest_path: &Path,
    split: Split,
    checkpoint: &Path,
    out: Option<&Path>,
    batch_size: usize,
    rounding: Rounding,
) -> Result<ExitCode> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ResNet::<f32>::from_checkpoint(&ckpt, HeadPolicy::Keep)?;
    if model.num_classes() != manifest.classes.len() {
        bail!(
            "checkpoint has {} classes, manifest {} has {}",
            model.num_classes(),
            manifest_path.display(),
            manifest.classes.len()
        );
    }
    if let Some(stored) = stored_classes(&ckpt)? {
        if stored != manifest.classes {
            bail!("checkpoint classes {stored:?} differ from manifest classes {:?}", manifest.classes);
        }
    }
    let opts = EvalOptions {
        batch_size,
        normalization: Normalization::default(),
        on_error: OnError::Abort,
    };
    let (cm, loss) = evaluate(&model, &manifest, split, &opts)?;
    let report = compute_report(&cm)?;
    println!("split: {split} ({} samples)", cm.total());
    println!("mean loss: {loss:.6}");
    print!("{}", report.render_text(rounding));
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        std::fs::write(dir.join("confusion.csv"), cm.to_csv())?;
        std::fs::write(dir.join("report.txt"), report.render_text(rounding))?;
        std::fs::write(dir.join("report.json"), report.to_json())?;
        println!("outputs: {}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(checkpoint: &Path, images: &[PathBuf]) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ResNet::<f32>::from_checkpoint(&ckpt, HeadPolicy::Keep)?;
    let classes = checkpoint_classes(&ckpt, model.num_classes())?;
    let size = model.spec().input_size;
    let width = classes.iter().map(String::len).max().unwrap_or(0);
    let mut failures = 0;
    for path in images {
        let probs = load_and_resize(path, size, &Normalization::default())
            .and_then(|x| x.reshape([1, 3, size, size]))
            .and_then(|x| model.predict(&x))
            .and_then(|logits| softmax(&logits.cast::<f64>()));
        let probs: Tensor<f64> = match probs {
            Ok(p) => p,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failures += 1;
                continue;
            }
        };
        let p = probs.data();
        let top = argmax_rows(&probs)[0];
        println!("{}: {} ({:.6})", path.display(), classes[top], p[top]);
        for (name, v) in classes.iter().zip(p) {
            println!("  {name:<width$}  {v:.6}");
        }
    }
    Ok(match failures {
        0 => ExitCode::SUCCESS,
        n if n == images.len() => ExitCode::FAILURE,
        _ => ExitCode::from(PARTIAL_FAILURE),
    })
}

fn cmd_metrics(
    cm_path: &Path,
    reference: Option<&Path>,
    rounding: Rounding,
    tolerance: f64,
    json: Option<&Path>,
    text: Option<&Path>,
) -> Result<ExitCode> {
    let raw = std::fs::read_to_string(cm_path).with_context(|| format!("cannot read {}", cm_path.display()))?;
    let cm = ConfusionMatrix::parse_csv(&raw).with_context(|| format!("in {}", cm_path.display()))?;
    let mut report = compute_report(&cm)?;
    let reference = match reference {
        Some(p) => {
            let t = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            Some(Reference::parse(&t).with_context(|| format!("in {}", p.display()))?)
        }
        // the published matrix is recognised and compared with its printed values
        None if ConfusionMatrix::parse_csv(PUBLISHED_MATRIX).ok().as_ref() == Some(&cm) => {
            Some(Reference::parse(PUBLISHED_METRICS)?)
        }
        None => None,
    };
    if let Some(r) = &reference {
        report.note_discrepancies(r, rounding, tolerance)?;
    }
    let rendered = report.render_text(rounding);
    print!("{rendered}");
    if let Some(p) = text {
        std::fs::write(p, &rendered).with_context(|| format!("cannot write {}", p.display()))?;
    }
    if let Some(p) = json {
        std::fs::write(p, report.to_json()).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}
