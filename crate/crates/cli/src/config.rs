//! Run configuration file (TOML).
//!
//! ```toml
//! seed = 42
//! manifest = "data/manifest.txt"
//! out_dir = "runs/leaf"
//! pretrained = "imagenet.ckpt"   # optional
//! classes = 6                    # optional; replaces a mismatched pretrained head
//!
//! [train]
//! learning_rate = 0.001
//! batch_size = 8
//! max_epochs = 100
//! freeze_backbone = false
//! checkpoint_every = 0
//! precision = "f32"              # or "f64"
//! momentum = 0.0
//! weight_decay = 0.0
//! input_size = 224
//! skip_unreadable = false
//!
//! [augment]
//! enabled = true
//! rotation_max_deg = 30.0
//! translate_max_frac = 0.1
//! flip_prob = 0.5
//! scale_range = [0.8, 1.2]
//! seed = 42
//!
//! [normalization]
//! mean = [0.485, 0.456, 0.406]
//! std = [0.229, 0.224, 0.225]
//! ```
//!
//! Every key is optional. Relative paths resolve against the file's
//! directory. Precedence: built-in defaults < file < command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use leafnet::data::{AugmentConfig, Normalization};
use leafnet::train::{Precision, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub classes: Option<usize>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub augment: AugmentSection,
    pub normalization: Option<Normalization>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub freeze_backbone: Option<bool>,
    pub checkpoint_every: Option<usize>,
    pub precision: Option<Precision>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub input_size: Option<usize>,
    pub skip_unreadable: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub enabled: Option<bool>,
    pub rotation_max_deg: Option<f64>,
    pub translate_max_frac: Option<f64>,
    pub flip_prob: Option<f64>,
    pub scale_range: Option<[f64; 2]>,
    pub seed: Option<u64>,
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl FileConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| line_of(text, s.start));
            (line, e.message().to_owned())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = match Self::parse(&text) {
            Ok(c) => c,
            Err((line, msg)) => bail!("{}:{line}: {msg}", path.display()),
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.out_dir, &mut cfg.pretrained].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Command-line values; `None` means "not given".
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub classes: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub freeze_backbone: bool,
    pub input_size: Option<usize>,
    pub precision: Option<Precision>,
    pub no_augment: bool,
}

/// Fully merged configuration, echoed before every run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    pub train: TrainConfig,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunConfig {
    pub fn merge(file: FileConfig, flags: Overrides) -> Result<Self> {
        let mut t = TrainConfig::default();
        let s = file.train;
        set(&mut t.learning_rate, s.learning_rate);
        set(&mut t.batch_size, s.batch_size);
        set(&mut t.max_epochs, s.max_epochs);
        set(&mut t.freeze_backbone, s.freeze_backbone);
        set(&mut t.checkpoint_every, s.checkpoint_every);
        set(&mut t.precision, s.precision);
        set(&mut t.momentum, s.momentum);
        set(&mut t.weight_decay, s.weight_decay);
        set(&mut t.input_size, s.input_size);
        set(&mut t.skip_unreadable, s.skip_unreadable);
        set(&mut t.normalization, file.normalization);

        let seed = flags.seed.or(file.seed).unwrap_or(42);
        t.seed = seed;

        let a = file.augment;
        let mut aug = AugmentConfig {
            seed,
            ..AugmentConfig::default()
        };
        set(&mut aug.rotation_max_deg, a.rotation_max_deg);
        set(&mut aug.translate_max_frac, a.translate_max_frac);
        set(&mut aug.flip_prob, a.flip_prob);
        set(&mut aug.scale_range, a.scale_range);
        set(&mut aug.seed, a.seed);
        let enabled = a.enabled.unwrap_or(true) && !flags.no_augment;
        t.augment = enabled.then_some(aug);

        set(&mut t.learning_rate, flags.learning_rate);
        set(&mut t.batch_size, flags.batch_size);
        set(&mut t.max_epochs, flags.max_epochs);
        set(&mut t.input_size, flags.input_size);
        set(&mut t.precision, flags.precision);
        t.freeze_backbone |= flags.freeze_backbone;
        t.validate()?;

        let Some(manifest) = flags.manifest.or(file.manifest) else {
            bail!("no manifest given (use --manifest or `manifest` in the config file)");
        };
        let Some(out_dir) = flags.out_dir.or(file.out_dir) else {
            bail!("no output directory given (use --out or `out_dir` in the config file)");
        };
        let pretrained = flags.pretrained.or(file.pretrained);
        if !manifest.is_file() {
            bail!("manifest {} does not exist", manifest.display());
        }
        if let Some(p) = &pretrained {
            if !p.is_file() {
                bail!("pretrained checkpoint {} does not exist", p.display());
            }
        }
        Ok(Self {
            seed,
            manifest,
            out_dir,
            pretrained,
            classes: flags.classes.or(file.classes),
            train: t,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
