use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, Normalization, OnError};
use crate::error::{Error, Result};

/// Scalar type used for training arithmetic. Checkpoints always store f32.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Train only the classifier; backbone batchnorms run on their running
    /// statistics so the backbone stays exactly as loaded.
    pub freeze_backbone: bool,
    /// Also keep `epoch_NNNN.ckpt` every this many epochs (0 = never).
    pub checkpoint_every: usize,
    pub precision: Precision,
    pub momentum: f64,
    pub weight_decay: f64,
    pub input_size: usize,
    /// `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
    pub normalization: Normalization,
    /// Skip unreadable images instead of aborting.
    pub skip_unreadable: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 8,
            max_epochs: 100,
            seed: 42,
            freeze_backbone: false,
            checkpoint_every: 0,
            precision: Precision::F32,
            momentum: 0.0,
            weight_decay: 0.0,
            input_size: 224,
            augment: Some(AugmentConfig::default()),
            normalization: Normalization::default(),
            skip_unreadable: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.normalization.validate()
    }

    pub fn on_error(&self) -> OnError {
        if self.skip_unreadable {
            OnError::Skip
        } else {
            OnError::Abort
        }
    }
}

/// Per-epoch record. Accuracies are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// Counted from 1.
    pub epoch: usize,
    pub train_loss: f64,
    /// From the training forward passes (train-mode batchnorm, augmented).
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub wall_time_s: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,train_loss,train_accuracy,val_loss,val_accuracy,wall_time_s";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.epoch, self.train_loss, self.train_accuracy, self.val_loss, self.val_accuracy, self.wall_time_s
        )
    }

    /// Equal in every field except wall time.
    pub fn same_values(&self, other: &EpochLog) -> bool {
        (self.epoch, self.train_loss, self.train_accuracy, self.val_loss, self.val_accuracy)
            == (other.epoch, other.train_loss, other.train_accuracy, other.val_loss, other.val_accuracy)
    }
}

pub fn epoch_log_csv(logs: &[EpochLog]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{EPOCH_LOG_HEADER}");
    for l in logs {
        let _ = writeln!(out, "{}", l.csv_row());
    }
    out
}

pub fn parse_epoch_log_csv(text: &str) -> Result<Vec<EpochLog>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == EPOCH_LOG_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                detail: format!("expected header {EPOCH_LOG_HEADER:?}"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let err = |d: String| Error::Parse { line: i + 1, detail: d };
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("{s:?} is not a number")));
        out.push(EpochLog {
            epoch: f[0].parse().map_err(|_| err(format!("{:?} is not an epoch number", f[0])))?,
            train_loss: num(f[1])?,
            train_accuracy: num(f[2])?,
            val_loss: num(f[3])?,
            val_accuracy: num(f[4])?,
            wall_time_s: num(f[5])?,
        });
    }
    Ok(out)
}
