//! Plain SGD training with per-epoch validation, best/last checkpoints and
//! exact resume; eval-mode evaluation into a confusion matrix.

mod config;
mod eval;
mod sgd;
mod trainer;

pub use config::{epoch_log_csv, parse_epoch_log_csv, EpochLog, Precision, TrainConfig, EPOCH_LOG_HEADER};
pub use eval::{argmax_rows, evaluate, EvalOptions};
pub use sgd::{sgd_step, Sgd};
pub use trainer::{
    batch_loss, stored_classes, train, TrainOutcome, Trainer, BEST_CHECKPOINT, EPOCH_LOG_FILE, LAST_CHECKPOINT,
    META_BEST_EPOCH, META_BEST_VAL_ACCURACY, META_CLASSES, META_EPOCHS_COMPLETED, META_EPOCH_LOG,
};
