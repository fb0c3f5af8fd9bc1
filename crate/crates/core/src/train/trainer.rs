use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::autodiff::Graph;
use crate::data::{batch_iterator, BatchOptions, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::model::checkpoint::AUX_PREFIX;
use crate::model::{Checkpoint, HeadPolicy, ResNet};
use crate::ops::Mode;
use crate::tensor::{Scalar, Tensor};

use super::config::{epoch_log_csv, parse_epoch_log_csv, EpochLog, TrainConfig};
use super::eval::{argmax_rows, evaluate, EvalOptions};
use super::sgd::Sgd;

pub const META_EPOCHS_COMPLETED: &str = "epochs_completed";
pub const META_BEST_VAL_ACCURACY: &str = "best_val_accuracy";
pub const META_BEST_EPOCH: &str = "best_epoch";
pub const META_CLASSES: &str = "classes";
pub const META_EPOCH_LOG: &str = "epoch_log";

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const EPOCH_LOG_FILE: &str = "epochs.csv";

fn velocity_key(name: &str) -> String {
    format!("{AUX_PREFIX}velocity.{name}")
}

/// Class names recorded by a training run, if any.
pub fn stored_classes(ckpt: &Checkpoint) -> Result<Option<Vec<String>>> {
    ckpt.meta(META_CLASSES)
        .map(|json| {
            serde_json::from_str(json).map_err(|e| Error::Format(format!("bad `{META_CLASSES}` metadata: {e}")))
        })
        .transpose()
}

/// Training state: model, optimizer buffers, progress and history.
/// Everything needed to continue a run lives in [`Trainer::to_checkpoint`].
pub struct Trainer<T: Scalar> {
    model: ResNet<T>,
    optimizer: Sgd<T>,
    config: TrainConfig,
    epochs_completed: usize,
    best: Option<(f64, usize)>,
    logs: Vec<EpochLog>,
    classes: Option<Vec<String>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(mut model: ResNet<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if model.spec().input_size != config.input_size {
            return Err(Error::Validation(format!(
                "model expects {0}x{0} inputs, config has input_size {1}",
                model.spec().input_size,
                config.input_size
            )));
        }
        model.set_backbone_trainable(!config.freeze_backbone);
        let optimizer = Sgd::new(config.learning_rate).with_momentum(config.momentum, config.weight_decay);
        Ok(Self {
            model,
            optimizer,
            config,
            epochs_completed: 0,
            best: None,
            logs: Vec::new(),
            classes: None,
        })
    }

    /// Continue from a checkpoint written by [`Trainer::to_checkpoint`].
    /// `config.max_epochs` counts from the start of the original run.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let model = ResNet::from_checkpoint(ckpt, HeadPolicy::Keep)?;
        let mut t = Self::new(model, config)?;
        t.epochs_completed = ckpt.meta_parse(META_EPOCHS_COMPLETED)?.unwrap_or(0);
        let acc: Option<f64> = ckpt.meta_parse(META_BEST_VAL_ACCURACY)?;
        let epoch: Option<usize> = ckpt.meta_parse(META_BEST_EPOCH)?;
        t.best = acc.zip(epoch);
        if let Some(text) = ckpt.meta(META_EPOCH_LOG) {
            t.logs = parse_epoch_log_csv(text)?;
        }
        t.classes = stored_classes(ckpt)?;
        if t.config.momentum != 0.0 {
            let names: Vec<String> = t.model.named_parameters().into_iter().map(|(n, _)| n).collect();
            for name in names {
                if let Some(v) = ckpt.get(&velocity_key(&name)) {
                    t.optimizer.set_velocity(name, v.cast());
                }
            }
        }
        Ok(t)
    }

    pub fn resume(path: &Path, config: TrainConfig) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, config)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.model.to_checkpoint();
        let meta = &mut ckpt.metadata;
        meta.insert(META_EPOCHS_COMPLETED.into(), self.epochs_completed.to_string());
        if let Some((acc, epoch)) = self.best {
            meta.insert(META_BEST_VAL_ACCURACY.into(), acc.to_string());
            meta.insert(META_BEST_EPOCH.into(), epoch.to_string());
        }
        if let Some(classes) = &self.classes {
            meta.insert(META_CLASSES.into(), serde_json::to_string(classes).expect("strings serialize"));
        }
        meta.insert(META_EPOCH_LOG.into(), epoch_log_csv(&self.logs));
        for (name, v) in self.optimizer.velocity() {
            ckpt.insert(velocity_key(name), v.cast());
        }
        ckpt
    }

    pub fn model(&self) -> &ResNet<T> {
        &self.model
    }

    pub fn into_model(self) -> ResNet<T> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    pub fn logs(&self) -> &[EpochLog] {
        &self.logs
    }

    /// Best validation accuracy so far and the epoch it was reached.
    pub fn best(&self) -> Option<(f64, usize)> {
        self.best
    }

    fn check_classes(&mut self, manifest: &DatasetManifest) -> Result<()> {
        if manifest.classes.len() != self.model.num_classes() {
            return Err(Error::Validation(format!(
                "model has {} classes, manifest has {}",
                self.model.num_classes(),
                manifest.classes.len()
            )));
        }
        match &self.classes {
            Some(c) if *c != manifest.classes => Err(Error::Validation(format!(
                "checkpoint was trained on classes {c:?}, manifest lists {:?}",
                manifest.classes
            ))),
            Some(_) => Ok(()),
            None => {
                self.classes = Some(manifest.classes.clone());
                Ok(())
            }
        }
    }

    /// One pass over the train split followed by validation.
    pub fn run_epoch(&mut self, manifest: &DatasetManifest) -> Result<EpochLog> {
        self.check_classes(manifest)?;
        if manifest.count(Split::Train) == 0 || manifest.count(Split::Val) == 0 {
            return Err(Error::Validation("manifest needs both train and val samples".into()));
        }
        let start = Instant::now();
        let epoch = self.epochs_completed + 1;
        let mode = if self.config.freeze_backbone { Mode::Eval } else { Mode::Train };

        let opts = BatchOptions {
            batch_size: self.config.batch_size,
            shuffle_seed: Some(self.config.seed),
            epoch: self.epochs_completed as u64,
            augment: self.config.augment.clone(),
            input_size: self.config.input_size,
            normalization: self.config.normalization,
            on_error: self.config.on_error(),
        };
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (i, batch) in batch_iterator(manifest, Split::Train, opts)?.enumerate() {
            let batch = batch?;
            let non_finite = |e: Error| match e {
                Error::NonFinite { .. } => Error::NonFiniteLoss { epoch, batch: i + 1 },
                e => e,
            };
            let mut g = Graph::new();
            let x = g.input(batch.images.cast::<T>());
            let logits = self.model.forward(&mut g, &x, mode).map_err(non_finite)?;
            let loss = g.softmax_cross_entropy(logits, &batch.labels).map_err(non_finite)?;
            let loss_value = g.value(loss).item()?.to_f64();
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: i + 1 });
            }
            let preds = argmax_rows(g.value(logits));
            correct += preds.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
            loss_sum += loss_value * batch.len() as f64;
            seen += batch.len();

            self.model.update_running_stats(&mut g)?;
            let mut grads = g.backward(loss).map_err(non_finite)?;
            self.model.absorb_gradients(&mut grads);
            self.optimizer.step(self.model.named_parameters_mut())?;
        }
        if seen == 0 {
            return Err(Error::Validation("train split has no readable samples".into()));
        }

        let eval_opts = EvalOptions {
            batch_size: self.config.batch_size,
            normalization: self.config.normalization,
            on_error: self.config.on_error(),
        };
        let (cm, val_loss) = evaluate(&self.model, manifest, Split::Val, &eval_opts)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64 * 100.0,
            val_loss,
            val_accuracy: cm.trace() as f64 / cm.total() as f64 * 100.0,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        self.epochs_completed = epoch;
        if self.best.is_none_or(|(acc, _)| log.val_accuracy > acc) {
            self.best = Some((log.val_accuracy, epoch));
        }
        self.logs.push(log.clone());
        Ok(log)
    }

    /// Train until `max_epochs` have been completed. With `out_dir`, writes
    /// `best.ckpt` whenever validation accuracy improves, `last.ckpt` and
    /// `epochs.csv` after every epoch, and `epoch_NNNN.ckpt` every
    /// `checkpoint_every` epochs.
    pub fn run(
        &mut self,
        manifest: &DatasetManifest,
        out_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<()> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while self.epochs_completed < self.config.max_epochs {
            let previous_best = self.best;
            let log = self.run_epoch(manifest)?;
            on_epoch(&log);
            let Some(dir) = out_dir else { continue };
            let ckpt = self.to_checkpoint();
            if self.best != previous_best {
                ckpt.save(&dir.join(BEST_CHECKPOINT))?;
            }
            let every = self.config.checkpoint_every;
            if every > 0 && log.epoch % every == 0 {
                ckpt.save(&dir.join(format!("epoch_{:04}.ckpt", log.epoch)))?;
            }
            ckpt.save(&dir.join(LAST_CHECKPOINT))?;
            let csv_path = dir.join(EPOCH_LOG_FILE);
            std::fs::write(&csv_path, epoch_log_csv(&self.logs)).map_err(|e| Error::io(csv_path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub model: ResNet<T>,
    pub logs: Vec<EpochLog>,
    pub best: Option<(f64, usize)>,
    pub best_checkpoint: Option<PathBuf>,
}

/// Fresh run from `model` to `config.max_epochs`.
pub fn train<T: Scalar>(
    model: ResNet<T>,
    manifest: &DatasetManifest,
    config: TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::new(model, config)?;
    trainer.run(manifest, out_dir, |_| {})?;
    let best = trainer.best();
    let logs = trainer.logs().to_vec();
    Ok(TrainOutcome {
        model: trainer.into_model(),
        logs,
        best,
        best_checkpoint: out_dir.map(|d| d.join(BEST_CHECKPOINT)),
    })
}

/// Loss of `model` on a single labelled batch, without updating anything.
pub fn batch_loss<T: Scalar>(model: &ResNet<T>, images: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let logits = model.predict(images)?;
    let (loss, _) = crate::ops::loss::softmax_cross_entropy_forward(&logits, labels)?;
    Ok(loss.item()?.to_f64())
}
