use crate::data::{batch_iterator, BatchOptions, DatasetManifest, Normalization, OnError, Split};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::ResNet;
use crate::ops::loss::softmax_cross_entropy_forward;
use crate::tensor::{Scalar, Tensor};

/// Index of the largest logit per row; the lowest index wins ties.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub normalization: Normalization,
    pub on_error: OnError,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 8,
            normalization: Normalization::default(),
            on_error: OnError::Abort,
        }
    }
}

/// Eval-mode pass over one split: confusion matrix (rows = truth) and mean
/// cross-entropy per sample. The model is not modified.
pub fn evaluate<T: Scalar>(
    model: &ResNet<T>,
    manifest: &DatasetManifest,
    split: Split,
    opts: &EvalOptions,
) -> Result<(ConfusionMatrix, f64)> {
    if model.num_classes() != manifest.classes.len() {
        return Err(Error::Validation(format!(
            "model has {} classes, manifest has {}",
            model.num_classes(),
            manifest.classes.len()
        )));
    }
    let mut batch_opts = BatchOptions::new(opts.batch_size, model.spec().input_size);
    batch_opts.normalization = opts.normalization;
    batch_opts.on_error = opts.on_error;
    let mut cm = ConfusionMatrix::zeros(manifest.classes.clone())?;
    let mut loss_sum = 0.0;
    let mut seen = 0usize;
    for batch in batch_iterator(manifest, split, batch_opts)? {
        let batch = batch?;
        let logits = model.predict(&batch.images.cast::<T>())?;
        let (loss, _) = softmax_cross_entropy_forward(&logits, &batch.labels)?;
        loss_sum += loss.item()?.to_f64() * batch.len() as f64;
        seen += batch.len();
        for (&truth, pred) in batch.labels.iter().zip(argmax_rows(&logits)) {
            cm.record(truth, pred)?;
        }
    }
    if seen == 0 {
        return Err(Error::Validation(format!("split {split} has no readable samples")));
    }
    Ok((cm, loss_sum / seen as f64))
}
