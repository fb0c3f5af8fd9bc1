//! Mini-batch assembly over one split of a manifest.

use std::path::PathBuf;

use rand::seq::SliceRandom;

use crate::data::augment::{augment, AugmentConfig};
use crate::data::image::{load_and_resize, Normalization};
use crate::data::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// What to do when an image cannot be read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OnError {
    #[default]
    Abort,
    /// Drop the sample and remember it in [`BatchIter::skipped`].
    Skip,
}

#[derive(Clone, Debug)]
pub struct BatchOptions {
    pub batch_size: usize,
    /// `None` keeps manifest order.
    pub shuffle_seed: Option<u64>,
    pub epoch: u64,
    /// Used for the train split only.
    pub augment: Option<AugmentConfig>,
    pub input_size: usize,
    pub normalization: Normalization,
    pub on_error: OnError,
}

impl BatchOptions {
    pub fn new(batch_size: usize, input_size: usize) -> Self {
        Self {
            batch_size,
            shuffle_seed: None,
            epoch: 0,
            augment: None,
            input_size,
            normalization: Normalization::default(),
            on_error: OnError::Abort,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, 3, S, S]`
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub paths: Vec<PathBuf>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub struct BatchIter<'a> {
    manifest: &'a DatasetManifest,
    order: Vec<usize>,
    pos: usize,
    opts: BatchOptions,
    augment: Option<AugmentConfig>,
    skipped: Vec<(PathBuf, String)>,
    failed: bool,
}

/// Visit every record of `split` once. With a shuffle seed the order is a
/// permutation drawn from `(seed, epoch)`; augmentation draws come from
/// `(augment seed, epoch, record index)`, so batches are reproducible
/// regardless of batch size.
pub fn batch_iterator<'a>(
    manifest: &'a DatasetManifest,
    split: Split,
    opts: BatchOptions,
) -> Result<BatchIter<'a>> {
    if opts.batch_size == 0 {
        return Err(Error::Validation("batch_size must be at least 1".into()));
    }
    opts.normalization.validate()?;
    let augment = match (&opts.augment, split) {
        (Some(cfg), Split::Train) => {
            cfg.validate()?;
            Some(cfg.clone())
        }
        _ => None,
    };
    let mut order: Vec<usize> = manifest.split(split).map(|(i, _)| i).collect();
    if let Some(seed) = opts.shuffle_seed {
        order.shuffle(&mut rng::derive(seed, &[opts.epoch]));
    }
    Ok(BatchIter {
        manifest,
        order,
        pos: 0,
        opts,
        augment,
        skipped: Vec::new(),
        failed: false,
    })
}

impl BatchIter<'_> {
    /// Samples dropped under [`OnError::Skip`], with the reason.
    pub fn skipped(&self) -> &[(PathBuf, String)] {
        &self.skipped
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.pos
    }

    fn load(&self, index: usize) -> Result<Tensor<f32>> {
        let rec = &self.manifest.records[index];
        let img = load_and_resize(&rec.path, self.opts.input_size, &self.opts.normalization)?;
        Ok(match &self.augment {
            Some(cfg) => {
                let mut r = rng::derive(cfg.seed, &[self.opts.epoch, index as u64]);
                augment(&img, cfg, &mut r)
            }
            None => img,
        })
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Result<Batch>> {
        if self.failed {
            return None;
        }
        let s = self.opts.input_size;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut paths = Vec::new();
        while labels.len() < self.opts.batch_size && self.pos < self.order.len() {
            let index = self.order[self.pos];
            self.pos += 1;
            let rec = &self.manifest.records[index];
            match self.load(index) {
                Ok(t) => {
                    data.extend_from_slice(t.data());
                    labels.push(rec.label);
                    paths.push(rec.path.clone());
                }
                Err(e) if self.opts.on_error == OnError::Skip => {
                    self.skipped.push((rec.path.clone(), e.to_string()));
                }
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
        if labels.is_empty() {
            return None;
        }
        let images = Tensor::new([labels.len(), 3, s, s], data).expect("consistent batch");
        Some(Ok(Batch {
            images,
            labels,
            paths,
        }))
    }
}
