//! Image ingestion, augmentation, the stratified split and batching.

pub mod augment;
pub mod batch;
pub mod image;
pub mod manifest;

pub use augment::{augment, hflip, AffineParams, AugmentConfig};
pub use batch::{batch_iterator, Batch, BatchIter, BatchOptions, OnError};
pub use image::{load_and_resize, resize_bilinear, Normalization};
pub use manifest::{
    canonical_classes, scan_directory, split_dataset, train_count, DatasetManifest, SampleRecord, Split,
    CLASS_NAMES,
};
