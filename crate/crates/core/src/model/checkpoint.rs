//! Binary checkpoint files.
//!
//! All integers little-endian:
//!
//! ```text
//! magic      8 bytes  "LEAFCKPT"
//! version    u32      1
//! meta_count u32
//!   key_len u32, key utf-8, value_len u32, value utf-8      (meta_count times)
//! count      u32
//!   name_len u32, name utf-8, rank u32, extents u64 × rank,
//!   data f32 × product(extents)                             (count times)
//! ```
//!
//! Nothing may follow the last tensor.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::resnet::{build_resnet34, ModelSpec, ResNet, HEAD_WEIGHT};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"LEAFCKPT";
pub const VERSION: u32 = 1;

/// Prefix of tensors that are not model state (e.g. optimizer buffers).
pub const AUX_PREFIX: &str = "optim.";

pub const META_ARCH: &str = "arch";
pub const META_NUM_CLASSES: &str = "num_classes";
pub const META_SEED: &str = "seed";
pub const META_INPUT_SIZE: &str = "input_size";
const ARCH: &str = "resnet34";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tensors(&self) -> &[(String, Tensor<f32>)] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Insert or replace, keeping first-insertion order.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<f32>) {
        let name = name.into();
        match self.tensors.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.tensors.push((name, tensor)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.meta(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Format(format!("metadata {key:?} has unparsable value {raw:?}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Format("bad magic: not a checkpoint file".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let mut ckpt = Checkpoint::new();
        for _ in 0..r.u32("metadata count")? {
            let k = r.string("metadata key")?;
            let v = r.string("metadata value")?;
            if ckpt.metadata.insert(k.clone(), v).is_some() {
                return Err(Error::Format(format!("duplicate metadata key {k:?}")));
            }
        }
        for _ in 0..r.u32("tensor count")? {
            let name = r.string("tensor name")?;
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                let e = r.u64("extent")?;
                shape.push(usize::try_from(e).map_err(|_| {
                    Error::Format(format!("tensor {name:?}: extent {e} too large"))
                })?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .and_then(|n| n.checked_mul(4).map(|b| (n, b)));
            let (numel, nbytes) = numel
                .ok_or_else(|| Error::Format(format!("tensor {name:?}: size overflows")))?;
            let raw = r.take(nbytes, "tensor data")?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            debug_assert_eq!(data.len(), numel);
            let tensor = Tensor::new(shape, data)
                .map_err(|e| Error::Format(format!("tensor {name:?}: {e}")))?;
            if ckpt.get(&name).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name:?}")));
            }
            ckpt.tensors.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(ckpt)
    }

    /// Write atomically: a sibling temp file is renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!(
                "truncated file: {what} needs {n} bytes at offset {}, only {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

/// What to do when the stored classifier does not match.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadPolicy {
    /// Use whatever head the file holds.
    Keep,
    /// The file's head must have exactly this many classes.
    Expect(usize),
    /// Load the backbone; if the stored head has a different class count,
    /// replace it with a freshly initialized one of this size.
    Replace(usize),
}

impl<T: Scalar> ResNet<T> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        ckpt.metadata.insert(META_ARCH.into(), ARCH.into());
        ckpt.metadata
            .insert(META_NUM_CLASSES.into(), self.num_classes().to_string());
        ckpt.metadata.insert(META_SEED.into(), self.seed().to_string());
        ckpt.metadata
            .insert(META_INPUT_SIZE.into(), self.spec().input_size.to_string());
        for (name, p) in self.named_parameters() {
            ckpt.insert(name, p.value.cast());
        }
        for (name, t) in self.named_buffers() {
            ckpt.insert(name, t.cast());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, head: HeadPolicy) -> Result<Self> {
        if let Some(arch) = ckpt.meta(META_ARCH) {
            if arch != ARCH {
                return Err(Error::Format(format!("checkpoint holds {arch:?}, not {ARCH:?}")));
            }
        }
        let head_weight = ckpt.get(HEAD_WEIGHT).ok_or_else(|| Error::Incompatible {
            name: HEAD_WEIGHT.into(),
            detail: "missing from checkpoint".into(),
        })?;
        let stored_classes = head_weight.shape()[0];
        let mut spec = ModelSpec::with_classes(stored_classes);
        if let Some(size) = ckpt.meta_parse(META_INPUT_SIZE)? {
            spec.input_size = size;
        }
        let seed = ckpt.meta_parse(META_SEED)?.unwrap_or(0);

        let replace_to = match head {
            HeadPolicy::Keep => None,
            HeadPolicy::Expect(k) if k == stored_classes => None,
            HeadPolicy::Expect(k) => {
                return Err(Error::Incompatible {
                    name: HEAD_WEIGHT.into(),
                    detail: format!(
                        "checkpoint head has {stored_classes} classes, expected {k}; \
                         request head replacement to load it anyway"
                    ),
                })
            }
            HeadPolicy::Replace(k) => (k != stored_classes).then_some(k),
        };

        let mut model: ResNet<T> = build_resnet34(spec, seed)?;
        let mut expected: Vec<String> = Vec::new();
        for (name, p) in model.named_parameters_mut() {
            p.value = fetch(ckpt, &name, p.value.shape())?;
            expected.push(name);
        }
        for (name, t) in model.named_buffers_mut() {
            *t = fetch(ckpt, &name, t.shape())?;
            expected.push(name);
        }
        for (name, _) in ckpt.tensors() {
            if !name.starts_with(AUX_PREFIX) && !expected.contains(name) {
                return Err(Error::Incompatible {
                    name: name.clone(),
                    detail: "not a tensor of this architecture".into(),
                });
            }
        }
        for bn_var in model
            .named_buffers()
            .into_iter()
            .filter(|(n, _)| n.ends_with("running_var"))
        {
            if bn_var.1.data().iter().any(|&v| !(v > T::zero())) {
                return Err(Error::Incompatible {
                    name: bn_var.0,
                    detail: "running variance must be strictly positive".into(),
                });
            }
        }
        if let Some(k) = replace_to {
            model.replace_head(k);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path, head: HeadPolicy) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, head)
    }
}

fn fetch<T: Scalar>(ckpt: &Checkpoint, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
    let t = ckpt.get(name).ok_or_else(|| Error::Incompatible {
        name: name.into(),
        detail: "missing from checkpoint".into(),
    })?;
    if t.shape() != shape {
        return Err(Error::Incompatible {
            name: name.into(),
            detail: format!("shape {:?} in file, model expects {shape:?}", t.shape()),
        });
    }
    Ok(t.cast())
}
