//! ResNet-34 for `[N, 3, S, S]` images.
//!
//! Parameter names:
//!
//! | tensor                     | name                                        |
//! |----------------------------|---------------------------------------------|
//! | stem convolution           | `stem.conv.weight`                          |
//! | stem batchnorm             | `stem.bn.{gamma,beta,running_mean,running_var}` |
//! | block convolutions         | `layer{s}.{b}.conv{1,2}.weight`             |
//! | block batchnorms           | `layer{s}.{b}.bn{1,2}.{gamma,beta,running_mean,running_var}` |
//! | projection shortcut        | `layer{s}.{b}.shortcut.conv.weight`, `layer{s}.{b}.shortcut.bn.*` |
//! | classifier                 | `fc.weight`, `fc.bias`                      |
//!
//! `s` counts stages from 1, `b` counts blocks within a stage from 0.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Backend, Gradients, Parameter};
use crate::error::{Error, Result};
use crate::model::layers::{BatchNorm2d, Conv2d, Linear};
use crate::ops::{Mode, Pool2dGeometry};
use crate::tensor::{Scalar, Tensor};

pub const HEAD_WEIGHT: &str = "fc.weight";
pub const HEAD_BIAS: &str = "fc.bias";
pub const MIN_INPUT_SIZE: usize = 32;

/// Stream used for the classifier so re-initializing the head never
/// perturbs the backbone draws.
const HEAD_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub stage_block_counts: [usize; 4],
    pub stage_channels: [usize; 4],
    pub num_classes: usize,
    pub input_size: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            stage_block_counts: [3, 4, 6, 3],
            stage_channels: [64, 128, 256, 512],
            num_classes: 6,
            input_size: 224,
        }
    }
}

impl ModelSpec {
    pub fn with_classes(num_classes: usize) -> Self {
        Self {
            num_classes,
            ..Self::default()
        }
    }

    /// Stem conv + two convs per block + classifier.
    pub fn weighted_layer_count(&self) -> usize {
        2 + 2 * self.stage_block_counts.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let base = Self::default();
        if self.stage_block_counts != base.stage_block_counts {
            return Err(Error::Validation(format!(
                "stage block counts must be {:?}, got {:?}",
                base.stage_block_counts, self.stage_block_counts
            )));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::Validation(format!(
                "stage channels must be positive, got {:?}",
                self.stage_channels
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Validation("num_classes must be at least 1".into()));
        }
        if self.input_size < MIN_INPUT_SIZE {
            return Err(Error::Validation(format!(
                "input_size must be at least {MIN_INPUT_SIZE}, got {}",
                self.input_size
            )));
        }
        Ok(())
    }

    pub fn block_specs(&self) -> Vec<Vec<ResidualBlockSpec>> {
        let mut in_channels = self.stage_channels[0];
        let mut stages = Vec::new();
        for (s, (&blocks, &out_channels)) in self
            .stage_block_counts
            .iter()
            .zip(&self.stage_channels)
            .enumerate()
        {
            let mut stage = Vec::new();
            for b in 0..blocks {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                stage.push(ResidualBlockSpec::new(in_channels, out_channels, stride));
                in_channels = out_channels;
            }
            stages.push(stage);
        }
        stages
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResidualBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub projection: bool,
}

impl ResidualBlockSpec {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            stride,
            projection: stride != 1 || in_channels != out_channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shortcut<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T> {
    pub spec: ResidualBlockSpec,
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub shortcut: Option<Shortcut<T>>,
}

impl<T: Scalar> ResidualBlock<T> {
    fn new(rng: &mut ChaCha8Rng, spec: ResidualBlockSpec) -> Self {
        let ResidualBlockSpec {
            in_channels: i,
            out_channels: o,
            stride,
            projection,
        } = spec;
        let conv1 = Conv2d::new(rng, i, o, 3, stride, 1);
        let conv2 = Conv2d::new(rng, o, o, 3, 1, 1);
        let shortcut = projection.then(|| Shortcut {
            conv: Conv2d::new(rng, i, o, 1, stride, 0),
            bn: BatchNorm2d::new(o),
        });
        Self {
            spec,
            conv1,
            bn1: BatchNorm2d::new(o),
            conv2,
            bn2: BatchNorm2d::new(o),
            shortcut,
        }
    }

    /// Batchnorms in the order `forward` runs them.
    fn batchnorms_mut(&mut self) -> Vec<&mut BatchNorm2d<T>> {
        let mut out = vec![&mut self.bn1, &mut self.bn2];
        if let Some(sc) = &mut self.shortcut {
            out.push(&mut sc.bn);
        }
        out
    }

    pub fn forward<B: Backend<T>>(
        &self,
        b: &mut B,
        name: &str,
        x: &B::Value,
        mode: Mode,
    ) -> Result<B::Value> {
        let h = self.conv1.forward(b, &format!("{name}.conv1"), x)?;
        let h = self.bn1.forward(b, &format!("{name}.bn1"), &h, mode)?;
        let h = b.relu(&h)?;
        let h = self.conv2.forward(b, &format!("{name}.conv2"), &h)?;
        let h = self.bn2.forward(b, &format!("{name}.bn2"), &h, mode)?;
        let bypass = match &self.shortcut {
            Some(sc) => {
                let s = sc.conv.forward(b, &format!("{name}.shortcut.conv"), x)?;
                sc.bn.forward(b, &format!("{name}.shortcut.bn"), &s, mode)?
            }
            None => x.clone(),
        };
        let sum = b.add(&h, &bypass)?;
        b.relu(&sum)
    }
}

/// Intermediate activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<V> {
    /// After the stem max-pool.
    pub stem: V,
    /// Output of each of the four stages.
    pub stages: Vec<V>,
    pub logits: V,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResNet<T> {
    spec: ModelSpec,
    seed: u64,
    pub stem_conv: Conv2d<T>,
    pub stem_bn: BatchNorm2d<T>,
    pub stages: Vec<Vec<ResidualBlock<T>>>,
    pub fc: Linear<T>,
}

impl<T: Scalar> ResNet<T> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        self.fc.out_features()
    }

    fn head(seed: u64, in_features: usize, classes: usize) -> Linear<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(HEAD_STREAM);
        Linear::new(&mut rng, in_features, classes)
    }

    /// Fresh classifier; every backbone tensor is left untouched.
    pub fn replace_head(&mut self, num_classes: usize) {
        self.fc = Self::head(self.seed, self.fc.in_features(), num_classes);
        self.spec.num_classes = num_classes;
    }

    /// Run the same weights at another square input resolution.
    pub fn with_input_size(mut self, size: usize) -> Result<Self> {
        let spec = ModelSpec {
            input_size: size,
            ..self.spec.clone()
        };
        spec.validate()?;
        self.spec = spec;
        Ok(self)
    }

    pub fn zero_head(&mut self) {
        self.fc = Linear::zeros(self.fc.in_features(), self.fc.out_features());
    }

    /// Stop or resume gradient flow into every parameter except the classifier.
    pub fn set_backbone_trainable(&mut self, trainable: bool) {
        for (name, p) in self.named_parameters_mut() {
            if !name.starts_with("fc.") {
                p.requires_grad = trainable;
            }
        }
    }

    pub fn forward<B: Backend<T>>(&self, b: &mut B, input: &B::Value, mode: Mode) -> Result<B::Value> {
        Ok(self.forward_trace(b, input, mode)?.logits)
    }

    pub fn forward_trace<B: Backend<T>>(
        &self,
        b: &mut B,
        input: &B::Value,
        mode: Mode,
    ) -> Result<ForwardTrace<B::Value>> {
        let shape = b.tensor(input).shape();
        let s = self.spec.input_size;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(Error::dim(
                "resnet34",
                format!("expected input [N, 3, {s}, {s}], got {shape:?}"),
            ));
        }
        let h = self.stem_conv.forward(b, "stem.conv", input)?;
        let h = self.stem_bn.forward(b, "stem.bn", &h, mode)?;
        let h = b.relu(&h)?;
        let stem = b.maxpool2d(&h, Pool2dGeometry::new(3, 2, 1))?;
        let mut h = stem.clone();
        let mut stages = Vec::with_capacity(self.stages.len());
        for (s, stage) in self.stages.iter().enumerate() {
            for (i, block) in stage.iter().enumerate() {
                h = block.forward(b, &format!("layer{}.{i}", s + 1), &h, mode)?;
            }
            stages.push(h.clone());
        }
        let pooled = b.global_avg_pool(&h)?;
        let logits = self.fc.forward(b, "fc", &pooled)?;
        Ok(ForwardTrace {
            stem,
            stages,
            logits,
        })
    }

    /// Inference without a tape.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut eager = crate::autodiff::Eager::new();
        self.forward(&mut eager, input, Mode::Eval)
    }

    /// Fold the batch statistics recorded during a training-mode forward
    /// into the running estimates.
    pub fn update_running_stats<B: Backend<T>>(&mut self, b: &mut B) -> Result<()> {
        let stats = b.take_batch_statistics();
        if stats.is_empty() {
            return Ok(());
        }
        let mut layers = self.batchnorms_mut();
        if stats.len() != layers.len() {
            return Err(Error::Internal(format!(
                "{} batch statistics recorded for {} batchnorm layers",
                stats.len(),
                layers.len()
            )));
        }
        for (bn, batch) in layers.iter_mut().zip(&stats) {
            let momentum = bn.config.momentum;
            bn.running.update(batch, momentum);
        }
        Ok(())
    }

    fn batchnorms_mut(&mut self) -> Vec<&mut BatchNorm2d<T>> {
        let mut out = vec![&mut self.stem_bn];
        for stage in &mut self.stages {
            for block in stage {
                out.extend(block.batchnorms_mut());
            }
        }
        out
    }

    /// Move gradients from a backward pass into the parameters' `grad` slots.
    pub fn absorb_gradients(&mut self, grads: &mut Gradients<T>) {
        for (name, p) in self.named_parameters_mut() {
            p.grad = if p.requires_grad {
                grads.take_named(&name)
            } else {
                None
            };
        }
    }

    pub fn named_parameters(&self) -> Vec<(String, &Parameter<T>)> {
        let mut out = Vec::new();
        out.push(("stem.conv.weight".to_owned(), &self.stem_conv.weight));
        bn_params(&mut out, "stem.bn", &self.stem_bn);
        for (s, stage) in self.stages.iter().enumerate() {
            for (i, block) in stage.iter().enumerate() {
                let p = format!("layer{}.{i}", s + 1);
                out.push((format!("{p}.conv1.weight"), &block.conv1.weight));
                bn_params(&mut out, &format!("{p}.bn1"), &block.bn1);
                out.push((format!("{p}.conv2.weight"), &block.conv2.weight));
                bn_params(&mut out, &format!("{p}.bn2"), &block.bn2);
                if let Some(sc) = &block.shortcut {
                    out.push((format!("{p}.shortcut.conv.weight"), &sc.conv.weight));
                    bn_params(&mut out, &format!("{p}.shortcut.bn"), &sc.bn);
                }
            }
        }
        out.push((HEAD_WEIGHT.to_owned(), &self.fc.weight));
        out.push((HEAD_BIAS.to_owned(), &self.fc.bias));
        out
    }

    pub fn named_parameters_mut(&mut self) -> Vec<(String, &mut Parameter<T>)> {
        let mut out = Vec::new();
        out.push(("stem.conv.weight".to_owned(), &mut self.stem_conv.weight));
        bn_params_mut(&mut out, "stem.bn", &mut self.stem_bn);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (i, block) in stage.iter_mut().enumerate() {
                let p = format!("layer{}.{i}", s + 1);
                out.push((format!("{p}.conv1.weight"), &mut block.conv1.weight));
                bn_params_mut(&mut out, &format!("{p}.bn1"), &mut block.bn1);
                out.push((format!("{p}.conv2.weight"), &mut block.conv2.weight));
                bn_params_mut(&mut out, &format!("{p}.bn2"), &mut block.bn2);
                if let Some(sc) = &mut block.shortcut {
                    out.push((format!("{p}.shortcut.conv.weight"), &mut sc.conv.weight));
                    bn_params_mut(&mut out, &format!("{p}.shortcut.bn"), &mut sc.bn);
                }
            }
        }
        out.push((HEAD_WEIGHT.to_owned(), &mut self.fc.weight));
        out.push((HEAD_BIAS.to_owned(), &mut self.fc.bias));
        out
    }

    /// Running statistics, named `<layer>.running_mean` / `<layer>.running_var`.
    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut names = vec!["stem.bn".to_owned()];
        for (s, stage) in self.stages.iter().enumerate() {
            for (i, block) in stage.iter().enumerate() {
                let p = format!("layer{}.{i}", s + 1);
                names.push(format!("{p}.bn1"));
                names.push(format!("{p}.bn2"));
                if block.shortcut.is_some() {
                    names.push(format!("{p}.shortcut.bn"));
                }
            }
        }
        let layers = self.batchnorms_mut();
        let mut out = Vec::with_capacity(layers.len() * 2);
        for (name, bn) in names.into_iter().zip(layers) {
            let crate::ops::RunningStats { mean, var } = &mut bn.running;
            out.push((format!("{name}.running_mean"), mean));
            out.push((format!("{name}.running_var"), var));
        }
        out
    }

    pub fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("stem.bn.running_mean".to_owned(), &self.stem_bn.running.mean),
            ("stem.bn.running_var".to_owned(), &self.stem_bn.running.var),
        ];
        for (s, stage) in self.stages.iter().enumerate() {
            for (i, block) in stage.iter().enumerate() {
                let p = format!("layer{}.{i}", s + 1);
                out.push((format!("{p}.bn1.running_mean"), &block.bn1.running.mean));
                out.push((format!("{p}.bn1.running_var"), &block.bn1.running.var));
                out.push((format!("{p}.bn2.running_mean"), &block.bn2.running.mean));
                out.push((format!("{p}.bn2.running_var"), &block.bn2.running.var));
                if let Some(sc) = &block.shortcut {
                    out.push((format!("{p}.shortcut.bn.running_mean"), &sc.bn.running.mean));
                    out.push((format!("{p}.shortcut.bn.running_var"), &sc.bn.running.var));
                }
            }
        }
        out
    }

    /// Trainable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, p)| p.value.numel()).sum()
    }

    pub fn weighted_layer_count(&self) -> usize {
        2 + 2 * self.stages.iter().map(Vec::len).sum::<usize>()
    }

    pub fn cast<U: Scalar>(&self) -> ResNet<U> {
        let conv = |c: &Conv2d<T>| Conv2d {
            weight: cast_param(&c.weight),
            geometry: c.geometry,
        };
        let bn = |b: &BatchNorm2d<T>| BatchNorm2d {
            gamma: cast_param(&b.gamma),
            beta: cast_param(&b.beta),
            running: crate::ops::RunningStats {
                mean: b.running.mean.cast(),
                var: b.running.var.cast(),
            },
            config: b.config,
        };
        ResNet {
            spec: self.spec.clone(),
            seed: self.seed,
            stem_conv: conv(&self.stem_conv),
            stem_bn: bn(&self.stem_bn),
            stages: self
                .stages
                .iter()
                .map(|stage| {
                    stage
                        .iter()
                        .map(|blk| ResidualBlock {
                            spec: blk.spec,
                            conv1: conv(&blk.conv1),
                            bn1: bn(&blk.bn1),
                            conv2: conv(&blk.conv2),
                            bn2: bn(&blk.bn2),
                            shortcut: blk.shortcut.as_ref().map(|sc| Shortcut {
                                conv: conv(&sc.conv),
                                bn: bn(&sc.bn),
                            }),
                        })
                        .collect()
                })
                .collect(),
            fc: Linear {
                weight: cast_param(&self.fc.weight),
                bias: cast_param(&self.fc.bias),
            },
        }
    }
}

fn cast_param<T: Scalar, U: Scalar>(p: &Parameter<T>) -> Parameter<U> {
    Parameter {
        value: p.value.cast(),
        grad: p.grad.as_ref().map(Tensor::cast),
        requires_grad: p.requires_grad,
    }
}

fn bn_params<'a, T>(out: &mut Vec<(String, &'a Parameter<T>)>, name: &str, bn: &'a BatchNorm2d<T>) {
    out.push((format!("{name}.gamma"), &bn.gamma));
    out.push((format!("{name}.beta"), &bn.beta));
}

fn bn_params_mut<'a, T>(
    out: &mut Vec<(String, &'a mut Parameter<T>)>,
    name: &str,
    bn: &'a mut BatchNorm2d<T>,
) {
    out.push((format!("{name}.gamma"), &mut bn.gamma));
    out.push((format!("{name}.beta"), &mut bn.beta));
}

/// Build and initialize the network from `seed`.
///
/// Convolutions draw from one ChaCha8 stream in parameter-name order; the
/// classifier draws from a separate stream of the same seed.
pub fn build_resnet34<T: Scalar>(spec: ModelSpec, seed: u64) -> Result<ResNet<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = spec.stage_channels[0];
    let stem_conv = Conv2d::new(&mut rng, 3, width, 7, 2, 3);
    let stages: Vec<Vec<ResidualBlock<T>>> = spec
        .block_specs()
        .into_iter()
        .map(|stage| {
            stage
                .into_iter()
                .map(|bs| ResidualBlock::new(&mut rng, bs))
                .collect()
        })
        .collect();
    let features = spec.stage_channels[3];
    let fc = ResNet::head(seed, features, spec.num_classes);
    Ok(ResNet {
        spec,
        seed,
        stem_conv,
        stem_bn: BatchNorm2d::new(width),
        stages,
        fc,
    })
}
