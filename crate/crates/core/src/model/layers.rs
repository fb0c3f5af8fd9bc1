use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{Backend, Parameter};
use crate::error::Result;
use crate::ops::{BatchNormConfig, Conv2dGeometry, Mode, RunningStats};
use crate::tensor::{Scalar, Tensor};

/// Bias-free convolution (every conv in the network feeds a batchnorm).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Parameter<T>,
    pub geometry: Conv2dGeometry,
}

impl<T: Scalar> Conv2d<T> {
    /// He-normal initialization: `N(0, 2 / fan_in)`.
    pub fn new(
        rng: &mut impl Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let weight = Tensor::from_fn([out_channels, in_channels, kernel, kernel], |_| {
            T::from_f64(normal.sample(rng))
        });
        Self {
            weight: Parameter::new(weight),
            geometry: Conv2dGeometry::new(stride, padding),
        }
    }

    pub fn forward<B: Backend<T>>(&self, b: &mut B, name: &str, x: &B::Value) -> Result<B::Value> {
        let w = b.parameter(&format!("{name}.weight"), &self.weight);
        b.conv2d(x, &w, None, self.geometry)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running: RunningStats<T>,
    pub config: BatchNormConfig,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Parameter::new(Tensor::ones([channels])),
            beta: Parameter::new(Tensor::zeros([channels])),
            running: RunningStats::new(channels),
            config: BatchNormConfig::default(),
        }
    }

    pub fn forward<B: Backend<T>>(
        &self,
        b: &mut B,
        name: &str,
        x: &B::Value,
        mode: Mode,
    ) -> Result<B::Value> {
        let gamma = b.parameter(&format!("{name}.gamma"), &self.gamma);
        let beta = b.parameter(&format!("{name}.beta"), &self.beta);
        b.batchnorm2d(x, &gamma, &beta, &self.running, self.config, mode)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform in `±1/sqrt(in_features)` for both weight and bias.
    pub fn new(rng: &mut impl Rng, in_features: usize, out_features: usize) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let uniform = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = Tensor::from_fn([out_features, in_features], |_| {
            T::from_f64(uniform.sample(rng))
        });
        let bias = Tensor::from_fn([out_features], |_| T::from_f64(uniform.sample(rng)));
        Self {
            weight: Parameter::new(weight),
            bias: Parameter::new(bias),
        }
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            weight: Parameter::new(Tensor::zeros([out_features, in_features])),
            bias: Parameter::new(Tensor::zeros([out_features])),
        }
    }

    pub fn forward<B: Backend<T>>(&self, b: &mut B, name: &str, x: &B::Value) -> Result<B::Value> {
        let w = b.parameter(&format!("{name}.weight"), &self.weight);
        let bias = b.parameter(&format!("{name}.bias"), &self.bias);
        b.linear(x, &w, &bias)
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }
}
