//! Per-channel batch normalization over `[N, C, H, W]`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Whether normalization uses batch statistics (and updates the running
/// estimates) or the stored running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub epsilon: f64,
    /// Weight of the newest batch in the running-average update.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }
}

impl BatchNormConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Validation(format!(
                "batchnorm epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Validation(format!(
                "batchnorm momentum must lie in (0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Running mean/variance estimates for one normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros([channels]),
            var: Tensor::ones([channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.numel()
    }

    pub fn validate(&self) -> Result<()> {
        if self.var.data().iter().any(|&v| !(v > T::zero())) {
            return Err(Error::Validation(
                "running variance must be strictly positive".into(),
            ));
        }
        Ok(())
    }

    /// Blend in the statistics of one training batch.
    pub fn update(&mut self, batch: &BatchStatistics<T>, momentum: f64) {
        let keep = T::from_f64(1.0 - momentum);
        let take = T::from_f64(momentum);
        for (r, &b) in self.mean.data_mut().iter_mut().zip(&batch.mean) {
            *r = keep * *r + take * b;
        }
        for (r, &b) in self.var.data_mut().iter_mut().zip(&batch.unbiased_var) {
            *r = keep * *r + take * b;
        }
    }
}

/// Per-channel statistics observed on a training batch.
#[derive(Clone, Debug)]
pub struct BatchStatistics<T> {
    pub mean: Vec<T>,
    /// Variance with Bessel's correction (biased when only one value per channel).
    pub unbiased_var: Vec<T>,
}

/// Forward result plus what the backward pass needs.
pub struct BatchNormForward<T> {
    pub output: Tensor<T>,
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch: Option<BatchStatistics<T>>,
}

fn check_channel_param<T: Scalar>(name: &str, t: &Tensor<T>, c: usize) -> Result<()> {
    if t.shape() != [c] {
        return Err(Error::dim(
            "batchnorm2d",
            format!("input channel axis (1) has {c} channels but {name} has shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

pub fn batchnorm2d_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &RunningStats<T>,
    config: BatchNormConfig,
    mode: Mode,
) -> Result<BatchNormForward<T>> {
    config.validate()?;
    let [n, c, h, w] = x.dims4("batchnorm2d")?;
    check_channel_param("gamma", gamma, c)?;
    check_channel_param("beta", beta, c)?;
    check_channel_param("running_mean", &running.mean, c)?;
    check_channel_param("running_var", &running.var, c)?;
    let plane = h * w;
    let count = n * plane;
    let data = x.data();
    let channel_values = |ch: usize| {
        (0..n).flat_map(move |s| {
            let start = (s * c + ch) * plane;
            data[start..start + plane].iter().map(|v| v.to_f64())
        })
    };

    let (mean, inv_std, batch) = match mode {
        Mode::Train => {
            let mut mean = Vec::with_capacity(c);
            let mut inv_std = Vec::with_capacity(c);
            let mut unbiased = Vec::with_capacity(c);
            for ch in 0..c {
                let mu = channel_values(ch).sum::<f64>() / count as f64;
                let ss: f64 = channel_values(ch).map(|v| (v - mu) * (v - mu)).sum();
                let var = ss / count as f64;
                mean.push(T::from_f64(mu));
                inv_std.push(T::from_f64(1.0 / (var + config.epsilon).sqrt()));
                let corrected = if count > 1 { ss / (count - 1) as f64 } else { var };
                unbiased.push(T::from_f64(corrected));
            }
            let batch = BatchStatistics {
                mean: mean.clone(),
                unbiased_var: unbiased,
            };
            (mean, inv_std, Some(batch))
        }
        Mode::Eval => {
            running.validate()?;
            let mean = running.mean.data().to_vec();
            let inv_std = running
                .var
                .data()
                .iter()
                .map(|&v| T::from_f64(1.0 / (v.to_f64() + config.epsilon).sqrt()))
                .collect();
            (mean, inv_std, None)
        }
    };

    let mut out = vec![T::zero(); data.len()];
    for s in 0..n {
        for ch in 0..c {
            let start = (s * c + ch) * plane;
            let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for (o, &v) in out[start..start + plane]
                .iter_mut()
                .zip(&data[start..start + plane])
            {
                *o = (v - mu) * is * g + b;
            }
        }
    }
    Ok(BatchNormForward {
        output: Tensor::from_parts(x.shape().to_vec(), out),
        mean,
        inv_std,
        batch,
    })
}

pub struct BatchNormGrads<T> {
    pub input: Option<Tensor<T>>,
    pub gamma: Option<Tensor<T>>,
    pub beta: Option<Tensor<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    grad_out: &Tensor<T>,
    mode: Mode,
    need: [bool; 3],
) -> Result<BatchNormGrads<T>> {
    let [n, c, h, w] = x.dims4("batchnorm2d backward")?;
    if grad_out.shape() != x.shape() {
        return Err(Error::dim(
            "batchnorm2d backward",
            format!("upstream gradient {:?} vs input {:?}", grad_out.shape(), x.shape()),
        ));
    }
    let [need_input, need_gamma, need_beta] = need;
    let plane = h * w;
    let count = T::from_f64((n * plane) as f64);
    let (xd, dyd) = (x.data(), grad_out.data());

    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let start = (s * c + ch) * plane;
            let (mu, is) = (mean[ch], inv_std[ch]);
            for (&v, &g) in xd[start..start + plane].iter().zip(&dyd[start..start + plane]) {
                sum_dy[ch] += g;
                sum_dy_xhat[ch] += g * (v - mu) * is;
            }
        }
    }

    let input = need_input.then(|| {
        let mut dx = vec![T::zero(); xd.len()];
        for s in 0..n {
            for ch in 0..c {
                let start = (s * c + ch) * plane;
                let (mu, is, g) = (mean[ch], inv_std[ch], gamma.data()[ch]);
                let dst = &mut dx[start..start + plane];
                let src = xd[start..start + plane].iter().zip(&dyd[start..start + plane]);
                match mode {
                    Mode::Eval => {
                        for (d, (_, &dy)) in dst.iter_mut().zip(src) {
                            *d = dy * g * is;
                        }
                    }
                    Mode::Train => {
                        let mean_dy = sum_dy[ch] / count;
                        let mean_dy_xhat = sum_dy_xhat[ch] / count;
                        for (d, (&v, &dy)) in dst.iter_mut().zip(src) {
                            let xhat = (v - mu) * is;
                            *d = g * is * (dy - mean_dy - xhat * mean_dy_xhat);
                        }
                    }
                }
            }
        }
        Tensor::from_parts(x.shape().to_vec(), dx)
    });
    Ok(BatchNormGrads {
        input,
        gamma: need_gamma.then(|| Tensor::from_parts(vec![c], sum_dy_xhat)),
        beta: need_beta.then(|| Tensor::from_parts(vec![c], sum_dy)),
    })
}
