use std::collections::BTreeMap;

use crate::autodiff::Parameter;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Stochastic gradient descent, optionally with heavy-ball momentum and L2
/// weight decay:
///
/// ```text
/// g ← grad + weight_decay · w
/// v ← momentum · v + g        (only when momentum > 0)
/// w ← w − lr · v
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
            velocity: BTreeMap::new(),
        }
    }

    pub fn with_momentum(mut self, momentum: f64, weight_decay: f64) -> Self {
        self.momentum = momentum;
        self.weight_decay = weight_decay;
        self
    }

    pub fn velocity(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.velocity
    }

    pub fn set_velocity(&mut self, name: String, v: Tensor<T>) {
        self.velocity.insert(name, v);
    }

    /// Update every trainable parameter from its `grad` and clear the grad.
    /// Frozen parameters are skipped.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (String, &'a mut Parameter<T>)>) -> Result<()>
    where
        T: 'a,
    {
        let lr = T::from_f64(self.learning_rate);
        let wd = T::from_f64(self.weight_decay);
        let mu = T::from_f64(self.momentum);
        for (name, p) in params {
            if !p.requires_grad {
                p.grad = None;
                continue;
            }
            let grad = p.grad.take().ok_or_else(|| {
                Error::Internal(format!("trainable parameter `{name}` has no gradient"))
            })?;
            if grad.shape() != p.value.shape() {
                return Err(Error::Internal(format!(
                    "gradient of `{name}` has shape {:?}, parameter has {:?}",
                    grad.shape(),
                    p.value.shape()
                )));
            }
            let mut step = grad;
            if self.weight_decay != 0.0 {
                for (g, &w) in step.data_mut().iter_mut().zip(p.value.data()) {
                    *g += wd * w;
                }
            }
            if self.momentum != 0.0 {
                let v = self
                    .velocity
                    .entry(name)
                    .or_insert_with(|| Tensor::zeros(step.shape().to_vec()));
                for (vi, &g) in v.data_mut().iter_mut().zip(step.data()) {
                    *vi = mu * *vi + g;
                }
                step = v.clone();
            }
            for (w, &s) in p.value.data_mut().iter_mut().zip(step.data()) {
                *w -= lr * s;
            }
        }
        Ok(())
    }
}

/// Plain `w ← w − lr·g` over `params`, clearing the grads.
pub fn sgd_step<'a, T: Scalar + 'a>(
    params: impl IntoIterator<Item = (String, &'a mut Parameter<T>)>,
    learning_rate: f64,
) -> Result<()> {
    Sgd::new(learning_rate).step(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Parameter<f64> {
        let mut p = Parameter::new(Tensor::new([1], vec![v]).unwrap());
        p.grad = Some(Tensor::new([1], vec![g]).unwrap());
        p
    }

    #[test]
    fn single_step_arithmetic() {
        let mut p = param(1.0, 0.5);
        sgd_step([("w".to_owned(), &mut p)], 0.001).unwrap();
        assert_eq!(p.value.data(), &[0.9995]);
        assert!(p.grad.is_none());
    }

    #[test]
    fn zero_rate_is_identity() {
        let mut p = param(0.25, 3.0);
        sgd_step([("w".to_owned(), &mut p)], 0.0).unwrap();
        assert_eq!(p.value.data(), &[0.25]);
    }

    #[test]
    fn frozen_untouched_and_missing_grad_is_internal() {
        let mut frozen = param(2.0, 1.0);
        frozen.requires_grad = false;
        let mut missing = Parameter::new(Tensor::new([1], vec![1.0]).unwrap());
        sgd_step([("f".to_owned(), &mut frozen)], 0.1).unwrap();
        assert_eq!(frozen.value.data(), &[2.0]);
        let err = sgd_step([("m".to_owned(), &mut missing)], 0.1).unwrap_err();
        assert!(matches!(err, Error::Internal(m) if m.contains("`m`")));
    }

    #[test]
    fn momentum_accumulates() {
        let mut opt = Sgd::new(0.1).with_momentum(0.9, 0.0);
        let mut p = param(1.0, 1.0);
        opt.step([("w".to_owned(), &mut p)]).unwrap();
        p.grad = Some(Tensor::new([1], vec![1.0]).unwrap());
        opt.step([("w".to_owned(), &mut p)]).unwrap();
        // v1 = 1, v2 = 1.9; w = 1 − 0.1 − 0.19
        assert!((p.value.data()[0] - 0.71).abs() < 1e-12);
    }
}
