//! Reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every op appends a node holding its output, the
//! [`Var`]s it read and whatever the backward rule needs. Because inputs are
//! always appended before the ops that consume them, node order is a
//! topological order and [`Graph::backward`] simply walks it in reverse,
//! visiting each node once.
//!
//! Model code is written against the [`Backend`] trait so the same forward
//! pass runs either on a `Graph` (training) or on [`Eager`] tensors
//! (inference, no tape, `&self` only).

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::batchnorm::{self, BatchNormConfig, BatchStatistics, Mode, RunningStats};
use crate::ops::conv::{self, Conv2dGeometry};
use crate::ops::dense;
use crate::ops::loss;
use crate::ops::pool::{self, Pool2dGeometry};
use crate::tensor::{Scalar, Tensor};

/// A trainable tensor together with its gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    /// Frozen parameters are read as constants and never updated.
    pub requires_grad: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Self {
            value,
            grad: None,
            requires_grad: true,
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    /// Input, parameter, or any node that needs no backward rule.
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: Conv2dGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        mode: Mode,
    },
    Relu {
        input: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Sum {
        input: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Tensor<T>,
        labels: Vec<usize>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::Relu { .. } => "relu",
            Op::MaxPool { .. } => "maxpool2d",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Linear { .. } => "linear",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

fn ensure_finite<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Tape for one forward/backward pass. Confined to one thread.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    names: HashMap<String, Var>,
    batch_stats: Vec<BatchStatistics<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            names: HashMap::new(),
            batch_stats: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Op tag of a node, e.g. `"conv2d"`.
    pub fn op_kind(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant leaf (no gradient).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, false, Op::Leaf)
    }

    /// Leaf whose gradient is wanted.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, true, Op::Leaf)
    }

    /// Register a named parameter; its gradient is retrievable by name.
    pub fn parameter(&mut self, name: &str, p: &Parameter<T>) -> Var {
        let v = self.push(p.value.clone(), p.requires_grad, Op::Leaf);
        self.names.insert(name.to_owned(), v);
        v
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: Conv2dGeometry,
    ) -> Result<Var> {
        let out = conv::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            geom,
        )?;
        ensure_finite("conv2d", &out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Batch normalization. In train mode the observed batch statistics are
    /// queued for [`Graph::take_batch_statistics`]; `running` is not touched.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats<T>,
        config: BatchNormConfig,
        mode: Mode,
    ) -> Result<Var> {
        let fw = batchnorm::batchnorm2d_forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            running,
            config,
            mode,
        )?;
        ensure_finite("batchnorm2d", &fw.output)?;
        self.batch_stats.extend(fw.batch);
        let rg = self.any_grad(&[input, gamma, beta]);
        Ok(self.push(
            fw.output,
            rg,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean: fw.mean,
                inv_std: fw.inv_std,
                mode,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = dense::relu_forward(self.value(input));
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, rg, Op::Relu { input }))
    }

    pub fn maxpool2d(&mut self, input: Var, geom: Pool2dGeometry) -> Result<Var> {
        let (out, argmax) = pool::maxpool2d_forward(self.value(input), geom)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, rg, Op::MaxPool { input, argmax }))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = pool::global_avg_pool_forward(self.value(input))?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, rg, Op::GlobalAvgPool { input }))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = dense::linear_forward(self.value(input), self.value(weight), self.value(bias))?;
        ensure_finite("linear", &out)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            out,
            rg,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = dense::add(self.value(a), self.value(b))?;
        ensure_finite("add", &out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = dense::mul(self.value(a), self.value(b))?;
        ensure_finite("mul", &out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let out = self.value(input).map(|v| v * factor);
        ensure_finite("scale", &out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, rg, Op::Scale { input, factor }))
    }

    /// Sum of all elements as a rank-0 scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let out = dense::sum_all(self.value(input));
        ensure_finite("sum", &out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, rg, Op::Sum { input }))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = loss::softmax_cross_entropy_forward(self.value(logits), labels)?;
        ensure_finite("softmax_cross_entropy", &loss)?;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            loss,
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Training-mode batch statistics in the order the layers ran.
    pub fn take_batch_statistics(&mut self) -> Vec<BatchStatistics<T>> {
        std::mem::take(&mut self.batch_stats)
    }

    /// Differentiate the scalar `loss` with respect to every leaf that
    /// requires a gradient. Consumes the graph.
    pub fn backward(mut self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        let root_shape = root.value.shape().to_vec();
        if !root.value.is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {root_shape:?}"
            )));
        }
        if !root.requires_grad {
            return Err(Error::Usage(
                "loss does not depend on any tensor that requires a gradient".into(),
            ));
        }

        self.nodes.truncate(loss.0 + 1);
        let mut pending: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let mut leaves: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        pending[loss.0] = Some(Tensor::ones(root_shape));

        while let Some(node) = self.nodes.pop() {
            let index = self.nodes.len();
            let Some(grad) = pending[index].take() else {
                continue;
            };
            let nodes = &self.nodes;
            let wants = |v: Var| nodes[v.0].requires_grad;
            let val = |v: Var| &nodes[v.0].value;
            let mut flows: Vec<(Var, Tensor<T>)> = Vec::with_capacity(3);

            match node.op {
                Op::Leaf => leaves[index] = Some(grad),
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    let need = [wants(input), wants(weight), bias.is_some_and(wants)];
                    let g = conv::conv2d_backward(val(input), val(weight), &grad, geom, need)?;
                    flows.extend(g.input.map(|t| (input, t)));
                    flows.extend(g.weight.map(|t| (weight, t)));
                    if let (Some(b), Some(t)) = (bias, g.bias) {
                        flows.push((b, t));
                    }
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    mode,
                } => {
                    let need = [wants(input), wants(gamma), wants(beta)];
                    let g = batchnorm::batchnorm2d_backward(
                        val(input),
                        val(gamma),
                        &mean,
                        &inv_std,
                        &grad,
                        mode,
                        need,
                    )?;
                    flows.extend(g.input.map(|t| (input, t)));
                    flows.extend(g.gamma.map(|t| (gamma, t)));
                    flows.extend(g.beta.map(|t| (beta, t)));
                }
                Op::Relu { input } => {
                    flows.push((input, dense::relu_backward(&node.value, &grad)));
                }
                Op::MaxPool { input, argmax } => {
                    let dx = pool::maxpool2d_backward(val(input).shape(), &argmax, &grad);
                    flows.push((input, dx));
                }
                Op::GlobalAvgPool { input } => {
                    flows.push((input, pool::global_avg_pool_backward(val(input).shape(), &grad)));
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let need = [wants(input), wants(weight), wants(bias)];
                    let g = dense::linear_backward(val(input), val(weight), &grad, need);
                    flows.extend(g.input.map(|t| (input, t)));
                    flows.extend(g.weight.map(|t| (weight, t)));
                    flows.extend(g.bias.map(|t| (bias, t)));
                }
                Op::Add { a, b } => {
                    flows.push((a, grad.clone()));
                    flows.push((b, grad));
                }
                Op::Mul { a, b } => {
                    flows.push((a, dense::mul(&grad, val(b))?));
                    flows.push((b, dense::mul(&grad, val(a))?));
                }
                Op::Scale { input, factor } => {
                    flows.push((input, grad.map(|g| g * factor)));
                }
                Op::Sum { input } => {
                    let g = grad.item()?;
                    flows.push((input, Tensor::full(val(input).shape().to_vec(), g)));
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    probs,
                    labels,
                } => {
                    let g = loss::softmax_cross_entropy_backward(&probs, &labels, grad.item()?);
                    flows.push((logits, g));
                }
            }

            for (target, g) in flows {
                if !wants(target) {
                    continue;
                }
                match &mut pending[target.0] {
                    Some(acc) => dense::accumulate(acc, &g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        Ok(Gradients {
            grads: leaves,
            names: self.names,
        })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    names: HashMap<String, Var>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Gradient of the parameter registered under `name`.
    pub fn take_named(&mut self, name: &str) -> Option<Tensor<T>> {
        let v = *self.names.get(name)?;
        self.take(v)
    }
}

/// The operator set a network forward pass needs, abstracted over whether
/// the pass is recorded for differentiation.
pub trait Backend<T: Scalar> {
    type Value: Clone;

    fn parameter(&mut self, name: &str, p: &Parameter<T>) -> Self::Value;
    fn tensor<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;

    fn conv2d(
        &mut self,
        input: &Self::Value,
        weight: &Self::Value,
        bias: Option<&Self::Value>,
        geom: Conv2dGeometry,
    ) -> Result<Self::Value>;
    fn batchnorm2d(
        &mut self,
        input: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        running: &RunningStats<T>,
        config: BatchNormConfig,
        mode: Mode,
    ) -> Result<Self::Value>;
    fn relu(&mut self, input: &Self::Value) -> Result<Self::Value>;
    fn maxpool2d(&mut self, input: &Self::Value, geom: Pool2dGeometry) -> Result<Self::Value>;
    fn global_avg_pool(&mut self, input: &Self::Value) -> Result<Self::Value>;
    fn linear(
        &mut self,
        input: &Self::Value,
        weight: &Self::Value,
        bias: &Self::Value,
    ) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// Training-mode batch statistics recorded since the last call, in layer order.
    fn take_batch_statistics(&mut self) -> Vec<BatchStatistics<T>>;
}

impl<T: Scalar> Backend<T> for Graph<T> {
    type Value = Var;

    fn parameter(&mut self, name: &str, p: &Parameter<T>) -> Var {
        Graph::parameter(self, name, p)
    }
    fn tensor<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.value(*v)
    }
    fn conv2d(&mut self, input: &Var, weight: &Var, bias: Option<&Var>, geom: Conv2dGeometry) -> Result<Var> {
        Graph::conv2d(self, *input, *weight, bias.copied(), geom)
    }
    fn batchnorm2d(
        &mut self,
        input: &Var,
        gamma: &Var,
        beta: &Var,
        running: &RunningStats<T>,
        config: BatchNormConfig,
        mode: Mode,
    ) -> Result<Var> {
        Graph::batchnorm2d(self, *input, *gamma, *beta, running, config, mode)
    }
    fn relu(&mut self, input: &Var) -> Result<Var> {
        Graph::relu(self, *input)
    }
    fn maxpool2d(&mut self, input: &Var, geom: Pool2dGeometry) -> Result<Var> {
        Graph::maxpool2d(self, *input, geom)
    }
    fn global_avg_pool(&mut self, input: &Var) -> Result<Var> {
        Graph::global_avg_pool(self, *input)
    }
    fn linear(&mut self, input: &Var, weight: &Var, bias: &Var) -> Result<Var> {
        Graph::linear(self, *input, *weight, *bias)
    }
    fn take_batch_statistics(&mut self) -> Vec<BatchStatistics<T>> {
        Graph::take_batch_statistics(self)
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Graph::add(self, *a, *b)
    }
}

/// Direct evaluation on tensors: nothing is recorded.
#[derive(Debug, Default)]
pub struct Eager<T> {
    batch_stats: Vec<BatchStatistics<T>>,
}

impl<T: Scalar> Eager<T> {
    pub fn new() -> Self {
        Self {
            batch_stats: Vec::new(),
        }
    }

    pub fn take_batch_statistics(&mut self) -> Vec<BatchStatistics<T>> {
        std::mem::take(&mut self.batch_stats)
    }
}

impl<T: Scalar> Backend<T> for Eager<T> {
    type Value = Tensor<T>;

    fn parameter(&mut self, _name: &str, p: &Parameter<T>) -> Tensor<T> {
        p.value.clone()
    }
    fn tensor<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }
    fn conv2d(
        &mut self,
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        geom: Conv2dGeometry,
    ) -> Result<Tensor<T>> {
        let out = conv::conv2d_forward(input, weight, bias, geom)?;
        ensure_finite("conv2d", &out)?;
        Ok(out)
    }
    fn batchnorm2d(
        &mut self,
        input: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        running: &RunningStats<T>,
        config: BatchNormConfig,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        let fw = batchnorm::batchnorm2d_forward(input, gamma, beta, running, config, mode)?;
        ensure_finite("batchnorm2d", &fw.output)?;
        self.batch_stats.extend(fw.batch);
        Ok(fw.output)
    }
    fn relu(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(dense::relu_forward(input))
    }
    fn maxpool2d(&mut self, input: &Tensor<T>, geom: Pool2dGeometry) -> Result<Tensor<T>> {
        Ok(pool::maxpool2d_forward(input, geom)?.0)
    }
    fn global_avg_pool(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        pool::global_avg_pool_forward(input)
    }
    fn linear(&mut self, input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let out = dense::linear_forward(input, weight, bias)?;
        ensure_finite("linear", &out)?;
        Ok(out)
    }
    fn take_batch_statistics(&mut self) -> Vec<BatchStatistics<T>> {
        Eager::take_batch_statistics(self)
    }
    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let out = dense::add(a, b)?;
        ensure_finite("add", &out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(v: &[f64]) -> Tensor<f64> {
        Tensor::new([v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn grad_of_weighted_sum_is_input() {
        let mut g = Graph::new();
        let w = g.variable(vec1(&[0.3, -1.0, 2.0]));
        let x = g.input(vec1(&[4.0, 5.0, -6.0]));
        let p = g.mul(w, x).unwrap();
        let loss = g.sum(p).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[4.0, 5.0, -6.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn power_rule() {
        let mut g = Graph::new();
        let w = g.variable(vec1(&[1.0, -2.0]));
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn relu_gradient_mask() {
        let mut g = Graph::new();
        let x = g.variable(vec1(&[-1.0, 2.0]));
        let r = g.relu(x).unwrap();
        let loss = g.sum(r).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn add_gradient_is_ones() {
        let mut g = Graph::new();
        let a = g.variable(vec1(&[1.0, 2.0]));
        let b = g.variable(vec1(&[3.0, 4.0]));
        let s = g.add(a, b).unwrap();
        let loss = g.sum(s).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let a = g.variable(vec1(&[1.0, 2.0]));
        let r = g.relu(a).unwrap();
        assert!(matches!(g.backward(r), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_rejects_untracked_loss() {
        let mut g = Graph::<f64>::new();
        let a = g.input(vec1(&[1.0, 2.0]));
        let s = g.sum(a).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Usage(_))));
    }

    #[test]
    fn overflow_is_an_error() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::full([2], f32::MAX));
        let b = g.input(Tensor::full([2], f32::MAX));
        assert!(matches!(g.add(a, b), Err(Error::NonFinite { op: "add" })));
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut p = Parameter::new(vec1(&[1.0, 2.0]));
        p.requires_grad = false;
        let mut g = Graph::new();
        let w = g.parameter("w", &p);
        let x = g.variable(vec1(&[3.0, 4.0]));
        let m = g.mul(w, x).unwrap();
        let loss = g.sum(m).unwrap();
        let mut grads = g.backward(loss).unwrap();
        assert!(grads.take_named("w").is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn node_records_op_kind() {
        let mut g = Graph::<f64>::new();
        let a = g.variable(vec1(&[1.0]));
        let r = g.relu(a).unwrap();
        assert_eq!(g.op_kind(a), "leaf");
        assert_eq!(g.op_kind(r), "relu");
    }
}
