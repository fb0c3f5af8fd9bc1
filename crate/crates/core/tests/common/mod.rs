//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use leafnet::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale))
}

/// Small integers, so every partial sum is exact in floating point.
pub fn integer_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-4i32..=4) as f64)
}

/// Direct loop convolution (cross-correlation, zero padding).
pub fn reference_conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let xs = x.data();
    let ws = w.data();
    let mut out = vec![0.0; n * o * oh * ow];
    for s in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[oc]);
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = xs[((s * c + ic) * h + iy as usize) * wd + ix as usize];
                                let wv = ws[((oc * c + ic) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((s * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new([n, o, oh, ow], out).unwrap()
}

/// Reverse-mode gradients compared with central differences.
///
/// `build` maps input variables to an output; non-scalar outputs are reduced
/// with a fixed random weighting so every output element carries a distinct
/// upstream gradient. Returns the worst elementwise error
/// `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(
    inputs: &[Tensor<f64>],
    seed: u64,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> f64 {
    const STEP: f64 = 1e-4;
    const FLOOR: f64 = 1e-3;

    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars).expect("forward");
        g.value(out).shape().to_vec()
    };
    let weighting = random_tensor(&mut rng(seed ^ 0x5eed), &out_shape, 1.0);

    let objective = |g: &mut Graph<f64>, vars: &[Var]| -> Var {
        let out = build(g, vars).expect("forward");
        if g.value(out).rank() == 0 {
            return out;
        }
        let w = g.input(weighting.clone());
        let m = g.mul(out, w).unwrap();
        g.sum(m).unwrap()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = objective(&mut g, &vars);
    let grads = g.backward(loss).expect("backward");

    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.input(t.clone())).collect();
        let loss = objective(&mut g, &vars);
        g.value(loss).item().unwrap()
    };

    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("missing gradient").clone();
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

/// Values spaced well apart so max-pool windows never tie under perturbation.
pub fn distinct_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let numel: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..numel).map(|i| i as f64 * 0.05 - numel as f64 * 0.025).collect();
    for i in (1..numel).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
    Tensor::new(shape.to_vec(), values).unwrap()
}

/// Random values bounded away from zero, for kinked ops.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let mag = rng.random_range(0.05..1.5);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}
