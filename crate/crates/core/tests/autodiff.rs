mod common;

use common::*;
use leafnet::ops::batchnorm::{batchnorm2d_forward, BatchNormConfig, RunningStats};
use leafnet::ops::conv::conv2d_forward;
use leafnet::ops::{output_extent, Conv2dGeometry, Pool2dGeometry};
use leafnet::{Graph, Mode, Tensor};
use proptest::prelude::*;

#[test]
fn conv_matches_loop_oracle_on_random_input() {
    let mut r = rng(7);
    let x = random_tensor(&mut r, &[1, 2, 6, 6], 1.0);
    let w = random_tensor(&mut r, &[3, 2, 3, 3], 1.0);
    let b = random_tensor(&mut r, &[3], 1.0);
    let fast = conv2d_forward(&x, &w, Some(&b), Conv2dGeometry::new(2, 1)).unwrap();
    let slow = reference_conv2d(&x, &w, Some(&b), 2, 1);
    assert_eq!(fast.shape(), &[1, 3, 3, 3]);
    assert!(fast.max_abs_diff(&slow) < 1e-12);
}

#[test]
fn batchnorm_train_normalizes_each_channel() {
    let mut r = rng(11);
    let x = random_tensor(&mut r, &[4, 3, 5, 5], 3.0).map(|v| v + 2.0);
    let fw = batchnorm2d_forward(
        &x,
        &Tensor::ones([3]),
        &Tensor::zeros([3]),
        &RunningStats::new(3),
        BatchNormConfig { epsilon: 1e-12, momentum: 0.1 },
        Mode::Train,
    )
    .unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| fw.output.data()[(n * 3 + c) * 25..(n * 3 + c + 1) * 25].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-5, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() < 1e-5, "channel {c} var {var}");
    }
}

#[test]
fn batchnorm_eval_identity() {
    let mut r = rng(12);
    let x = random_tensor(&mut r, &[2, 3, 4, 4], 2.0);
    let fw = batchnorm2d_forward(
        &x,
        &Tensor::ones([3]),
        &Tensor::zeros([3]),
        &RunningStats::new(3),
        BatchNormConfig { epsilon: 1e-300, momentum: 0.1 },
        Mode::Eval,
    )
    .unwrap();
    assert!(fw.output.max_abs_diff(&x) < 1e-12);
}

#[test]
fn batchnorm_train_matches_scalar_script() {
    let x = Tensor::<f64>::new(
        [2, 2, 2, 2],
        vec![
            0.5, -1.0, 2.0, 3.5, 1.0, 0.0, -2.5, 4.0, 1.5, 2.5, -0.5, 0.25, 3.0, -1.5, 0.75, 2.0,
        ],
    )
    .unwrap();
    let gamma = Tensor::new([2], vec![1.5, -0.5]).unwrap();
    let beta = Tensor::new([2], vec![0.1, 0.2]).unwrap();
    let fw = batchnorm2d_forward(
        &x,
        &gamma,
        &beta,
        &RunningStats::new(2),
        BatchNormConfig { epsilon: 1e-5, momentum: 0.1 },
        Mode::Train,
    )
    .unwrap();
    // frozen from an independent per-channel scalar computation
    let expected = [
        -0.5156483741398966,
        -2.07097058249332,
        1.0396738342135265,
        2.5949960425669496,
        0.1617461894835981,
        0.4065705767885704,
        1.018631545051001,
        -0.5727269724313189,
        0.5212330980957187,
        1.5581145703313342,
        -1.5525298463755117,
        -0.7748687421988005,
        -0.32790258512634646,
        0.7738071577460288,
        0.22295228630984115,
        -0.08307819782137421,
    ];
    for (got, want) in fw.output.data().iter().zip(expected) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    let batch = fw.batch.unwrap();
    assert_eq!(batch.mean, vec![1.09375, 0.84375]);
    assert!((batch.unbiased_var[0] - 2.3917410714285716).abs() < 1e-12);
    assert!((batch.unbiased_var[1] - 4.766741071428571).abs() < 1e-12);
}

#[test]
fn linear_matches_loop_matmul() {
    let mut r = rng(13);
    let x = random_tensor(&mut r, &[2, 3], 1.0);
    let w = random_tensor(&mut r, &[4, 3], 1.0);
    let b = random_tensor(&mut r, &[4], 1.0);
    let y = leafnet::ops::dense::linear_forward(&x, &w, &b).unwrap();
    for i in 0..2 {
        for k in 0..4 {
            let mut acc = b.data()[k];
            for f in 0..3 {
                acc += x.data()[i * 3 + f] * w.data()[k * 3 + f];
            }
            assert!((y.data()[i * 4 + k] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_cross_entropy_matches_scalar_reference() {
    let mut r = rng(14);
    let logits = random_tensor(&mut r, &[2, 6], 3.0);
    let labels = [4, 1];
    let mut g = Graph::new();
    let l = g.input(logits.clone());
    let loss = g.softmax_cross_entropy(l, &labels).unwrap();
    let got = g.value(loss).item().unwrap();

    let mut nll = 0.0;
    for (row, &label) in labels.iter().enumerate() {
        let z = &logits.data()[row * 6..row * 6 + 6];
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        let p = z[label].exp() / denom;
        nll -= p.ln();
    }
    assert!((got - nll / 2.0).abs() < 1e-12);
    assert!(got >= 0.0);
}

#[test]
fn gradient_check_each_op_smoke() {
    let mut r = rng(15);
    let x = random_tensor(&mut r, &[2, 2, 5, 5], 1.0);
    let w = random_tensor(&mut r, &[3, 2, 3, 3], 1.0);
    let b = random_tensor(&mut r, &[3], 1.0);
    let err = gradient_check(&[x, w, b], 1, |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), Conv2dGeometry::new(2, 1))
    });
    assert!(err < 1e-4, "conv2d {err}");

    let x = random_tensor(&mut r, &[3, 2, 3, 3], 2.0);
    let gm = random_tensor(&mut r, &[2], 1.5);
    let bt = random_tensor(&mut r, &[2], 1.0);
    let running = RunningStats::new(2);
    let err = gradient_check(&[x, gm, bt], 2, |g, v| {
        g.batchnorm2d(v[0], v[1], v[2], &running, BatchNormConfig::default(), Mode::Train)
    });
    assert!(err < 1e-4, "batchnorm2d {err}");

    let x = distinct_tensor(&mut r, &[2, 2, 5, 5]);
    let err = gradient_check(&[x], 3, |g, v| g.maxpool2d(v[0], Pool2dGeometry::new(3, 2, 1)));
    assert!(err < 1e-4, "maxpool2d {err}");
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut r = rng(16);
    let x = random_tensor(&mut r, &[2, 4], 1.0);
    let w0 = random_tensor(&mut r, &[3, 4], 1.0);
    let b0 = random_tensor(&mut r, &[3], 1.0);
    let (ca, cb) = (0.75, -2.5);

    let grads_for = |coeffs: Option<(f64, f64)>, which: usize| {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let w = g.variable(w0.clone());
        let b = g.variable(b0.clone());
        let y = g.linear(xi, w, b).unwrap();
        let l1 = g.softmax_cross_entropy(y, &[0, 2]).unwrap();
        let sq = g.mul(y, y).unwrap();
        let l2 = g.sum(sq).unwrap();
        let loss = match coeffs {
            Some((a, c)) => {
                let s1 = g.scale(l1, a).unwrap();
                let s2 = g.scale(l2, c).unwrap();
                g.add(s1, s2).unwrap()
            }
            None if which == 1 => l1,
            None => l2,
        };
        let grads = g.backward(loss).unwrap();
        (grads.get(w).unwrap().clone(), grads.get(b).unwrap().clone())
    };

    let (w1, b1) = grads_for(None, 1);
    let (w2, b2) = grads_for(None, 2);
    let (wc, bc) = grads_for(Some((ca, cb)), 0);
    for (combined, (g1, g2)) in [(wc, (w1, w2)), (bc, (b1, b2))] {
        for (i, &v) in combined.data().iter().enumerate() {
            let expect = ca * g1.data()[i] + cb * g2.data()[i];
            assert!((v - expect).abs() < 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_output_shape_follows_formula(
        n in 1usize..3, c in 1usize..4, h in 1usize..12, w in 1usize..12,
        o in 1usize..4, k in 1usize..5, stride in 1usize..3, pad in 0usize..3,
    ) {
        let x = Tensor::<f32>::zeros([n, c, h, w]);
        let weight = Tensor::<f32>::zeros([o, c, k, k]);
        let got = conv2d_forward(&x, &weight, None, Conv2dGeometry::new(stride, pad));
        match (output_extent(h, k, stride, pad), output_extent(w, k, stride, pad)) {
            (Some(oh), Some(ow)) => {
                prop_assert_eq!(got.unwrap().shape().to_vec(), vec![n, o, oh, ow]);
                prop_assert_eq!(oh, (h + 2 * pad - k) / stride + 1);
            }
            _ => prop_assert!(got.is_err()),
        }
    }

    #[test]
    fn maxpool_and_gap_shapes(
        n in 1usize..3, c in 1usize..4, h in 1usize..12, w in 1usize..12,
        k in 1usize..4, stride in 1usize..3,
    ) {
        let pad = k / 2;
        let x = Tensor::<f32>::zeros([n, c, h, w]);
        let pooled = leafnet::ops::pool::maxpool2d_forward(&x, Pool2dGeometry::new(k, stride, pad));
        match (output_extent(h, k, stride, pad), output_extent(w, k, stride, pad)) {
            (Some(oh), Some(ow)) => prop_assert_eq!(pooled.unwrap().0.shape().to_vec(), vec![n, c, oh, ow]),
            _ => prop_assert!(pooled.is_err()),
        }
        let gap = leafnet::ops::pool::global_avg_pool_forward(&x).unwrap();
        prop_assert_eq!(gap.shape(), &[n, c][..]);
    }

    #[test]
    fn softmax_rows_normalize_and_loss_nonnegative(
        values in proptest::collection::vec(-50.0f64..50.0, 12),
        labels in proptest::collection::vec(0usize..6, 2),
    ) {
        let logits = Tensor::new([2, 6], values).unwrap();
        let p = leafnet::ops::softmax(&logits).unwrap();
        for row in p.data().chunks(6) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let mut g = Graph::new();
        let l = g.input(logits);
        let loss = g.softmax_cross_entropy(l, &labels).unwrap();
        prop_assert!(g.value(loss).item().unwrap() >= 0.0);
    }
}
