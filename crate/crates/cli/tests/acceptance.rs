//! Acceptance criteria 1-9, one PASS/FAIL line each.

mod common;
#[path = "../../core/tests/common/mod.rs"]
mod oracle;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{fixture, leafnet, s, stderr, write_class_images};
use leafnet::data::augment::apply_affine;
use leafnet::data::{
    augment, canonical_classes, hflip, scan_directory, split_dataset, train_count, AffineParams, AugmentConfig,
    DatasetManifest, Split,
};
use leafnet::metrics::{MetricsReport, Reference, Rounding};
use leafnet::model::{build_resnet34, Checkpoint, HeadPolicy, ModelSpec, ResNet, HEAD_BIAS, HEAD_WEIGHT};
use leafnet::ops::batchnorm::{BatchNormConfig, RunningStats};
use leafnet::ops::conv::conv2d_forward;
use leafnet::ops::{Conv2dGeometry, Pool2dGeometry};
use leafnet::train::{evaluate, EvalOptions, TrainConfig, Trainer};
use leafnet::{Eager, Mode, Tensor};
use oracle::{away_from_zero, distinct_tensor, gradient_check, integer_tensor, random_tensor, reference_conv2d, rng};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol + 1e-9
}

fn criterion_1() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let json = dir.path().join("report.json");
    let start = Instant::now();
    let o = leafnet(&["metrics", "--cm", s(&fixture("published_confusion.csv")), "--json", s(&json)]);
    let elapsed = start.elapsed();
    ensure!(o.status.success(), "metrics command failed: {}", stderr(&o));
    let report = MetricsReport::from_json(&std::fs::read_to_string(&json).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let reference = Reference::parse(&std::fs::read_to_string(fixture("published_metrics.txt")).unwrap())
        .map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (key, &want) in &reference.values {
        if key == "overall_accuracy" {
            continue;
        }
        let got = report.presented(key, Rounding::Truncate).map_err(|e| e.to_string())?;
        ensure!(got.is_some_and(|g| close(g, want, 0.05)), "{key}: computed {got:?}, published {want}");
        checked += 1;
    }
    let accuracies = [98.0, 97.4, 93.3, 94.3, 99.3, 98.8];
    for (name, want) in canonical_classes().iter().zip(accuracies) {
        let got = report.presented(&format!("{name}.accuracy"), Rounding::Truncate).unwrap();
        ensure!(got.is_some_and(|g| close(g, want, 0.05)), "{name}.accuracy: {got:?} vs {want}");
    }
    ensure!((report.correct, report.total) == (1901, 1960), "trace/total {}/{}", report.correct, report.total);
    ensure!(close((report.overall_accuracy * 100.0).round() / 100.0, 96.99, 0.0), "overall {}", report.overall_accuracy);
    ensure!(
        report.notes.iter().any(|n| n.contains("overall_accuracy") && n.contains("97.2")),
        "97.2% discrepancy not noted: {:?}",
        report.notes
    );
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!(
        "{checked} published values within 0.05 (one-decimal truncation); per-class accuracies match; overall 96.99% \
         (1901/1960), published 97.2% noted as discrepancy; {:.0} ms",
        elapsed.as_secs_f64() * 1000.0
    ))
}

fn criterion_2() -> Outcome {
    const TRIALS: u64 = 20;
    let mut lines = Vec::new();
    let mut run = |name: &str, f: &mut dyn FnMut(u64) -> f64| -> Result<(), String> {
        let worst = (0..TRIALS).map(|t| f(t)).fold(0.0f64, f64::max);
        ensure!(worst < 1e-4, "{name}: max relative error {worst:.2e}");
        lines.push(format!("{name} {worst:.1e}"));
        Ok(())
    };
    run("conv2d", &mut |t| {
        let mut r = rng(1000 + t);
        let (n, c, o) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
        let k = r.random_range(1..4);
        let (stride, pad) = (r.random_range(1..3), r.random_range(0..2));
        let h = r.random_range(k.max(2)..7);
        let x = random_tensor(&mut r, &[n, c, h, h], 1.0);
        let w = random_tensor(&mut r, &[o, c, k, k], 1.0);
        let b = random_tensor(&mut r, &[o], 1.0);
        gradient_check(&[x, w, b], t, |g, v| g.conv2d(v[0], v[1], Some(v[2]), Conv2dGeometry::new(stride, pad)))
    })?;
    for mode in [Mode::Train, Mode::Eval] {
        let name = if mode == Mode::Train { "batchnorm2d(train)" } else { "batchnorm2d(eval)" };
        run(name, &mut |t| {
            let mut r = rng(2000 + t);
            let (n, c, h) = (r.random_range(2..4), r.random_range(1..4), r.random_range(2..5));
            let x = random_tensor(&mut r, &[n, c, h, h], 2.0);
            let gm = random_tensor(&mut r, &[c], 1.5);
            let bt = random_tensor(&mut r, &[c], 1.0);
            let mut running = RunningStats::new(c);
            running.mean = random_tensor(&mut r, &[c], 1.0);
            running.var = Tensor::from_fn([c], |_| r.random_range(0.2..2.0));
            gradient_check(&[x, gm, bt], t, |g, v| {
                g.batchnorm2d(v[0], v[1], v[2], &running, BatchNormConfig::default(), mode)
            })
        })?;
    }
    run("relu", &mut |t| {
        let mut r = rng(3000 + t);
        let shape = [r.random_range(1..3), r.random_range(1..4), r.random_range(1..5), r.random_range(1..5)];
        gradient_check(&[away_from_zero(&mut r, &shape)], t, |g, v| g.relu(v[0]))
    })?;
    run("maxpool2d", &mut |t| {
        let mut r = rng(4000 + t);
        let k = r.random_range(2..4);
        let geom = Pool2dGeometry::new(k, r.random_range(1..3), r.random_range(0..=k / 2));
        let h = r.random_range(k..7);
        let (n, c) = (r.random_range(1..3), r.random_range(1..3));
        let x = distinct_tensor(&mut r, &[n, c, h, h]);
        gradient_check(&[x], t, |g, v| g.maxpool2d(v[0], geom))
    })?;
    run("global_avg_pool", &mut |t| {
        let mut r = rng(5000 + t);
        let shape = [r.random_range(1..3), r.random_range(1..4), r.random_range(1..5), r.random_range(1..5)];
        gradient_check(&[random_tensor(&mut r, &shape, 1.0)], t, |g, v| g.global_avg_pool(v[0]))
    })?;
    run("linear", &mut |t| {
        let mut r = rng(6000 + t);
        let (n, i, o) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..5));
        let x = random_tensor(&mut r, &[n, i], 1.0);
        let w = random_tensor(&mut r, &[o, i], 1.0);
        let b = random_tensor(&mut r, &[o], 1.0);
        gradient_check(&[x, w, b], t, |g, v| g.linear(v[0], v[1], v[2]))
    })?;
    run("residual add", &mut |t| {
        let mut r = rng(7000 + t);
        let shape = [r.random_range(1..3), r.random_range(1..4), r.random_range(1..5), r.random_range(1..5)];
        let a = random_tensor(&mut r, &shape, 1.0);
        let b = random_tensor(&mut r, &shape, 1.0);
        gradient_check(&[a, b], t, |g, v| g.add(v[0], v[1]))
    })?;
    run("softmax cross-entropy", &mut |t| {
        let mut r = rng(8000 + t);
        let (n, k) = (r.random_range(1..5), r.random_range(2..7));
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let logits = random_tensor(&mut r, &[n, k], 3.0);
        gradient_check(&[logits], t, |g, v| g.softmax_cross_entropy(v[0], &labels))
    })?;
    Ok(format!("{TRIALS} trials per operator, f64, max rel. error: {}", lines.join(", ")))
}

fn criterion_3() -> Outcome {
    let mut cases = 0usize;
    let mut worst32 = 0.0f64;
    let mut r = rng(31);
    for n in 1..=2 {
        for c in 1..=3 {
            for h in 1..=8 {
                for w in 1..=8 {
                    for stride in [1, 2] {
                        for pad in [0, 1, 3] {
                            for k in 1..=3 {
                                if k > h + 2 * pad || k > w + 2 * pad {
                                    continue;
                                }
                                let o = 1 + (cases % 2);
                                let geom = Conv2dGeometry::new(stride, pad);
                                let x = integer_tensor(&mut r, &[n, c, h, w]);
                                let wt = integer_tensor(&mut r, &[o, c, k, k]);
                                let b = integer_tensor(&mut r, &[o]);
                                let got = conv2d_forward(&x, &wt, Some(&b), geom).map_err(|e| e.to_string())?;
                                let want = reference_conv2d(&x, &wt, Some(&b), stride, pad);
                                ensure!(
                                    got.shape() == want.shape() && got.data() == want.data(),
                                    "f64 mismatch at n{n} c{c} {h}x{w} k{k} s{stride} p{pad}"
                                );

                                let xf = random_tensor(&mut r, &[n, c, h, w], 1.0);
                                let wf = random_tensor(&mut r, &[o, c, k, k], 1.0);
                                let bf = random_tensor(&mut r, &[o], 1.0);
                                let got = conv2d_forward(&xf.cast::<f32>(), &wf.cast::<f32>(), Some(&bf.cast()), geom)
                                    .map_err(|e| e.to_string())?;
                                let want = reference_conv2d(&xf, &wf, Some(&bf), stride, pad);
                                // error relative to the magnitude of the summed terms
                                let abs_x = xf.map(f64::abs);
                                let abs_w = wf.map(f64::abs);
                                let scale = reference_conv2d(&abs_x, &abs_w, Some(&bf.map(f64::abs)), stride, pad);
                                for ((g, w_), s_) in got.data().iter().zip(want.data()).zip(scale.data()) {
                                    worst32 = worst32.max((*g as f64 - w_).abs() / s_.max(f64::MIN_POSITIVE));
                                }
                                cases += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    ensure!(worst32 <= 1e-5, "f32 relative error {worst32:.2e}");
    Ok(format!(
        "{cases} shapes (N<=2, C<=3, 8x8, k<=3, strides {{1,2}}, pads {{0,1,3}}): f64 exact, f32 max rel. error {worst32:.1e}"
    ))
}

/// Independent per-layer parameter count.
fn count_parameters(classes: usize) -> usize {
    let conv = |i: usize, o: usize, k: usize| i * o * k * k;
    let bn = |c: usize| 2 * c;
    let mut total = conv(3, 64, 7) + bn(64);
    let mut in_c = 64;
    for (blocks, out_c) in [(3, 64), (4, 128), (6, 256), (3, 512)] {
        for b in 0..blocks {
            let i = if b == 0 { in_c } else { out_c };
            total += conv(i, out_c, 3) + bn(out_c) + conv(out_c, out_c, 3) + bn(out_c);
            if b == 0 && i != out_c {
                total += conv(i, out_c, 1) + bn(out_c);
            }
        }
        in_c = out_c;
    }
    total + 512 * classes + classes
}

fn criterion_4() -> Outcome {
    let model: ResNet<f32> = build_resnet34(ModelSpec::default(), 42).map_err(|e| e.to_string())?;
    ensure!(model.weighted_layer_count() == 34, "weighted layers {}", model.weighted_layer_count());
    let mut r = rng(4);
    let x = Tensor::from_fn([2, 3, 224, 224], |_| r.random_range(-2.0f32..2.0));
    let trace = model.forward_trace(&mut Eager::new(), &x, Mode::Eval).map_err(|e| e.to_string())?;
    let stages: Vec<Vec<usize>> = trace.stages.iter().map(|t| t.shape()[1..].to_vec()).collect();
    ensure!(
        stages == [vec![64, 56, 56], vec![128, 28, 28], vec![256, 14, 14], vec![512, 7, 7]],
        "stage shapes {stages:?}"
    );
    ensure!(trace.logits.shape() == [2, 6], "logits {:?}", trace.logits.shape());
    let expected = count_parameters(6);
    ensure!(expected == 21_287_750, "counting script drifted: {expected}");
    ensure!(model.parameter_count() == expected, "{} parameters, expected {expected}", model.parameter_count());
    Ok(format!(
        "34 weighted layers; [2,3,224,224] -> [2,6]; stages {stages:?}; {expected} parameters"
    ))
}

/// Serialized bytes of every tensor except the classifier.
fn backbone_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut only = Checkpoint::new();
    for (name, t) in ckpt.tensors() {
        if name != HEAD_WEIGHT && name != HEAD_BIAS {
            only.insert(name.clone(), t.clone());
        }
    }
    only.to_bytes()
}

fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let source: ResNet<f32> = build_resnet34(ModelSpec::with_classes(1000), 7).map_err(|e| e.to_string())?;
    let path = dir.path().join("imagenet.ckpt");
    source.save(&path).map_err(|e| e.to_string())?;
    let before = Checkpoint::load(&path).map_err(|e| e.to_string())?;

    let mut in_memory = source.clone();
    in_memory.replace_head(6);
    let loaded = ResNet::<f32>::load(&path, HeadPolicy::Replace(6)).map_err(|e| e.to_string())?;
    for (label, model) in [("replace_head", &in_memory), ("load+replace", &loaded)] {
        let out = dir.path().join("six.ckpt");
        model.save(&out).map_err(|e| e.to_string())?;
        let after = Checkpoint::load(&out).map_err(|e| e.to_string())?;
        ensure!(backbone_bytes(&after) == backbone_bytes(&before), "{label}: backbone bytes differ");
        let head = after.get(HEAD_WEIGHT).ok_or("head missing")?;
        ensure!(head.shape() == [6, 512], "{label}: head {:?}", head.shape());
        ensure!(after.get(HEAD_BIAS).map(|b| b.shape() == [6]) == Some(true), "{label}: bias shape");
    }
    Ok(format!(
        "1000->6: {} backbone bytes identical after replace_head and after load with replacement; head [6, 512]",
        backbone_bytes(&before).len()
    ))
}

fn overfit_run(manifest: &DatasetManifest) -> Result<(usize, Vec<u8>), String> {
    let spec = ModelSpec {
        input_size: 64,
        ..ModelSpec::with_classes(2)
    };
    let model = build_resnet34::<f32>(spec, 42).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        learning_rate: 0.001,
        batch_size: 8,
        max_epochs: 30,
        seed: 42,
        input_size: 64,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, config).map_err(|e| e.to_string())?;
    for _ in 0..30 {
        let log = trainer.run_epoch(manifest).map_err(|e| e.to_string())?;
        let (cm, _) = evaluate(trainer.model(), manifest, Split::Train, &EvalOptions::default()).map_err(|e| e.to_string())?;
        if cm.trace() == cm.total() {
            return Ok((log.epoch, trainer.model().to_checkpoint().to_bytes()));
        }
    }
    Err("train accuracy below 100% after 30 epochs".into())
}

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_class_images(dir.path(), &["red", "green"], 12, 64);
    let (names, samples) = scan_directory(dir.path(), None).map_err(|e| e.to_string())?;
    let manifest = split_dataset(&samples, &names, 0.7, 42).map_err(|e| e.to_string())?;
    ensure!(
        manifest.class_counts().iter().all(|c| c[0] == 8),
        "expected 8 training images per class, got {:?}",
        manifest.class_counts()
    );
    let start = Instant::now();
    let (epoch, weights) = overfit_run(&manifest)?;
    let elapsed = start.elapsed();
    let (epoch_again, weights_again) = overfit_run(&manifest)?;
    ensure!(epoch == epoch_again && weights == weights_again, "second run differs (epoch {epoch_again})");
    ensure!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
    Ok(format!(
        "64x64 inputs (stem stride kept), 2 classes x 8 train images, lr 0.001, batch 8, seed 42: \
         100% train accuracy (eval mode) at epoch {epoch}, {:.0} s; rerun bit-identical",
        elapsed.as_secs_f64()
    ))
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_class_images(dir.path(), &["red", "green"], 5, 24);
    let (names, samples) = scan_directory(dir.path(), None).map_err(|e| e.to_string())?;
    let manifest = split_dataset(&samples, &names, 0.6, 42).map_err(|e| e.to_string())?;
    let spec = ModelSpec {
        input_size: 32,
        ..ModelSpec::with_classes(2)
    };
    let config = |epochs| TrainConfig {
        max_epochs: epochs,
        batch_size: 6,
        input_size: 32,
        ..TrainConfig::default()
    };
    let full = |epochs| -> Result<Trainer<f32>, String> {
        let model = build_resnet34(spec.clone(), 42).map_err(|e| e.to_string())?;
        let mut t = Trainer::new(model, config(epochs)).map_err(|e| e.to_string())?;
        t.run(&manifest, None, |_| {}).map_err(|e| e.to_string())?;
        Ok(t)
    };
    let a = full(10)?;
    let b = full(10)?;
    let bytes_a = a.model().to_checkpoint().to_bytes();
    ensure!(bytes_a == b.model().to_checkpoint().to_bytes(), "two identical runs differ");
    ensure!(a.logs().iter().zip(b.logs()).all(|(x, y)| x.same_values(y)), "epoch logs differ");

    let half = full(5)?;
    let path = dir.path().join("five.ckpt");
    half.to_checkpoint().save(&path).map_err(|e| e.to_string())?;
    let mut resumed = Trainer::<f32>::resume(&path, config(10)).map_err(|e| e.to_string())?;
    resumed.run(&manifest, None, |_| {}).map_err(|e| e.to_string())?;
    ensure!(resumed.model().to_checkpoint().to_bytes() == bytes_a, "5+5 resumed run differs from 10 straight");
    ensure!(resumed.logs().iter().zip(a.logs()).all(|(x, y)| x.same_values(y)), "resumed logs differ");
    Ok(format!(
        "two 10-epoch runs give identical {}-byte checkpoints; 5 + resume 5 is bit-identical to 10",
        bytes_a.len()
    ))
}

fn criterion_8() -> Outcome {
    let mut r = rng(88);
    for trial in 0..200 {
        let classes = r.random_range(1..7);
        let counts: Vec<usize> = (0..classes).map(|_| r.random_range(1..80)).collect();
        let ratio = if trial % 2 == 0 { 0.7 } else { r.random_range(0.05..0.95) };
        let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
        let samples: Vec<_> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |i| (std::path::PathBuf::from(format!("c{c}/{i}.png")), c)))
            .collect();
        let m = split_dataset(&samples, &names, ratio, trial).map_err(|e| e.to_string())?;
        ensure!(m.records.len() == samples.len(), "trial {trial}: not a partition");
        for (c, &n) in counts.iter().enumerate() {
            let [train, val] = m.class_counts()[c];
            // floor(n * ratio) in exact rational arithmetic for ratios with few decimals
            ensure!(train + val == n && train == train_count(n, ratio), "trial {trial}, class {c}");
            ensure!((train as f64) <= ratio * n as f64 + 1e-9 && (train + 1) as f64 > ratio * n as f64 - 1e-9, "floor");
        }
    }

    let table_one = [1556usize, 1550, 1300, 1312, 1356, 1350];
    let samples: Vec<_> = table_one
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| (0..n).map(move |i| (std::path::PathBuf::from(format!("c{c}/{i}.png")), c)))
        .collect();
    let m = split_dataset(&samples, &canonical_classes(), 0.7, 42).map_err(|e| e.to_string())?;
    let floors: Vec<usize> = table_one.iter().map(|&n| n * 7 / 10).collect();
    let per_class: Vec<usize> = m.class_counts().iter().map(|c| c[0]).collect();
    ensure!(per_class == floors, "per-class train counts {per_class:?}, integer floors {floors:?}");
    let (train, val) = (m.count(Split::Train), m.count(Split::Val));
    ensure!((train, val) == (5896, 2528), "published class counts split {train}/{val}");

    let mut r = rng(8);
    for size in [7usize, 31, 64] {
        let img = Tensor::from_fn([3, size, size], |_| r.random_range(-2.0f32..2.0));
        ensure!(augment(&img, &AugmentConfig::identity(1), &mut rng(2)).bit_eq(&img), "identity {size}");
        ensure!(hflip(&hflip(&img)).bit_eq(&img), "flip involution {size}");
        let turn = |deg| AffineParams {
            rotation_deg: deg,
            ..AffineParams::identity()
        };
        let ccw = apply_affine(&img, &turn(90.0));
        let d = img.data();
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    ensure!(
                        ccw.data()[(c * size + y) * size + x] == d[(c * size + x) * size + (size - 1 - y)],
                        "90 degree rotation at {size}: ({c},{y},{x})"
                    );
                }
            }
        }
        ensure!(apply_affine(&ccw, &turn(-90.0)).bit_eq(&img), "rotation inverse {size}");
    }
    Ok(format!(
        "200 randomized corpora partition with per-class floor; published class counts (1556/1550/1300/1312/1356/1350) -> {train}/{val} \
         (per-class floors {per_class:?}; the stated 5895/2529 does not follow from the per-class floor rule); \
         augmentation identity, flip involution and 90-degree permutation exact"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 metrics oracle", criterion_1),
        ("2 gradient correctness", criterion_2),
        ("3 convolution oracle", criterion_3),
        ("4 architecture conformance", criterion_4),
        ("5 head surgery", criterion_5),
        ("6 overfit smoke test", criterion_6),
        ("7 determinism and resume", criterion_7),
        ("8 pipeline properties", criterion_8),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, check) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({secs:.1} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.1} s): {why}");
            }
        }
    }
    if filter.is_none() {
        println!(
            "N/A  criterion 9 not reproducible at desk scale: the reported 97.18% validation accuracy, the loss \
             curves and the source confusion matrix all depend on the original 8,400-image leaf dataset, which \
             is not available; criteria 1-8 stand in for them"
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
