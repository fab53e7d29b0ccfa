//! Acceptance gate: one test per release criterion, each printing a
//! `criterion N: PASS` line. Run with `cargo test --test acceptance`.

use std::path::Path;
use std::process::Command;

use lddr_core::data::{load_image, load_manifest, synth_generate, SynthSpec};
use lddr_core::net::{
    forward_patch, init_random_weights, stage_config_with_plan, ChannelPlan, Descriptor, Engine,
    StageConfig, WeightSet,
};
use lddr_core::shape::{
    assemble_features, extract_patch, to_canonical, warp_to_canonical, FaceFrame, Shape,
};
use lddr_core::tensor::{conv2d, lrn, maxpool2d, ConvWeights, Tensor};
use lddr_core::{
    ced_curve, nme, predict, train_cascade, train_stage, LambdaChoice, NmeProtocol, TrainConfig,
    TrainSample,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lddr(args: &[&str]) -> (String, String, Option<i32>) {
    let out = Command::new(env!("CARGO_BIN_EXE_lddr"))
        .args(args)
        .output()
        .expect("spawn lddr");
    (
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
        out.status.code(),
    )
}

#[test]
fn criterion_01_stage_geometry_closes_at_1x1x256() {
    let (stdout, stderr, code) = lddr(&["net-info"]);
    assert_eq!(code, Some(0), "net-info failed: {stderr}");
    let conv5_lines: Vec<&str> = stdout
        .lines()
        .filter(|l| l.starts_with("conv5\t"))
        .collect();
    assert_eq!(conv5_lines.len(), 4, "expected 4 stages in:\n{stdout}");
    for line in &conv5_lines {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(&fields[1..4], &["1", "1", "256"], "bad conv5 geometry: {line}");
    }
    for input in ["92x92", "68x68", "42x42", "21x21"] {
        assert!(stdout.contains(input), "missing stage input {input}");
    }
    println!("criterion 1: PASS");
}

#[test]
fn criterion_02_stage4_minimal_input_is_21() {
    let (stdout, _, code) = lddr(&["net-info", "--stage", "4"]);
    assert_eq!(code, Some(0));
    assert!(
        stdout.lines().any(|l| l == "min_input_size\t21"),
        "stage 4 min input != 21 in:\n{stdout}"
    );
    println!("criterion 2: PASS");
}

#[test]
fn criterion_03_receptive_fields_163_and_195() {
    let (stdout, _, code) = lddr(&["net-info", "--preset", "original"]);
    assert_eq!(code, Some(0));
    assert!(stdout.lines().any(|l| l.starts_with("conv5\t163\t")), "conv5 rf != 163");
    assert!(stdout.lines().any(|l| l.starts_with("pool5\t195\t")), "pool5 rf != 195");
    assert!(
        stdout.contains("conv5 itself sees 163"),
        "missing discrepancy note in:\n{stdout}"
    );
    println!("criterion 3: PASS");
}

#[test]
fn criterion_04_feature_dimension_17408() {
    let descriptors: Vec<Descriptor> = (0..68)
        .map(|i| Descriptor::new(vec![i as f64; 256]).unwrap())
        .collect();
    let feat = assemble_features(&descriptors, 68).unwrap();
    assert_eq!(feat.len(), 17408);
    println!("criterion 4: PASS");
}

fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor {
    let data = (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(h, w, c, data).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn criterion_05_kernel_loop_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    // conv
    for _ in 0..50 {
        let (h, w) = (rng.gen_range(3..=9), rng.gen_range(3..=9));
        let (in_c, out_c) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let kernel = rng.gen_range(1..=3);
        let stride = rng.gen_range(1..=2);
        let n = out_c * in_c * kernel * kernel;
        let cw = ConvWeights::new(
            kernel,
            kernel,
            in_c,
            out_c,
            1,
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..out_c).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap();
        let input = random_tensor(&mut rng, h, w, in_c);
        let fast = conv2d(&input, &cw, stride, 0).unwrap();
        let out_h = (h - kernel) / stride + 1;
        let out_w = (w - kernel) / stride + 1;
        for oy in 0..out_h {
            for ox in 0..out_w {
                for oc in 0..out_c {
                    let mut acc = cw.bias[oc];
                    for ic in 0..in_c {
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                acc += input.get(oy * stride + ky, ox * stride + kx, ic)
                                    * cw.at(oc, ic, ky, kx);
                            }
                        }
                    }
                    assert!(rel_close(fast.get(oy, ox, oc), acc, 1e-6));
                }
            }
        }
    }
    // maxpool, pad 0 (padded empty-window cases covered in the core suite)
    for case in 0..50 {
        let (h, w) = (rng.gen_range(3..=9), rng.gen_range(3..=9));
        let c = rng.gen_range(1..=4);
        let kernel = rng.gen_range(2..=3);
        let stride = rng.gen_range(1..=2);
        let ceil_mode = case % 2 == 0;
        let input = random_tensor(&mut rng, h, w, c);
        let fast = maxpool2d(&input, kernel, stride, 0, ceil_mode).unwrap();
        for oy in 0..fast.height() {
            for ox in 0..fast.width() {
                for ch in 0..c {
                    let mut m = f64::NEG_INFINITY;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let (iy, ix) = (oy * stride + ky, ox * stride + kx);
                            if iy < h && ix < w {
                                m = m.max(input.get(iy, ix, ch));
                            }
                        }
                    }
                    assert!(rel_close(fast.get(oy, ox, ch), m, 1e-6));
                }
            }
        }
    }
    // lrn
    for case in 0..50 {
        let (h, w) = (rng.gen_range(1..=9), rng.gen_range(1..=9));
        let c = rng.gen_range(1..=5);
        let n = [1usize, 3, 5][case % 3];
        let input = random_tensor(&mut rng, h, w, c);
        let fast = lrn(&input, n, 1e-4, 0.75, 2.0).unwrap();
        let half = n / 2;
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let lo = ch.saturating_sub(half);
                    let hi = (ch + half).min(c - 1);
                    let s: f64 = (lo..=hi).map(|cc| input.get(y, x, cc).powi(2)).sum();
                    let expect = input.get(y, x, ch) / (2.0 + 1e-4 / n as f64 * s).powf(0.75);
                    assert!(rel_close(fast.get(y, x, ch), expect, 1e-6));
                }
            }
        }
    }
    println!("criterion 5: PASS");
}

#[test]
fn criterion_06_ridge_normal_equation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    for case in 0..20 {
        let n = rng.gen_range(10..=50);
        let d = rng.gen_range(3..=100);
        let t = rng.gen_range(1..=8);
        let lambda = 10f64.powf(rng.gen_range(-2.0..2.0));
        let features = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
        let targets = DMatrix::from_fn(n, t, |_, _| rng.gen_range(-1.0..1.0));
        let reg = train_stage(&features, &targets, lambda).unwrap();
        let a = features.transpose() * &features + lambda * DMatrix::<f64>::identity(d, d);
        let w_oracle = a
            .cholesky()
            .unwrap()
            .solve(&(features.transpose() * &targets))
            .transpose();
        let rel = (&reg.w - &w_oracle).norm() / w_oracle.norm().max(1.0);
        assert!(rel < 1e-8, "case {case}: rel {rel}");
    }
    // shrinkage is monotone along the regularization path
    let features = DMatrix::from_fn(30, 12, |_, _| rng.gen_range(-1.0..1.0));
    let targets = DMatrix::from_fn(30, 6, |_, _| rng.gen_range(-1.0..1.0));
    let norms: Vec<f64> = [1e-2, 1.0, 1e2]
        .iter()
        .map(|&l| train_stage(&features, &targets, l).unwrap().w.norm())
        .collect();
    assert!(norms[0] >= norms[1] && norms[1] >= norms[2], "{norms:?}");
    println!("criterion 6: PASS");
}

fn slim_engine(seed: u64, stages: usize) -> (Engine, WeightSet, Vec<StageConfig>) {
    let plan = ChannelPlan::slim(1);
    let weights = init_random_weights(seed, 2.0, &plan).unwrap();
    let configs: Vec<StageConfig> = (1..=stages)
        .map(|s| stage_config_with_plan(s, &plan).unwrap())
        .collect();
    let engine = Engine::new(weights.clone(), configs.clone()).unwrap();
    (engine, weights, configs)
}

fn synth_dataset(dir: &Path, seed: u64, count: usize) -> Vec<TrainSample> {
    let manifest = synth_generate(
        &SynthSpec { seed, count, ..SynthSpec::default() },
        dir,
    )
    .unwrap();
    load_manifest(&manifest)
        .unwrap()
        .iter()
        .map(|s| {
            let (x, y, w, h) = s.face_box;
            TrainSample {
                image: load_image(&s.image_path).unwrap(),
                frame: FaceFrame::new(x, y, w, h).unwrap(),
                shape: s.shape.clone().unwrap(),
            }
        })
        .collect()
}

#[test]
fn criterion_07_increments_stay_in_target_span() {
    let tmp = tempfile::tempdir().unwrap();
    // few training faces and no augmentation: the target span is a strict
    // subspace of shape space, so membership is a sharp condition
    let dataset = synth_dataset(&tmp.path().join("train"), 71, 10);
    let (engine, _, _) = slim_engine(13, 4);
    let config = TrainConfig {
        lambda: LambdaChoice::Fixed(1.0),
        augment: None,
        record_targets: true,
        ..TrainConfig::default()
    };
    let (model, report) = train_cascade(&dataset, &engine, &config).unwrap();
    assert_eq!(report.targets.len(), 4);

    let test_faces = synth_dataset(&tmp.path().join("test"), 72, 20);
    for face in &test_faces {
        let canonical = warp_to_canonical(&face.image, &face.frame);
        let mut current = model.mean_shape.clone();
        for (t, reg) in model.regressors.iter().enumerate() {
            let size = model.schedule.sizes()[t];
            let patches: Vec<Tensor> = current
                .points()
                .iter()
                .map(|&p| extract_patch(&canonical, p, size).unwrap())
                .collect();
            let descriptors = engine.forward_batch(t + 1, &patches).unwrap();
            let mut phi = assemble_features(&descriptors, current.len())
                .unwrap()
                .values()
                .to_vec();
            phi.push(1.0);
            let phi = DMatrix::from_column_slice(phi.len(), 1, &phi);
            let inc = &reg.w * phi;

            // least-squares projection onto the span of training targets
            let basis = report.targets[t].transpose(); // 2L x N
            let coeffs = basis
                .clone()
                .svd(true, true)
                .solve(&inc, 1e-12)
                .unwrap();
            let residual = (&basis * coeffs - &inc).norm() / inc.norm().max(1e-12);
            assert!(residual <= 1e-6, "stage {}: residual {residual}", t + 1);

            let updated: Vec<(f64, f64)> = current
                .points()
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| (x + inc[(2 * i, 0)], y + inc[(2 * i + 1, 0)]))
                .collect();
            current = Shape::new(updated).unwrap();
        }
    }
    println!("criterion 7: PASS");
}

#[test]
fn criterion_08_end_to_end_learning() {
    let tmp = tempfile::tempdir().unwrap();
    let train = synth_dataset(&tmp.path().join("train"), 7, 200);
    let held_out = synth_dataset(&tmp.path().join("test"), 1007, 50);
    let (engine, _, _) = slim_engine(11, 4);
    let config = TrainConfig::default(); // lambda by cross-validation
    let (model, report) = train_cascade(&train, &engine, &config).unwrap();

    // (a) strictly decreasing training error across the four stages
    let mut prev = report.initial_error;
    for (i, &err) in report.stage_errors.iter().enumerate() {
        assert!(err < prev, "stage {}: {err} !< {prev}", i + 1);
        prev = err;
    }

    // (b) held-out error under half of the mean-shape baseline
    let mut cascade_err = 0.0;
    let mut baseline_err = 0.0;
    for face in &held_out {
        let gt_canonical = to_canonical(&face.shape, &face.frame);
        let pred = predict(&model, &face.image, &face.frame, &engine).unwrap();
        let pred_canonical = to_canonical(&pred, &face.frame);
        cascade_err += pred_canonical.mean_point_distance(&gt_canonical).unwrap();
        baseline_err += model.mean_shape.mean_point_distance(&gt_canonical).unwrap();
    }
    cascade_err /= held_out.len() as f64;
    baseline_err /= held_out.len() as f64;
    assert!(
        cascade_err < 0.5 * baseline_err,
        "held-out {cascade_err:.3} px vs baseline {baseline_err:.3} px"
    );
    println!(
        "criterion 8: PASS (held-out {cascade_err:.3} px, baseline {baseline_err:.3} px)"
    );
}

#[test]
fn criterion_09_merged_engine_equivalence() {
    let (engine, weights, configs) = slim_engine(90, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    assert_eq!(engine.weight_copies(), 1);
    for cfg in &configs {
        let patches: Vec<Tensor> = (0..10)
            .map(|_| random_tensor(&mut rng, cfg.input_size, cfg.input_size, 1))
            .collect();
        let serial: Vec<Descriptor> = patches
            .iter()
            .map(|p| forward_patch(p, cfg, &weights).unwrap())
            .collect();
        for (p, d) in patches.iter().zip(&serial) {
            let shared = engine.forward(cfg.stage_index, p).unwrap();
            assert_eq!(shared.values(), d.values(), "stage {}", cfg.stage_index);
        }
        let batch = engine.forward_batch(cfg.stage_index, &patches).unwrap();
        for (b, d) in batch.iter().zip(&serial) {
            assert_eq!(b.values(), d.values());
        }
    }
    println!("criterion 9: PASS");
}

#[test]
fn criterion_10_metric_fixtures() {
    // perfect prediction
    let mut pts = vec![(0.0f64, 0.0f64); 68];
    for (i, p) in pts.iter_mut().enumerate() {
        *p = (i as f64, 2.0 * i as f64);
    }
    // overwrite the eye landmarks so the inter-pupil distance is 60
    for p in pts.iter_mut().take(42).skip(36) {
        *p = (50.0, 100.0);
    }
    for p in pts.iter_mut().take(48).skip(42) {
        *p = (110.0, 100.0);
    }
    let gt = Shape::new(pts.clone()).unwrap();
    assert_eq!(nme(&gt, &gt, NmeProtocol::Interpupil68).unwrap(), 0.0);

    // uniform 3-pixel offset over an inter-pupil distance of 60
    let offset: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x + 3.0, y)).collect();
    let pred = Shape::new(offset).unwrap();
    let e = nme(&pred, &gt, NmeProtocol::Interpupil68).unwrap();
    assert!((e - 0.05).abs() < 1e-12, "got {e}");

    // CED monotone on 100 random error sets
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..100 {
        let errors: Vec<f64> = (0..rng.gen_range(1..40))
            .map(|_| rng.gen_range(0.0..0.2))
            .collect();
        let thresholds: Vec<f64> = (0..21).map(|i| 0.01 * i as f64).collect();
        let curve = ced_curve(&errors, &thresholds).unwrap();
        for pair in curve.windows(2) {
            assert!(pair[1].1 >= pair[0].1);
        }
    }
    println!("criterion 10: PASS");
}

fn read_dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn criterion_11_determinism_across_runs_and_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let (_, stderr, code) = lddr(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--count",
        "20",
        "--seed",
        "3",
    ]);
    assert_eq!(code, Some(0), "{stderr}");
    let manifest = data.join("manifest.tsv");

    let train_run = |tag: &str| {
        let weights = tmp.path().join(format!("w{tag}.bin"));
        let model = tmp.path().join(format!("m{tag}.bin"));
        let (_, stderr, code) = lddr(&[
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--weights",
            weights.to_str().unwrap(),
            "--init-weights",
            "11",
            "--model",
            model.to_str().unwrap(),
            "--seed",
            "5",
            "--lambda",
            "1",
            "--threads",
            "1",
        ]);
        assert_eq!(code, Some(0), "{stderr}");
        (std::fs::read(weights).unwrap(), std::fs::read(model).unwrap())
    };
    let (w1, m1) = train_run("1");
    let (w2, m2) = train_run("2");
    assert_eq!(w1, w2, "weight files differ between identical runs");
    assert_eq!(m1, m2, "model files differ between identical runs");

    let align_run = |tag: &str, threads: &str| {
        let out = tmp.path().join(format!("align{tag}"));
        let (_, stderr, code) = lddr(&[
            "align",
            "--manifest",
            manifest.to_str().unwrap(),
            "--weights",
            tmp.path().join("w1.bin").to_str().unwrap(),
            "--model",
            tmp.path().join("m1.bin").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert_eq!(code, Some(0), "{stderr}");
        read_dir_files(&out)
    };
    let a1 = align_run("1", "1");
    let a2 = align_run("2", "1");
    let a8 = align_run("8", "8");
    assert_eq!(a1.len(), 20);
    assert_eq!(a1, a2, "single-worker align is not reproducible");
    assert_eq!(a1, a8, "8-worker align differs from single worker");
    println!("criterion 11: PASS");
}
