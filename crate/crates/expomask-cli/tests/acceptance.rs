//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (visible with `--nocapture`). Oracles here are re-derived from
//! first principles, independent of the library's implementation path.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use expomask_core::color::LuminancePlane;
use expomask_core::gtgen::{
    between_class_variance, manual_mask, mask_coverage, mask_union, otsu_threshold, BinaryMask,
    ThresholdRanges,
};
use expomask_core::image::SynthSceneParams;
use expomask_core::losses;
use expomask_core::metrics::{
    auc_balanced, confusion, dice_index, jaccard_index, sensitivity, specificity, ConfusionCounts,
};
use expomask_core::pipeline::{
    build_training_set, compare_gt_methods, synth_dataset, train, GtMethod, TrainConfig,
};
use expomask_core::{ExposureClass, LossKind, Tensor};

fn verdict(criterion: &str, passed: bool, detail: &str) {
    println!(
        "[acceptance] {criterion}: {} ({detail})",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "{criterion} failed: {detail}");
}

/// Simple deterministic generator so the oracles do not share RNG
/// machinery with the implementation.
struct SplitMix(u64);

impl SplitMix {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }
}

/// Criterion 1: the histogram-scan Otsu equals a brute-force maximizer
/// that recounts both classes from the pixels for all 256 candidate
/// thresholds, with the same smallest-t tie-break, on 1,000 random planes.
#[test]
fn acceptance_1_otsu_matches_brute_force_oracle() {
    fn brute_force(samples: &[u8]) -> u8 {
        let first = samples[0];
        if samples.iter().all(|&v| v == first) {
            return first;
        }
        let mut best_t = 0u8;
        let mut best_var = -1.0f64;
        for t in 0..=255u16 {
            let (mut n0, mut s0, mut n1, mut s1) = (0u64, 0u64, 0u64, 0u64);
            for &v in samples {
                if u16::from(v) <= t {
                    n0 += 1;
                    s0 += u64::from(v);
                } else {
                    n1 += 1;
                    s1 += u64::from(v);
                }
            }
            let var = between_class_variance(n0, s0, n1, s1);
            if var > best_var {
                best_var = var;
                best_t = t as u8;
            }
        }
        best_t
    }

    let start = Instant::now();
    let mut rng = SplitMix(0xace0_0001);
    for case in 0..1000 {
        let w = 1 + rng.below(64) as usize;
        let h = 1 + rng.below(64) as usize;
        // Half the planes draw from a few levels only, forcing ties.
        let sparse = case % 2 == 0;
        let samples: Vec<u8> = (0..w * h)
            .map(|_| {
                if sparse {
                    [0u8, 64, 128, 255][rng.below(4) as usize]
                } else {
                    rng.below(256) as u8
                }
            })
            .collect();
        let plane = LuminancePlane::new(w, h, samples.clone()).unwrap();
        let got = otsu_threshold(&plane).unwrap();
        let want = brute_force(&samples);
        assert_eq!(got, want, "case {case}: {w}x{h} plane");
    }
    let elapsed = start.elapsed();
    verdict(
        "criterion 1 (otsu oracle, 1000 planes)",
        elapsed < Duration::from_secs(10),
        &format!("exact match, {:.2}s", elapsed.as_secs_f64()),
    );
}

/// Criterion 2: manual_mask reproduces the inclusive-range predicate on a
/// plane holding every luminance value, byte for byte, including the
/// 119/120 and 200/201 boundaries.
#[test]
fn acceptance_2_manual_gt_byte_exact() {
    let all_values: Vec<u8> = (0..=255).collect();
    let plane = LuminancePlane::new(16, 16, all_values.clone()).unwrap();
    let ranges = ThresholdRanges::default();

    let low = manual_mask(&plane, ExposureClass::Low, &ranges);
    let expected_low: Vec<u8> = all_values
        .iter()
        .map(|&v| u8::from((120..=255).contains(&v)))
        .collect();
    assert_eq!(low.values(), expected_low.as_slice());

    let high = manual_mask(&plane, ExposureClass::High, &ranges);
    let expected_high: Vec<u8> = all_values
        .iter()
        .map(|&v| u8::from(v <= 200))
        .collect();
    assert_eq!(high.values(), expected_high.as_slice());

    // The four boundary pixels, spelled out.
    let boundary = |v: u8| (low.values()[v as usize], high.values()[v as usize]);
    assert_eq!(boundary(119), (0, 1));
    assert_eq!(boundary(120), (1, 1));
    assert_eq!(boundary(200), (1, 1));
    assert_eq!(boundary(201), (1, 0));

    verdict(
        "criterion 2 (manual GT byte-exactness)",
        true,
        "all 256 luminance values, boundaries 119/120 and 200/201",
    );
}

/// Criterion 3: frozen hand values of the losses.
#[test]
fn acceptance_3_loss_hand_values() {
    let one = Tensor::new(vec![1], vec![1.0]).unwrap();
    let half = Tensor::new(vec![1], vec![0.5]).unwrap();

    let bce = losses::bce(&one, &half).unwrap().loss;
    assert!((bce - std::f64::consts::LN_2).abs() <= 1e-12, "bce = {bce}");

    let focal = losses::focal(&one, &half, &Default::default()).unwrap().loss;
    let focal_expected = 0.25 * 0.25 * std::f64::consts::LN_2;
    assert!((focal - focal_expected).abs() <= 1e-12, "focal = {focal}");

    let zeros = Tensor::zeros(&[8]);
    let dice = losses::dice_loss(&zeros, &zeros.clone()).unwrap().loss;
    assert_eq!(dice, 0.0, "dice guard case must be exactly zero");

    // Additivity on a spread of inputs.
    let mut rng = SplitMix(0xace0_0003);
    for _ in 0..50 {
        let y_data: Vec<f64> = (0..32).map(|_| rng.below(2) as f64).collect();
        let p_data: Vec<f64> = (0..32)
            .map(|_| 0.05 + 0.9 * (rng.below(1_000_000) as f64 / 1e6))
            .collect();
        let y = Tensor::new(vec![32], y_data).unwrap();
        let p = Tensor::new(vec![32], p_data).unwrap();
        let combo = losses::dice_bce(&y, &p).unwrap().loss;
        let parts =
            losses::dice_loss(&y, &p).unwrap().loss + losses::bce(&y, &p).unwrap().loss;
        assert!((combo - parts).abs() <= 1e-12);
    }

    verdict(
        "criterion 3 (loss hand values)",
        true,
        "bce=ln2, focal=0.25*0.25*ln2, dice(0,0)=0, dice_bce additive",
    );
}

/// Criterion 4: the finite-difference suite passes for every layer, every
/// loss, and the toy end-to-end network, inside the runtime budget.
#[test]
fn acceptance_4_gradient_suite() {
    let start = Instant::now();
    let report = expomask_core::gradcheck::run_suite(8).unwrap();
    let elapsed = start.elapsed();
    for check in &report.checks {
        assert!(
            check.passed,
            "{}: max rel err {:.3e} exceeds {:.0e}",
            check.name, check.max_rel_err, check.tolerance
        );
    }
    let names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
    for required in [
        "conv2d_3x3.kernel",
        "conv2d_1x1.kernel",
        "upconv2.kernel",
        "relu.input",
        "sigmoid.input",
        "maxpool2.input",
        "concat.lhs",
        "dropout.input",
        "loss.bce",
        "loss.focal",
        "loss.dice",
        "loss.dice_bce",
        "unet.end_to_end(scale=8)",
    ] {
        assert!(names.contains(&required), "missing check {required}");
    }
    verdict(
        "criterion 4 (gradient suite)",
        elapsed < Duration::from_secs(120),
        &format!("{} checks, {:.2}s", report.checks.len(), elapsed.as_secs_f64()),
    );
}

/// Criterion 5: metric identities over 10,000 random counts (within f64
/// roundoff of the two evaluation routes; the identities are exact in
/// exact arithmetic) and the confusion tally against a pixel-loop oracle.
#[test]
fn acceptance_5_metric_identities_and_confusion_oracle() {
    let mut rng = SplitMix(0xace0_0005);
    for _ in 0..10_000 {
        let c = ConfusionCounts {
            true_pos: rng.below(1000),
            false_pos: rng.below(1000),
            true_neg: rng.below(1000),
            false_neg: rng.below(1000),
        };
        let j = jaccard_index(&c);
        let dice = dice_index(&c);
        assert!(
            (dice - 2.0 * j / (1.0 + j)).abs() <= 1e-12,
            "dice identity broke at {c:?}"
        );
        let auc = auc_balanced(&c);
        assert!(
            (auc - 0.5 * (sensitivity(&c) + specificity(&c))).abs() <= 1e-12,
            "auc identity broke at {c:?}"
        );
    }

    for case in 0..1000 {
        let w = 1 + rng.below(48) as usize;
        let h = 1 + rng.below(48) as usize;
        let pred_vals: Vec<u8> = (0..w * h).map(|_| rng.below(2) as u8).collect();
        let gt_vals: Vec<u8> = (0..w * h).map(|_| rng.below(2) as u8).collect();
        let pred = BinaryMask::new(w, h, pred_vals.clone()).unwrap();
        let gt = BinaryMask::new(w, h, gt_vals.clone()).unwrap();

        let mut oracle = ConfusionCounts::default();
        for row in 0..h {
            for col in 0..w {
                let p = pred_vals[row * w + col];
                let g = gt_vals[row * w + col];
                match (p, g) {
                    (1, 1) => oracle.true_pos += 1,
                    (1, 0) => oracle.false_pos += 1,
                    (0, 1) => oracle.false_neg += 1,
                    _ => oracle.true_neg += 1,
                }
            }
        }
        assert_eq!(confusion(&pred, &gt).unwrap(), oracle, "case {case}");
    }

    verdict(
        "criterion 5 (metric identities + confusion oracle)",
        true,
        "10000 count tuples, 1000 mask pairs",
    );
}

fn overfit_dataset(dir: &Path) {
    let base = SynthSceneParams {
        size: (64, 64),
        seed: 600,
        ..Default::default()
    };
    synth_dataset(dir, 4, &base).unwrap();
}

/// Training setup for the overfit runs. The criterion pins the dataset (4
/// synthetic 64x64 stacks), the architecture (channel_scale 8) and the
/// epoch budget (200); batch size 1 spends that budget as 800 optimizer
/// steps instead of 200, and dropout is off since regularization works
/// against deliberate overfitting. Seeds frozen after verifying the
/// threshold clears with margin (all three losses reach dice >= 0.99).
fn overfit_config(loss: LossKind) -> TrainConfig {
    TrainConfig {
        exposure_class: ExposureClass::Low,
        gt_method: GtMethod::Manual,
        loss,
        lr: 0.002,
        epochs: 200,
        batch_size: 1,
        input_size: 64,
        channel_scale: 8,
        dropout_rate: 0.0,
        seed: 0,
        ..Default::default()
    }
}

/// Criterion 6: each loss overfits 4 synthetic 64x64 scenes to a training
/// Dice of at least 0.95 within 200 epochs and 5 minutes, and the run is
/// deterministic per seed. Also checks that the training loss decreases
/// (final 10 epochs vs first 10).
#[test]
fn acceptance_6_overfit_all_three_losses() {
    let dir = tempfile::tempdir().unwrap();
    overfit_dataset(dir.path());

    let mut repeat_check: Option<Vec<f64>> = None;
    for loss in [LossKind::Bce, LossKind::Focal, LossKind::DiceBce] {
        let cfg = overfit_config(loss);
        let data = build_training_set(dir.path(), &cfg).unwrap();
        assert_eq!(data.len(), 4);

        let start = Instant::now();
        let (_params, report) = train(&data, &cfg).unwrap();
        let elapsed = start.elapsed();

        // With 4 scenes the 20% split is empty, so the report metrics are
        // the training-set metrics: exactly the overfit measurement.
        let dice = report.final_metrics.dice;
        assert!(
            dice >= 0.95,
            "{}: training dice {dice:.4} below 0.95",
            loss.as_str()
        );
        assert!(
            elapsed < Duration::from_secs(300),
            "{}: took {:.1}s",
            loss.as_str(),
            elapsed.as_secs_f64()
        );

        let first10: f64 = report.epoch_losses[..10].iter().sum::<f64>() / 10.0;
        let last10: f64 = report.epoch_losses[190..].iter().sum::<f64>() / 10.0;
        assert!(
            last10 < first10,
            "{}: loss did not decrease ({first10:.4} -> {last10:.4})",
            loss.as_str()
        );

        println!(
            "[acceptance]   {}: dice {dice:.4}, loss {first10:.4} -> {last10:.4}, {:.1}s",
            loss.as_str(),
            elapsed.as_secs_f64()
        );

        if loss == LossKind::Bce {
            repeat_check = Some(report.epoch_losses.clone());
        }
    }

    // Determinism per seed: a second bce run reproduces the loss curve.
    let cfg = overfit_config(LossKind::Bce);
    let data = build_training_set(dir.path(), &cfg).unwrap();
    let (_params, report) = train(&data, &cfg).unwrap();
    assert_eq!(
        Some(report.epoch_losses),
        repeat_check,
        "bce rerun diverged from the first run"
    );

    verdict(
        "criterion 6 (overfit, all losses)",
        true,
        "dice >= 0.95 for bce/focal/dice_bce, deterministic rerun",
    );
}

/// Criterion 7: the coverage table satisfies merged == coverage(low OR
/// high) exactly per scene; the manual-vs-otsu ordering is reported, not
/// asserted.
#[test]
fn acceptance_7_coverage_merge_identity() {
    let dir = tempfile::tempdir().unwrap();
    let base = SynthSceneParams {
        size: (48, 48),
        seed: 700,
        ..Default::default()
    };
    synth_dataset(dir.path(), 50, &base).unwrap();

    let rows = compare_gt_methods(dir.path()).unwrap();
    assert_eq!(rows.len(), 50 * 2 * 4);

    let scan = expomask_core::image::scan_dataset(dir.path()).unwrap();
    let ranges = ThresholdRanges::default();
    let mut manual_sum = 0.0;
    let mut otsu_sum = 0.0;
    for scene in &scan.scenes {
        let y_low =
            expomask_core::color::luminance(&expomask_core::image::load_png(&scene.low).unwrap());
        let y_high =
            expomask_core::color::luminance(&expomask_core::image::load_png(&scene.high).unwrap());
        for method in [GtMethod::Manual, GtMethod::Otsu] {
            let (low, high) = match method {
                GtMethod::Manual => (
                    manual_mask(&y_low, ExposureClass::Low, &ranges),
                    manual_mask(&y_high, ExposureClass::High, &ranges),
                ),
                GtMethod::Otsu => (
                    expomask_core::gtgen::otsu_mask(&y_low, ExposureClass::Low).unwrap(),
                    expomask_core::gtgen::otsu_mask(&y_high, ExposureClass::High).unwrap(),
                ),
            };
            let merged_direct = mask_coverage(&mask_union(&low, &high).unwrap()).unwrap();
            let row = rows
                .iter()
                .find(|r| {
                    r.scene_id == scene.scene_id && r.method == method && r.exposure == "merged"
                })
                .expect("merged row exists");
            assert_eq!(
                row.coverage, merged_direct,
                "scene {} {:?}",
                scene.scene_id, method
            );
            match method {
                GtMethod::Manual => manual_sum += merged_direct,
                GtMethod::Otsu => otsu_sum += merged_direct,
            }
        }
    }
    println!(
        "[acceptance]   mean merged coverage over 50 scenes: manual {:.4}, otsu {:.4} (reported, not asserted)",
        manual_sum / 50.0,
        otsu_sum / 50.0
    );
    verdict(
        "criterion 7 (coverage merge identity)",
        true,
        "merged == coverage(low OR high) on 50 scenes, both methods",
    );
}

/// Criterion 8: two identical `synth -> gt -> train -> eval` pipelines
/// through the CLI produce byte-identical models and CSVs.
#[test]
fn acceptance_8_end_to_end_determinism() {
    fn run(root: &Path) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let bin = env!("CARGO_BIN_EXE_expomask");
        let run_ok = |args: &[&str]| {
            let out = Command::new(bin).args(args).output().expect("binary runs");
            assert!(
                out.status.success(),
                "expomask {args:?}:\n{}",
                String::from_utf8_lossy(&out.stderr)
            );
        };
        let data = root.join("data");
        let data_s = data.to_str().unwrap();
        run_ok(&[
            "synth", "--out", data_s, "--count", "3", "--size", "32x32", "--seed", "9",
        ]);
        run_ok(&["gt", "--method", "manual", "--exposure", "low", "--data", data_s]);

        let cfg = root.join("run.cfg");
        std::fs::write(
            &cfg,
            "input_size = 32\nchannel_scale = 16\nepochs = 3\nbatch_size = 2\nseed = 5\n",
        )
        .unwrap();
        let model = root.join("model.emk");
        let report = root.join("report.csv");
        run_ok(&[
            "train",
            "--data",
            data_s,
            "--model-out",
            model.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ]);
        run_ok(&[
            "eval",
            "--data",
            data_s,
            "--model",
            model.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ]);
        (
            std::fs::read(model).unwrap(),
            std::fs::read(report).unwrap(),
            std::fs::read(data.join("scene_000").join("gt_low.png")).unwrap(),
        )
    }

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (model_a, report_a, gt_a) = run(dir_a.path());
    let (model_b, report_b, gt_b) = run(dir_b.path());

    assert_eq!(model_a, model_b, "model files differ between runs");
    assert_eq!(report_a, report_b, "report CSVs differ between runs");
    assert_eq!(gt_a, gt_b, "gt masks differ between runs");

    verdict(
        "criterion 8 (end-to-end determinism)",
        true,
        &format!(
            "model {} bytes, report {} bytes, gt {} bytes all identical",
            model_a.len(),
            report_a.len(),
            gt_a.len()
        ),
    );
}
