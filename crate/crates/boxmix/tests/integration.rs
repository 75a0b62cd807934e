//! End-to-end checks: CLI contract (exit codes, determinism, artifacts),
//! the optimizer smoke test, and cross-module compositions that no single
//! unit covers.

use std::process::Command;

use boxmix::data::{generate_dataset, load_dataset, SceneSpec};
use boxmix::detector::{backward, forward, init_params};
use boxmix::geometry::{build_anchor_set, AnchorGridSpec};
use boxmix::harness::{detector_spec_for, train_in_memory, RunConfig, TrainMode};
use boxmix::loss::{detection_loss_gradients, detection_loss_masked};
use boxmix::matching::{match_targets, LabelDistribution};
use boxmix::mixing::{box_mix, box_stack, mix_images, MixWeight};
use boxmix::oracle;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_boxmix")
}

#[test]
fn cli_without_arguments_exits_2() {
    let out = Command::new(bin()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "usage text expected, got: {text}");
}

#[test]
fn cli_bad_configuration_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin())
        .args(["train", "--data-dir", "nowhere", "--set", "tau=1.5"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = Command::new(bin())
        .args(["train", "--set", "no_such_key=1"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn cli_corrupted_checkpoint_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SceneSpec { seed: 4, ..Default::default() };
    generate_dataset(&scene, 4, dir.path(), "test").unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"BOXMIXCK_not_really").unwrap();
    let out = Command::new(bin())
        .args([
            "eval",
            "--checkpoint",
            "bad.ckpt",
            "--data-dir",
            ".",
            "--eval-split",
            "test",
            "--out",
            "e",
        ])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cli_selfcheck_output_is_deterministic() {
    let a = Command::new(bin()).arg("selfcheck").output().unwrap();
    let b = Command::new(bin()).arg("selfcheck").output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8_lossy(&a.stdout);
    assert!(text.lines().all(|l| l.starts_with("[PASS]")), "{text}");
}

#[test]
fn cli_noise_comparison_emits_difference_column() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SceneSpec { seed: 10, ..Default::default() };
    generate_dataset(&scene, 12, dir.path(), "train").unwrap();
    generate_dataset(&SceneSpec { seed: 11, ..scene }, 6, dir.path(), "test").unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(bin()).args(args).current_dir(dir.path()).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&[
        "train", "--data-dir", ".", "--out-dir", "r", "--epochs", "1", "--batch-size", "6",
        "--seed", "1",
    ]);
    run(&[
        "eval-noise",
        "--checkpoint",
        "r/final.ckpt",
        "--baseline",
        "r/final.ckpt",
        "--data-dir",
        ".",
        "--eval-split",
        "test",
        "--sigmas",
        "0,0.1",
        "--out",
        "n",
    ]);
    let csv = std::fs::read_to_string(dir.path().join("n/noise.csv")).unwrap();
    assert!(csv.contains("sigma,map,baseline_map,difference"), "{csv}");
    // identical checkpoints: the difference column is exactly zero
    for line in csv.lines().filter(|l| !l.starts_with('#') && !l.starts_with("sigma")) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[3], "0");
    }
    // plot-beta artifact while the fixture is around
    run(&["plot-beta", "--alpha", "1.5", "--n", "5000", "--out", "beta.csv"]);
    let beta = std::fs::read_to_string(dir.path().join("beta.csv")).unwrap();
    let counts: Vec<usize> = beta
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts.iter().sum::<usize>(), 5000);
    assert!(counts[25] > counts[0] && counts[25] > counts[49], "unimodal for alpha > 1");
}

#[test]
fn matcher_agrees_with_reference_on_the_default_tiling() {
    let anchors = build_anchor_set(&AnchorGridSpec::toy_default()).unwrap();
    let mut rng = boxmix::rng::stream(77, "toy-match-oracle", &[]);
    for _ in 0..25 {
        let y = oracle::random_ground_truth(&mut rng, 3, 3);
        let got = match_targets(&y, &anchors, 3, 0.5).unwrap();
        let expect = oracle::brute_force_match(&y, anchors.boxes(), 0.5);
        for (a, assignment) in expect.iter().enumerate() {
            match assignment {
                Some(g) => assert_eq!(
                    got.labels[a],
                    LabelDistribution::one_hot(y.boxes[*g].class_id, 3)
                ),
                None => assert_eq!(got.labels[a], LabelDistribution::background(3)),
            }
        }
    }
}

#[test]
fn stacked_annotations_match_like_their_concatenation() {
    let anchors = build_anchor_set(&AnchorGridSpec::toy_default()).unwrap();
    let mut rng = boxmix::rng::stream(78, "stack-match", &[]);
    for _ in 0..10 {
        let a = oracle::random_ground_truth(&mut rng, 3, 4);
        let b = oracle::random_ground_truth(&mut rng, 3, 4);
        let stacked = box_stack(&a, &b);
        let via_stack = match_targets(&stacked, &anchors, 3, 0.5).unwrap();
        // reference ruleset applied to the concatenated list
        let expect = oracle::brute_force_match(&stacked, anchors.boxes(), 0.5);
        for (i, assignment) in expect.iter().enumerate() {
            match assignment {
                Some(g) => assert_eq!(
                    via_stack.labels[i],
                    LabelDistribution::one_hot(stacked.boxes[*g].class_id, 3)
                ),
                None => assert_eq!(via_stack.labels[i], LabelDistribution::background(3)),
            }
        }
    }
}

/// The dual-pass step: blended supervision restricted to one anchor level,
/// clean supervision on the rest, gradients summed into the shared trunk.
/// Checked against central differences of the composite objective.
#[test]
fn dual_pass_composite_gradient_matches_finite_differences() {
    use boxmix::detector::DetectorSpec;
    use boxmix::image::ImageTensor;

    let spec = DetectorSpec::tiny(3);
    let anchors = build_anchor_set(&spec.anchors).unwrap();
    let params = init_params(&spec, 41).unwrap();
    let mut rng = boxmix::rng::stream(42, "perlevel-fd", &[]);
    let side = spec.input_side();
    let rand_image = |rng: &mut rand_chacha::ChaCha8Rng| {
        ImageTensor::new(
            side,
            side,
            3,
            (0..side * side * 3).map(|_| oracle::uniform(rng, 0.0, 1.0)).collect(),
        )
        .unwrap()
    };
    let image_a = rand_image(&mut rng);
    let image_b = rand_image(&mut rng);
    let gt_a = loop {
        let y = oracle::random_ground_truth(&mut rng, 3, 3);
        if !y.boxes.is_empty() {
            break y;
        }
    };
    let gt_b = oracle::random_ground_truth(&mut rng, 3, 3);
    let lam = MixWeight::pinned(0.7);
    let mixed_image = mix_images(&image_a, &image_b, lam).unwrap();
    let t_a = match_targets(&gt_a, &anchors, 3, 0.5).unwrap();
    let t_b = match_targets(&gt_b, &anchors, 3, 0.5).unwrap();
    let t_mix = box_mix(&t_a, &t_b, lam).unwrap();

    let range = anchors.level_range(0);
    let mixed_mask: Vec<bool> = (0..anchors.len()).map(|a| range.contains(&a)).collect();
    let other_mask: Vec<bool> = mixed_mask.iter().map(|m| !m).collect();
    let ratio = 1e6; // saturated mining keeps the objective smooth

    // analytic composite gradient
    let (m_preds, m_cache) = forward(&spec, &params, &mixed_image).unwrap();
    let (_, m_dl, m_do) =
        detection_loss_gradients(&t_mix, &m_preds, ratio, Some(&mixed_mask)).unwrap();
    let mut analytic = backward(&spec, &params, &m_cache, &m_dl, &m_do).unwrap();
    let (o_preds, o_cache) = forward(&spec, &params, &image_a).unwrap();
    let (_, o_dl, o_do) =
        detection_loss_gradients(&t_a, &o_preds, ratio, Some(&other_mask)).unwrap();
    let o_grads = backward(&spec, &params, &o_cache, &o_dl, &o_do).unwrap();
    analytic.add_assign(&o_grads).unwrap();
    let analytic = analytic.flat();

    let flat = params.flat();
    let rebuild = |x: &[f64]| {
        let mut p = params.clone();
        let mut at = 0;
        for b in &mut p.blocks {
            let len = b.data.len();
            b.data.copy_from_slice(&x[at..at + len]);
            at += len;
        }
        p
    };
    let objective = |x: &[f64]| -> f64 {
        let p = rebuild(x);
        let (mp, _) = forward(&spec, &p, &mixed_image).unwrap();
        let (op, _) = forward(&spec, &p, &image_a).unwrap();
        detection_loss_masked(&t_mix, &mp, ratio, Some(&mixed_mask)).unwrap().total
            + detection_loss_masked(&t_a, &op, ratio, Some(&other_mask)).unwrap().total
    };

    // probe a strided subset; every block is touched
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = flat.clone();
    for i in (0..flat.len()).step_by(7) {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = objective(&probe);
        probe[i] = orig - h;
        let down = objective(&probe);
        probe[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "composite gradient check failed: {worst:.2e}");
}

/// Optimizer and gradients together: a 20-scene subset is memorized.
#[test]
fn overfit_smoke_test() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SceneSpec { seed: 55, ..Default::default() };
    generate_dataset(&scene, 20, dir.path(), "train").unwrap();
    let dataset = load_dataset(dir.path(), "train").unwrap();
    let mut config = RunConfig::default_for(TrainMode::Baseline);
    config.epochs = 200;
    config.batch_size = 8;
    config.seed = 2;
    config.augment = false;
    config.lr = 3e-3;
    config.lr_decay = 0.995;
    let model = train_in_memory(&config, &dataset).unwrap();

    // early epochs descend with at most one hiccup
    let head = &model.epoch_losses[..5];
    let violations = head.windows(2).filter(|w| w[1].total >= w[0].total).count();
    assert!(violations <= 1, "early losses not descending: {head:?}");

    let final_loss = model.epoch_losses.last().unwrap().total;
    assert!(final_loss < 0.1, "failed to memorize 20 scenes: final loss {final_loss}");

    // and the memorized model actually detects its training scenes
    let spec = detector_spec_for(&config);
    let (voc, _) = boxmix::harness::evaluate_split(&spec, &model.params, &config, &dataset).unwrap();
    assert!(voc.map > 0.9, "overfit model should ace its own data, got {}", voc.map);
}
