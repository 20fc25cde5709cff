//! The project's acceptance gate: ten end-to-end checks that define
//! "done" for the toolkit, from Jacobian fidelity through CLI byte
//! determinism. Each check prints one verdict line; run with
//! `cargo test --test acceptance -- --nocapture` to see them all.

use std::hint::black_box;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use image::{ImageBuffer, Luma};

use handfk::preproc::{
    self, CameraIntrinsics, CropSpec, DatasetKind, DepthImage, SourceTag,
};
use handfk::skeleton::{self, JointSet, ScaleMode, ScaleVector, JOINT_COUNT};
use handfk::solver::{self, FitConfig};
use handfk::synth::{self, FdSteps, SynthSpec};
use handfk::toynet::{self, ToyNet, TrainConfig};
use handfk::{evalkit, fk};
use handfk_cli::params;

fn verdict(check: &str, pass: bool, details: String) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {check}: {status} ({details})");
    assert!(pass, "acceptance {check}: FAIL ({details})");
}

fn spec(n: usize, seed: u64, mode: ScaleMode) -> SynthSpec {
    SynthSpec {
        n_samples: n,
        seed,
        mode,
        ..SynthSpec::default()
    }
}

fn mean_joint_error(a: &JointSet, b: &JointSet) -> f64 {
    (0..JOINT_COUNT)
        .map(|j| (a[j] - b[j]).norm())
        .sum::<f64>()
        / JOINT_COUNT as f64
}

#[test]
fn c01_jacobians_match_finite_differences() {
    let tree = skeleton::default_tree();
    let steps = FdSteps {
        h_theta: 1e-5,
        h_s: 1e-6,
    };
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (i, &mode) in ScaleMode::ALL.iter().enumerate() {
        let samples = synth::generate(&spec(200, 100 + i as u64, mode), &tree).unwrap();
        for sample in &samples {
            let analytic_pose = fk::pose_jacobian(&sample.theta, &sample.scales, &tree).unwrap();
            let analytic_scale = fk::scale_jacobian(&sample.theta, &sample.scales, &tree).unwrap();
            let (fd_pose, fd_scale) =
                synth::fd_jacobian(&sample.theta, &sample.scales, &tree, steps).unwrap();
            worst = worst
                .max(synth::max_relative_error(analytic_pose.matrix(), fd_pose.matrix()))
                .max(synth::max_relative_error(analytic_scale.matrix(), fd_scale.matrix()));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "01 jacobian_fidelity",
        worst <= 1e-6 && elapsed < 30.0,
        format!("max relative error {worst:.2e} over 200 points x 3 modes, {elapsed:.1}s"),
    );
}

#[test]
fn c02_bone_lengths_are_conserved() {
    let tree = skeleton::default_tree();
    let bounds = tree.scale_bounds();
    let mut worst = 0.0f64;
    for (i, &mode) in ScaleMode::ALL.iter().enumerate() {
        let full = SynthSpec {
            margin: 1.0,
            scale_lo: bounds.lo,
            scale_hi: bounds.hi,
            ..spec(1000, 200 + i as u64, mode)
        };
        for sample in synth::generate(&full, &tree).unwrap() {
            let per_bone = fk::expand_scales(&sample.scales, &tree);
            for (b, bone) in tree.bones().iter().enumerate() {
                let measured = (sample.joints[bone.child] - sample.joints[bone.parent]).norm();
                let expected = per_bone[b] * bone.length_mm;
                worst = worst.max((measured - expected).abs() / expected);
            }
        }
    }
    verdict(
        "02 bone_length_conservation",
        worst <= 1e-9,
        format!("max relative length error {worst:.2e} over 1000 draws x 3 modes x 15 bones"),
    );
}

#[test]
fn c03_global_scale_is_homogeneous() {
    let tree = skeleton::default_tree();
    let poses = SynthSpec {
        margin: 1.0,
        scale_lo: 1.0,
        scale_hi: 1.0,
        ..spec(100, 300, ScaleMode::Global)
    };
    let mut worst = 0.0f64;
    for sample in synth::generate(&poses, &tree).unwrap() {
        let base = *fk::forward(&sample.theta, &ScaleVector::ones(ScaleMode::Global), &tree)
            .unwrap()
            .joints();
        for s in [0.5, 0.77, 1.0, 1.9] {
            let scaled = *fk::forward(
                &sample.theta,
                &ScaleVector::uniform(ScaleMode::Global, s),
                &tree,
            )
            .unwrap()
            .joints();
            for j in 1..JOINT_COUNT {
                let got = scaled[j] - scaled[0];
                let want = (base[j] - base[0]) * s;
                worst = worst.max((got - want).norm() / want.norm().max(1e-9));
            }
        }
    }
    verdict(
        "03 global_scale_homogeneity",
        worst <= 1e-9,
        format!("max relative deviation {worst:.2e} over 100 poses x 4 factors"),
    );
}

#[test]
fn c04_simultaneous_recovery_from_default_init() {
    let tree = skeleton::default_tree();
    let start = Instant::now();
    let samples = synth::generate(&spec(100, 400, ScaleMode::Five), &tree).unwrap();
    let cfg = FitConfig::new(ScaleMode::Five);
    let rest = tree.rest_lengths();
    let mut recovered = 0usize;
    let mut lengths_ok = true;
    let mut worst_length_rel = 0.0f64;
    for sample in &samples {
        let report = solver::fit(&sample.joints, &tree, &cfg, None).unwrap();
        let fitted = *fk::forward(&report.theta_hat, &report.s_hat, &tree)
            .unwrap()
            .joints();
        if mean_joint_error(&fitted, &sample.joints) < 0.1 {
            recovered += 1;
            let est = fk::expand_scales(&report.s_hat, &tree);
            let truth = fk::expand_scales(&sample.scales, &tree);
            for b in 0..rest.len() {
                let rel = (est[b] * rest[b] - truth[b] * rest[b]).abs() / (truth[b] * rest[b]);
                worst_length_rel = worst_length_rel.max(rel);
                lengths_ok &= rel <= 0.01;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "04 simultaneous_recovery",
        recovered >= 95 && lengths_ok && elapsed < 60.0,
        format!(
            "{recovered}/100 under 0.1mm, recovered lengths within {:.2}% of truth, {elapsed:.1}s",
            100.0 * worst_length_rel
        ),
    );
}

#[test]
fn c05_frozen_scales_fit_worse() {
    let tree = skeleton::default_tree();
    let noisy = SynthSpec {
        noise_sigma_mm: 2.0,
        ..spec(50, 500, ScaleMode::Five)
    };
    let cfg = FitConfig::new(ScaleMode::Five);
    let frozen_scales = ScaleVector::ones(ScaleMode::Five);
    let mut joint_total = 0.0;
    let mut frozen_total = 0.0;
    for sample in synth::generate(&noisy, &tree).unwrap() {
        let joint_fit = solver::fit(&sample.joints, &tree, &cfg, None).unwrap();
        let fitted = *fk::forward(&joint_fit.theta_hat, &joint_fit.s_hat, &tree)
            .unwrap()
            .joints();
        joint_total += mean_joint_error(&fitted, &sample.joints);

        let frozen_fit =
            solver::fit_pose_only(&sample.joints, &tree, &cfg, &frozen_scales, None).unwrap();
        let frozen = *fk::forward(&frozen_fit.theta_hat, &frozen_fit.s_hat, &tree)
            .unwrap()
            .joints();
        frozen_total += mean_joint_error(&frozen, &sample.joints);
    }
    let joint_mean = joint_total / 50.0;
    let frozen_mean = frozen_total / 50.0;
    verdict(
        "05 fixed_scale_inferiority",
        frozen_mean > joint_mean,
        format!("frozen scales {frozen_mean:.3}mm vs joint fitting {joint_mean:.3}mm over 50 hands"),
    );
}

#[test]
fn c06_composite_training_and_gradients() {
    let tree = skeleton::default_tree();
    let mode = ScaleMode::Five;
    let noisy = |n, seed| SynthSpec {
        noise_sigma_mm: 2.0,
        ..spec(n, seed, mode)
    };
    let train_set = synth::generate(&noisy(2000, 61), &tree).unwrap();
    let eval_set = synth::generate(&noisy(200, 62), &tree).unwrap();
    let cfg = TrainConfig::default();
    assert_eq!((cfg.learning_rate, cfg.momentum), (0.001, 0.9));

    let held_out = |net: &ToyNet| -> f64 {
        let mut total = 0.0;
        for sample in &eval_set {
            let features = toynet::features_from_joints(&sample.joints);
            let (_, _, predicted) = net.predict(&features, &tree).unwrap();
            let truth = *fk::forward(&sample.theta, &sample.scales, &tree)
                .unwrap()
                .joints();
            total += mean_joint_error(&predicted, &truth);
        }
        total / eval_set.len() as f64
    };

    let initial = held_out(&ToyNet::new(&tree, mode, cfg.seed));
    let (trained, _) = toynet::train(&train_set, &tree, mode, &cfg).unwrap();
    let final_err = held_out(&trained);
    let ratio = initial / final_err;

    // Composite chain: d(loss)/d(weight) against central differences at
    // ten fixed weights spanning all three layers.
    let mut net = ToyNet::new(&tree, mode, 123);
    let probe = &train_set[0];
    let features = toynet::features_from_joints(&probe.joints);
    let (_, grads) = net.backprop(&features, &probe.joints, &tree).unwrap();
    let picks = [
        (0, 0, 0),
        (0, 31, 17),
        (0, 63, 47),
        (1, 0, 0),
        (1, 32, 32),
        (1, 63, 63),
        (2, 0, 5),
        (2, 10, 20),
        (2, 20, 40),
        (2, 25, 63),
    ];
    let h = 1e-5;
    let mut worst_rel = 0.0f64;
    for (l, r, c) in picks {
        let analytic = grads.w[l][(r, c)];
        let original = net.weights()[l][(r, c)];
        net.weights_mut()[l][(r, c)] = original + h;
        let plus = net.sample_loss(&features, &probe.joints, &tree).unwrap();
        net.weights_mut()[l][(r, c)] = original - h;
        let minus = net.sample_loss(&features, &probe.joints, &tree).unwrap();
        net.weights_mut()[l][(r, c)] = original;
        let fd = (plus - minus) / (2.0 * h);
        worst_rel = worst_rel.max((analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6));
    }

    verdict(
        "06 end_to_end_differentiability",
        ratio >= 5.0 && worst_rel <= 1e-4,
        format!(
            "held-out error {initial:.2}mm -> {final_err:.2}mm ({ratio:.1}x), \
             weight gradients within {worst_rel:.2e} of FD at 10 probes"
        ),
    );
}

#[test]
fn c07_metrics_match_brute_force() {
    let tree = skeleton::default_tree();
    let truths: Vec<JointSet> = synth::generate(&spec(100, 71, ScaleMode::Five), &tree)
        .unwrap()
        .into_iter()
        .map(|s| s.joints)
        .collect();
    let mut predictions = truths.clone();
    for (i, frame) in predictions.iter_mut().enumerate() {
        for j in 0..JOINT_COUNT {
            let k = (i * JOINT_COUNT + j) as f64;
            frame[j].x += 12.0 * (0.37 * k).sin();
            frame[j].y += 9.0 * (0.53 * k + 1.0).cos();
            frame[j].z += 7.0 * (0.71 * k + 2.0).sin();
        }
    }
    let thresholds = [20.0, 2.0, 8.0, 14.0, 5.0, 11.0, 17.0, 0.5, 23.0, 26.0];
    let report = evalkit::evaluate(&predictions, &truths, &thresholds).unwrap();

    // Independent recomputation with bare loops and explicit arithmetic.
    let n = truths.len() as f64;
    let mut exact = true;
    let mut oracle_means = [0.0f64; JOINT_COUNT];
    for (j, mean) in oracle_means.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (p, t) in predictions.iter().zip(&truths) {
            let (dx, dy, dz) = (p[j].x - t[j].x, p[j].y - t[j].y, p[j].z - t[j].z);
            acc += (dx * dx + dy * dy + dz * dz).sqrt();
        }
        *mean = acc / n;
    }
    exact &= oracle_means == report.per_joint_mean_mm;
    exact &= oracle_means.iter().sum::<f64>() / JOINT_COUNT as f64 == report.mean_joint_error_mm;

    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    exact &= report.threshold_curve.len() == sorted.len();
    for (&t, &(curve_t, fraction)) in sorted.iter().zip(&report.threshold_curve) {
        let mut within = 0usize;
        for (p, truth) in predictions.iter().zip(&truths) {
            let mut worst = 0.0f64;
            for j in 0..JOINT_COUNT {
                let (dx, dy, dz) =
                    (p[j].x - truth[j].x, p[j].y - truth[j].y, p[j].z - truth[j].z);
                worst = worst.max((dx * dx + dy * dy + dz * dz).sqrt());
            }
            if worst <= t {
                within += 1;
            }
        }
        exact &= curve_t == t && fraction == within as f64 / n;
    }

    let monotone = report
        .threshold_curve
        .windows(2)
        .all(|w| w[0].1 <= w[1].1)
        && report
            .threshold_curve
            .iter()
            .all(|&(_, f)| (0.0..=1.0).contains(&f));

    verdict(
        "07 metrics_correctness",
        exact && monotone,
        format!(
            "oracle agreement exact={exact}, curve monotone={monotone} over 100 frames, \
             10 thresholds"
        ),
    );
}

#[test]
fn c08_preproc_round_trip_and_corpus_stability() {
    let tree = skeleton::default_tree();
    let intrinsics = CameraIntrinsics::defaults_for(DatasetKind::Icvl);
    // A 480mm cube comfortably contains the largest hand (reach from the
    // palm tops out near 190mm), so no joint is clamped and the joint
    // normalization must invert exactly.
    let crop = CropSpec {
        cube_side_mm: 480.0,
        output_size: 96,
    };
    let (img_w, img_h) = (320usize, 240usize);

    let mut worst_rel = 0.0f64;
    let mut in_range = true;
    let mut samples = Vec::new();
    for (i, sample) in synth::generate(&spec(10, 81, ScaleMode::Five), &tree)
        .unwrap()
        .into_iter()
        .enumerate()
    {
        let mut joints = sample.joints;
        for j in 0..JOINT_COUNT {
            joints[j].z += 600.0;
        }
        let palm = joints[0];
        let (pu, pv) = intrinsics.project(&palm);

        // Depth fixture: missing background, an in-slab ramp around the
        // palm, and a sprinkling of far out-of-slab pixels.
        let mut data = vec![0.0f32; img_w * img_h];
        for dv in -20i64..=20 {
            for du in -20i64..=20 {
                let (u, v) = (pu as i64 + du, pv as i64 + dv);
                if u < 0 || v < 0 || u >= img_w as i64 || v >= img_h as i64 {
                    continue;
                }
                let raw = if (du + dv).rem_euclid(7) == 0 {
                    5000.0
                } else {
                    palm.z + 2.0 * (du + dv) as f64
                };
                data[v as usize * img_w + u as usize] = raw as f32;
            }
        }
        let depth = DepthImage::new(img_w, img_h, data).unwrap();
        let tag = SourceTag {
            dataset: DatasetKind::Icvl,
            subject: 0,
            frame: i as u64,
        };
        let normalized =
            preproc::crop_normalize(&depth, &intrinsics, palm, &joints, &crop, tag).unwrap();

        in_range &= normalized.depth.iter().all(|d| (-1.0..=1.0).contains(d));
        for j in 0..JOINT_COUNT {
            for axis in 0..3 {
                in_range &= (-1.0..=1.0).contains(&normalized.joints_norm[j][axis]);
            }
        }

        let back = preproc::denormalize(&normalized, &crop);
        for j in 0..JOINT_COUNT {
            worst_rel = worst_rel.max((back[j] - joints[j]).norm() / joints[j].coords.norm());
        }
        samples.push(normalized);
    }

    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a.bin"),
        dir.path().join("b.bin"),
        dir.path().join("c.bin"),
    );
    preproc::write_corpus(&a, &crop, &samples).unwrap();
    preproc::write_corpus(&b, &crop, &samples).unwrap();
    let (read_crop, read_samples) = preproc::read_corpus(&a).unwrap();
    preproc::write_corpus(&c, &read_crop, &read_samples).unwrap();
    let byte_stable = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap()
        && std::fs::read(&a).unwrap() == std::fs::read(&c).unwrap();

    verdict(
        "08 preprocessing_round_trip",
        worst_rel <= 1e-4 && in_range && byte_stable,
        format!(
            "round-trip relative error {worst_rel:.2e}, ranges in [-1,1]={in_range}, \
             corpus byte-stable={byte_stable}"
        ),
    );
}

fn handfk_bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_handfk"));
    cmd.env_remove("HANDFK_TREE");
    cmd
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary spawns");
    assert!(
        out.status.success(),
        "command failed with {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Two-frame dataset in the ICVL on-disk layout: a labels file of
/// `name u v d  x16` lines plus 16-bit depth images.
fn write_icvl_fixture(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    let mut labels = String::new();
    for frame in 0..2u32 {
        let name = format!("depth_{frame}.png");
        let pz = 500.0 + 40.0 * frame as f64;
        let mut img = ImageBuffer::<Luma<u16>, Vec<u16>>::new(96, 96);
        for v in 28..68 {
            for u in 28..68 {
                img.put_pixel(u, v, Luma([pz as u16]));
            }
        }
        img.save(dir.join(&name)).unwrap();
        let mut line = format!("{name} 48 48 {pz}");
        for j in 1..16 {
            let u = 48.0 + 12.0 * (0.8 * j as f64).sin();
            let v = 48.0 + 12.0 * (0.6 * j as f64).cos();
            let d = pz + (j % 5) as f64 * 8.0 - 16.0;
            line.push_str(&format!(" {u} {v} {d}"));
        }
        labels.push_str(&line);
        labels.push('\n');
    }
    std::fs::write(dir.join("labels.txt"), labels).unwrap();
}

#[test]
fn c09_cli_byte_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let tree = skeleton::default_tree();
    let path = |name: &str| dir.path().join(name);

    // Shared inputs, written once.
    let pose_sample = synth::generate(&spec(1, 91, ScaleMode::Five), &tree)
        .unwrap()
        .remove(0);
    std::fs::write(path("pose.txt"), params::write_pose(&pose_sample.theta)).unwrap();
    std::fs::write(path("target.txt"), params::write_joints(&pose_sample.joints)).unwrap();
    let rest = skeleton::rest_pose_joints(&tree);
    let mut shifted = rest;
    shifted[3].x += 8.0;
    std::fs::write(path("truth.txt"), params::write_annotations(&[rest, shifted])).unwrap();
    std::fs::write(path("pred.txt"), params::write_annotations(&[shifted, rest])).unwrap();
    let icvl_dir = path("icvl");
    write_icvl_fixture(&icvl_dir);

    // Each entry: a label, argv (with {} standing for the output file),
    // and whether the command also prints data on stdout.
    let mut all_match = true;
    let mut checked = 0usize;
    let cases: Vec<(&str, Vec<String>)> = vec![
        (
            "fk",
            vec![
                "fk".into(),
                "--pose".into(),
                path("pose.txt").display().to_string(),
                "--out".into(),
                "{}".into(),
            ],
        ),
        ("gradcheck", vec!["--seed".into(), "5".into(), "gradcheck".into(), "--n".into(), "2".into()]),
        (
            "fit",
            vec![
                "--mode".into(),
                "five".into(),
                "fit".into(),
                "--target".into(),
                path("target.txt").display().to_string(),
                "--out".into(),
                "{}".into(),
            ],
        ),
        (
            "calibrate",
            vec![
                "calibrate".into(),
                "--annotations".into(),
                path("truth.txt").display().to_string(),
                "--out".into(),
                "{}".into(),
            ],
        ),
        (
            "synth",
            vec![
                "--seed".into(),
                "9".into(),
                "synth".into(),
                "--n".into(),
                "8".into(),
                "--noise".into(),
                "1.0".into(),
                "--out".into(),
                "{}".into(),
            ],
        ),
        (
            "preprocess",
            vec![
                "preprocess".into(),
                "--dataset".into(),
                icvl_dir.display().to_string(),
                "--kind".into(),
                "icvl".into(),
                "--out".into(),
                "{}".into(),
            ],
        ),
        (
            "eval",
            vec![
                "eval".into(),
                "--predictions".into(),
                path("pred.txt").display().to_string(),
                "--truths".into(),
                path("truth.txt").display().to_string(),
                "--thresholds".into(),
                "2,6,10".into(),
                "--out".into(),
                "{}".into(),
            ],
        ),
    ];

    let run_case = |label: &str, argv: &[String]| {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out_file = path(&format!("{label}_{run}.out"));
            let args: Vec<String> = argv
                .iter()
                .map(|a| {
                    if a == "{}" {
                        out_file.display().to_string()
                    } else {
                        a.clone()
                    }
                })
                .collect();
            let result = run_ok(handfk_bin().args(&args));
            let file_bytes = if argv.iter().any(|a| a == "{}") {
                std::fs::read(&out_file).unwrap()
            } else {
                Vec::new()
            };
            outputs.push((result.stdout, file_bytes));
        }
        let same = outputs[0] == outputs[1];
        if !same {
            eprintln!("subcommand {label} was not byte-reproducible");
        }
        same
    };

    for (label, argv) in &cases {
        all_match &= run_case(label, argv);
        checked += 1;
    }

    // train-toy consumes the synth output from above.
    let samples_file = path("synth_0.out");
    let train_case: Vec<String> = vec![
        "train-toy".into(),
        "--samples".into(),
        samples_file.display().to_string(),
        "--epochs".into(),
        "2".into(),
        "--batch-size".into(),
        "4".into(),
        "--out".into(),
        "{}".into(),
    ];
    all_match &= run_case("train-toy", &train_case);
    checked += 1;

    verdict(
        "09 cli_determinism",
        all_match && checked == 8,
        format!("{checked} subcommands, each byte-identical across repeat runs"),
    );
}

#[test]
fn c10_forward_and_jacobian_speed() {
    let tree = skeleton::default_tree();
    let samples = synth::generate(&spec(1000, 1000, ScaleMode::Multi), &tree).unwrap();

    let start = Instant::now();
    for sample in &samples {
        black_box(fk::forward(&sample.theta, &sample.scales, &tree).unwrap());
    }
    let per_forward = start.elapsed().as_secs_f64() / samples.len() as f64;

    let start = Instant::now();
    for sample in &samples {
        black_box(fk::forward_with_jacobians(&sample.theta, &sample.scales, &tree).unwrap());
    }
    let batch_elapsed = start.elapsed().as_secs_f64();

    verdict(
        "10 performance_sanity",
        per_forward < 1e-3 && batch_elapsed < 1.0,
        format!(
            "forward {:.1}us each, 1000 forward+Jacobian passes in {:.0}ms",
            per_forward * 1e6,
            batch_elapsed * 1e3
        ),
    );
}
