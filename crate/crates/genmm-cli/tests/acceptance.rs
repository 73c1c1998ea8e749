//! Release gate: one test per acceptance criterion, each printing a
//! single pass or fail line (run with `--nocapture` to see the lines
//! on success).  Tolerances are stated inline next to every check.
//! Criterion 1 states its budget for a release build; the dev profile
//! here is optimized enough that it normally holds there too.

use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::process::Command;
use std::time::Instant;

use genmm::bvh::{parse_bvh, serialize_bvh, to_world_motion, MotionImport};
use genmm::fixture::fixture_bvh;
use genmm::math::Quat;
use genmm::matching::{assign, match_and_blend, normalize, pairwise_distances, MatchingParams};
use genmm::metrics::{coverage, set_diversity};
use genmm::motion::{
    default_contact_threshold, from_features, to_features, MotionFeatures, WorldMotion,
};
use genmm::patching::{load_partition, part_matrix, PatchSet, SkeletonPartition};
use genmm::pyramid::{build_schedule, resample};
use genmm::rotation::Rotation6D;
use genmm::skeleton::Skeleton;
use genmm::synthesis::{
    keyframe_row, synthesize, CompletionConstraint, Constraint, Keyframe, SynthesisConfig,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn criterion<F>(n: usize, name: &str, body: F)
where
    F: FnOnce() -> String + UnwindSafe,
{
    match catch_unwind(body) {
        Ok(detail) => println!("criterion {n} ({name}): PASS ({detail})"),
        Err(e) => {
            println!("criterion {n} ({name}): FAIL");
            resume_unwind(e);
        }
    }
}

fn fixture_import(joints: usize, frames: usize, seed: u64) -> MotionImport {
    let text = fixture_bvh(joints, frames, seed, 30.0).expect("fixture");
    let doc = parse_bvh(&text).expect("parse fixture");
    to_world_motion(&doc).expect("world motion")
}

fn fixture_features(joints: usize, frames: usize, seed: u64) -> (MotionImport, MotionFeatures) {
    let import = fixture_import(joints, frames, seed);
    let threshold = default_contact_threshold(&import.skeleton, import.fps);
    let f = to_features(&import.motion, &import.skeleton, threshold, import.fps)
        .expect("features");
    (import, f)
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_genmm"))
}

fn run_cli(args: &[&str]) {
    let out = cli().args(args).output().expect("spawn CLI");
    assert!(
        out.status.success(),
        "CLI {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

// 1: about a thousand frames from a 500-frame 24-joint clip with stock
// settings must come back within the 2 s wall-clock budget.
#[test]
fn criterion_1_synthesis_speed() {
    criterion(1, "synthesis speed", || {
        let (import, exemplar) = fixture_features(24, 500, 0);
        let partition = SkeletonPartition::whole_body(&import.skeleton);
        let cfg = SynthesisConfig::for_output(1000);
        let start = Instant::now();
        let out = synthesize(&[exemplar], &partition, &cfg, &Constraint::default()).unwrap();
        let elapsed = start.elapsed();
        assert_eq!(out.features.frames(), 1000);
        assert!(
            elapsed.as_secs_f64() <= 2.0,
            "took {:.3} s, budget is 2.0 s",
            elapsed.as_secs_f64()
        );
        format!("1000 frames in {} ms", elapsed.as_millis())
    });
}

// 2: with the guess equal to the single exemplar, one match-and-blend
// pass at stock settings is an identity map to within 1e-6 per value,
// and runs in under a second.
#[test]
fn criterion_2_identity_fixed_point() {
    criterion(2, "identity fixed point", || {
        let (import, exemplar) = fixture_features(24, 500, 0);
        let partition = SkeletonPartition::whole_body(&import.skeleton);
        let params = MatchingParams::new(11, 0.01, 1);
        let start = Instant::now();
        let out = match_and_blend(&exemplar, std::slice::from_ref(&exemplar), &partition, &params).unwrap();
        let elapsed = start.elapsed();
        let mut worst = 0.0f64;
        for (a, b) in out.data.iter().zip(exemplar.data.iter()) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst <= 1e-6, "largest deviation {worst:e} exceeds 1e-6");
        assert!(
            elapsed.as_secs_f64() < 1.0,
            "took {:.3} s, budget is 1.0 s",
            elapsed.as_secs_f64()
        );
        format!("max deviation {worst:.2e} in {} ms", elapsed.as_millis())
    });
}

fn naive_windows(m: &Array2<f64>, window: usize) -> Array2<f64> {
    let count = m.nrows() - window + 1;
    let cols = m.ncols();
    let mut out = Array2::zeros((count, window * cols));
    for i in 0..count {
        for t in 0..window {
            for c in 0..cols {
                out[(i, t * cols + c)] = m[(i + t, c)];
            }
        }
    }
    out
}

fn naive_distances(q: &Array2<f64>, k: &Array2<f64>) -> Array2<f64> {
    let mut d = Array2::zeros((q.nrows(), k.nrows()));
    for i in 0..q.nrows() {
        for j in 0..k.nrows() {
            let mut acc = 0.0;
            for c in 0..q.ncols() {
                let diff = q[(i, c)] - k[(j, c)];
                acc += diff * diff;
            }
            d[(i, j)] = acc;
        }
    }
    d
}

// 3: the production distance, normalization, and argmin paths agree
// with direct brute-force evaluation to 1e-6 on 200 random instances
// up to 100x100.
#[test]
fn criterion_3_kernel_matches_brute_force() {
    criterion(3, "kernel vs brute force", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
        let mut instances = 0usize;
        for _ in 0..200 {
            let window = rng.random_range(2..=5);
            let cols = rng.random_range(1..=6);
            let qn = rng.random_range(1..=100) + window - 1;
            let kn = rng.random_range(1..=100) + window - 1;
            let alpha = [0.01, 0.5, 10.0][rng.random_range(0..3)];
            let qm = Array2::from_shape_fn((qn, cols), |_| rng.random_range(-2.0..2.0));
            let km = Array2::from_shape_fn((kn, cols), |_| rng.random_range(-2.0..2.0));

            let queries = PatchSet::from_part_matrices(0, vec![qm.clone()], window).unwrap();
            let keys = PatchSet::from_part_matrices(0, vec![km.clone()], window).unwrap();
            let d = pairwise_distances(&queries, &keys).unwrap();
            let n = normalize(&d, alpha).unwrap();
            let a = assign(&n).unwrap();

            let ref_d = naive_distances(&naive_windows(&qm, window), &naive_windows(&km, window));
            assert_eq!(d.data.dim(), ref_d.dim());
            for (lhs, rhs) in d.data.iter().zip(ref_d.iter()) {
                assert!((lhs - rhs).abs() <= 1e-6, "distance {lhs} vs {rhs}");
            }
            for j in 0..ref_d.ncols() {
                let col_min = ref_d.column(j).iter().cloned().fold(f64::INFINITY, f64::min);
                for i in 0..ref_d.nrows() {
                    let direct = ref_d[(i, j)] / (alpha + col_min);
                    assert!(
                        (n.data[(i, j)] - direct).abs() <= 1e-6,
                        "normalized {} vs {direct}",
                        n.data[(i, j)]
                    );
                }
            }
            for i in 0..ref_d.nrows() {
                let row_min = n.data.row(i).iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(
                    (n.data[(i, a.keys[i])] - row_min).abs() <= 1e-6,
                    "picked key misses row minimum"
                );
            }
            instances += 1;
        }
        format!("{instances} randomized instances at 1e-6")
    });
}

// 4: the same command line and seed give byte-identical BVH output,
// while different seeds actually move the result (positive set
// diversity over 20 samples).
#[test]
fn criterion_4_determinism_and_seed_diversity() {
    criterion(4, "determinism and diversity", || {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.bvh");
        let a = dir.path().join("a.bvh");
        let b = dir.path().join("b.bvh");
        run_cli(&[
            "fixture",
            "--joints",
            "24",
            "--frames",
            "300",
            "--seed",
            "3",
            "--out",
            input.to_str().unwrap(),
        ]);
        for out in [&a, &b] {
            run_cli(&[
                "synth",
                "--input",
                input.to_str().unwrap(),
                "--seed",
                "7",
                "--out",
                out.to_str().unwrap(),
            ]);
        }
        let bytes_a = std::fs::read(&a).unwrap();
        assert_eq!(bytes_a, std::fs::read(&b).unwrap(), "same seed, different bytes");

        let (import, exemplar) = fixture_features(13, 160, 0);
        let partition = SkeletonPartition::whole_body(&import.skeleton);
        let mut samples: Vec<WorldMotion> = Vec::new();
        for seed in 0..20 {
            let cfg = SynthesisConfig {
                seed,
                ..SynthesisConfig::for_output(240)
            };
            let out =
                synthesize(std::slice::from_ref(&exemplar), &partition, &cfg, &Constraint::default()).unwrap();
            samples.push(from_features(&out.features, &import.skeleton).unwrap());
        }
        let diversity = set_diversity(&samples, &import.motion).unwrap();
        assert!(diversity > 0.0, "20 seeds collapsed to one motion");
        format!("byte-identical replay, set diversity {diversity:.4}")
    });
}

// 5: synthesis is convex per column (never leaves the exemplar's value
// range by more than 1e-6) yet temporally coherent: it covers the
// exemplar at least as well as a frame-shuffled clip of equal length.
#[test]
fn criterion_5_hull_and_temporal_coherence() {
    criterion(5, "hull and coherence", || {
        let (import, exemplar) = fixture_features(13, 250, 1);
        let partition = SkeletonPartition::whole_body(&import.skeleton);
        let cfg = SynthesisConfig {
            seed: 11,
            ..SynthesisConfig::for_output(500)
        };
        let out = synthesize(std::slice::from_ref(&exemplar), &partition, &cfg, &Constraint::default())
            .unwrap()
            .features;

        for c in 0..exemplar.layout.columns() {
            let lo = exemplar.data.column(c).iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = exemplar
                .data
                .column(c)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            for v in out.data.column(c) {
                assert!(
                    *v >= lo - 1e-6 && *v <= hi + 1e-6,
                    "column {c} value {v} outside [{lo}, {hi}]"
                );
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shuffled = Array2::from_shape_fn(out.data.dim(), |(_, c)| {
            exemplar.data[(rng.random_range(0..exemplar.frames()), c)]
        });
        let baseline = MotionFeatures::new(
            exemplar.layout,
            shuffled,
            exemplar.initial_root_position,
            exemplar.fps,
        )
        .unwrap();
        let synth_cov = coverage(&[&out], &[&exemplar], 11, 0.05).unwrap();
        let base_cov = coverage(&[&baseline], &[&exemplar], 11, 0.05).unwrap();
        assert!(
            synth_cov >= base_cov,
            "coverage {synth_cov:.4} fell below shuffled baseline {base_cov:.4}"
        );
        format!("hull held, coverage {synth_cov:.3} vs shuffled {base_cov:.3}")
    });
}

// 6: pushing the completeness weight toward zero must not cover the
// exemplar set any worse than effectively disabling it.
#[test]
fn criterion_6_completeness_raises_coverage() {
    criterion(6, "completeness knob", || {
        let mut exemplars = Vec::new();
        let mut skeleton: Option<Skeleton> = None;
        for seed in 1..=5 {
            let (import, f) = fixture_features(13, 120, seed);
            skeleton.get_or_insert(import.skeleton);
            exemplars.push(f);
        }
        let partition = SkeletonPartition::whole_body(skeleton.as_ref().unwrap());
        let run = |alpha: f64| {
            let cfg = SynthesisConfig {
                alpha,
                seed: 9,
                ..SynthesisConfig::for_output(240)
            };
            let out = synthesize(&exemplars, &partition, &cfg, &Constraint::default())
                .unwrap()
                .features;
            let refs: Vec<&MotionFeatures> = exemplars.iter().collect();
            coverage(&[&out], &refs, 11, 0.05).unwrap()
        };
        let strong = run(0.01);
        let weak = run(100.0);
        assert!(
            strong >= weak,
            "coverage at alpha 0.01 ({strong:.4}) below alpha 100 ({weak:.4})"
        );
        format!("coverage {strong:.3} at alpha 0.01 vs {weak:.3} at alpha 100")
    });
}

fn subtree(s: &Skeleton, root: usize) -> Vec<usize> {
    let mut stack = vec![root];
    let mut out = Vec::new();
    while let Some(j) = stack.pop() {
        out.push(j);
        stack.extend(s.children_of(j));
    }
    out.sort_unstable();
    out
}

// Adjacent parts must share their boundary joint, so the leg part
// keeps the hip and the assembler averages the shared columns.
fn two_part_partition_json(s: &Skeleton) -> String {
    let hips = s.joint_index("Hips").expect("fixture has a root");
    let mut left = subtree(s, s.joint_index("LeftUpLeg").expect("fixture has a left leg"));
    left.insert(0, hips);
    let name = |j: &usize| s.joints()[*j].name.clone();
    let left_names: Vec<String> = left.iter().map(name).collect();
    let body_names: Vec<String> = (0..s.joint_count())
        .filter(|j| *j == hips || !left.contains(j))
        .map(|j| name(&j))
        .collect();
    serde_json::json!({ "parts": { "body": body_names, "left_leg": left_names } }).to_string()
}

// 7: the four constrained modes keep their contracts: loops close
// bitwise in rotation with no seam jump, keyframes and completion
// tracks survive synthesis untouched, and an identity reassembly map
// reproduces plain synthesis byte for byte.
#[test]
fn criterion_7_application_contracts() {
    criterion(7, "application contracts", || {
        // Loop closure, checked on the written BVH text.
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.bvh");
        let looped = dir.path().join("loop.bvh");
        run_cli(&[
            "fixture",
            "--joints",
            "13",
            "--frames",
            "200",
            "--seed",
            "4",
            "--out",
            input.to_str().unwrap(),
        ]);
        run_cli(&[
            "loop",
            "--input",
            input.to_str().unwrap(),
            "--length",
            "400",
            "--seed",
            "2",
            "--out",
            looped.to_str().unwrap(),
        ]);
        let text = std::fs::read_to_string(&looped).unwrap();
        let frames: Vec<&str> = text
            .lines()
            .skip_while(|l| !l.starts_with("Frame Time:"))
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .collect();
        assert_eq!(frames.len(), 400);
        let first: Vec<&str> = frames[0].split_whitespace().collect();
        let last: Vec<&str> = frames[399].split_whitespace().collect();
        // Tokens 0..3 are the root position, everything after is rotation.
        assert_eq!(first[3..], last[3..], "loop rotation rows differ in the file");

        let looped_import = {
            let doc = parse_bvh(&text).unwrap();
            to_world_motion(&doc).unwrap()
        };
        let rot = &looped_import.motion.rotations;
        let max_joint_jump = |a: &[Quat], b: &[Quat]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.geodesic_angle(*y))
                .fold(0.0f64, f64::max)
        };
        let mut interior = 0.0f64;
        for pair in rot.windows(2) {
            interior = interior.max(max_joint_jump(&pair[0], &pair[1]));
        }
        let seam = max_joint_jump(rot.last().unwrap(), &rot[0]);
        assert!(
            seam <= interior + 1e-9,
            "seam jump {seam:.2e} exceeds max interior jump {interior:.2e}"
        );

        // Keyframe rows survive to the written resolution bitwise.
        let (import, exemplar) = fixture_features(13, 150, 2);
        let partition = SkeletonPartition::whole_body(&import.skeleton);
        let cfg = SynthesisConfig {
            seed: 3,
            ..SynthesisConfig::for_output(300)
        };
        let keyframes = vec![
            Keyframe {
                coarse_index: 5,
                row: exemplar.data.row(10).to_vec(),
            },
            Keyframe {
                coarse_index: 20,
                row: exemplar.data.row(100).to_vec(),
            },
        ];
        let constraint = Constraint {
            keyframes: keyframes.clone(),
            ..Constraint::default()
        };
        let out = synthesize(std::slice::from_ref(&exemplar), &partition, &cfg, &constraint).unwrap();
        let coarse = out.schedule.synthesis_lengths[0];
        let fine = *out.schedule.synthesis_lengths.last().unwrap();
        for kf in &keyframes {
            let row = keyframe_row(kf.coarse_index, coarse, fine);
            for (c, want) in kf.row.iter().enumerate() {
                assert_eq!(
                    out.features.data[(row, c)],
                    *want,
                    "keyframe at row {row}, column {c} was disturbed"
                );
            }
        }

        // Completion holds the given part track exactly.
        let partition2 = load_partition(&two_part_partition_json(&import.skeleton), &import.skeleton)
            .unwrap();
        let part = partition2.part_by_name("left_leg").unwrap().clone();
        let (_, track_src) = fixture_features(13, 150, 8);
        let track = part_matrix(&resample(&track_src, 300).unwrap().data, &part.columns);
        let constraint = Constraint {
            completion: Some(CompletionConstraint {
                part: "left_leg".into(),
                channels: track.clone(),
            }),
            ..Constraint::default()
        };
        let out = synthesize(&[exemplar], &partition2, &cfg, &constraint).unwrap();
        let held = part_matrix(&out.features.data, &part.columns);
        assert_eq!(held, track, "completion track was disturbed");

        // An identity reassembly map must reproduce plain synthesis.
        let partition_path = dir.path().join("partition.json");
        let map_path = dir.path().join("map.json");
        std::fs::write(&partition_path, two_part_partition_json(&looped_import.skeleton)).unwrap();
        std::fs::write(&map_path, r#"{"body": 0, "left_leg": 0}"#).unwrap();
        let plain = dir.path().join("plain.bvh");
        let re = dir.path().join("re.bvh");
        run_cli(&[
            "synth",
            "--input",
            input.to_str().unwrap(),
            "--partition",
            partition_path.to_str().unwrap(),
            "--seed",
            "4",
            "--out",
            plain.to_str().unwrap(),
        ]);
        run_cli(&[
            "reassemble",
            "--input",
            input.to_str().unwrap(),
            "--partition",
            partition_path.to_str().unwrap(),
            "--map",
            map_path.to_str().unwrap(),
            "--seed",
            "4",
            "--out",
            re.to_str().unwrap(),
        ]);
        assert_eq!(
            std::fs::read(&plain).unwrap(),
            std::fs::read(&re).unwrap(),
            "identity reassembly diverged from plain synthesis"
        );
        "loop, keyframes, completion, reassembly all held".to_string()
    });
}

// 8: the canonical stage plan for 500 exemplar frames, 1000 output
// frames, patch 11, coarse multiple 4, ratio 4/3.
#[test]
fn criterion_8_stage_plan_arithmetic() {
    criterion(8, "stage plan arithmetic", || {
        let s = build_schedule(500, 1000, 11, 4, 4.0 / 3.0).unwrap();
        assert_eq!(s.stages, 10);
        assert_eq!(s.exemplar_lengths, vec![44, 50, 67, 89, 119, 158, 211, 281, 375, 500]);
        assert_eq!(
            s.synthesis_lengths,
            vec![75, 100, 133, 178, 237, 316, 422, 563, 750, 1000]
        );
        "10 stages, 44..500 against 75..1000".to_string()
    });
}

// 9: the three serialization cycles hold their tolerances: BVH
// parse/serialize at 1e-5, rotation six-value encoding at 1e-6 over
// 1000 random rotations, and the feature cycle at 1e-5.
#[test]
fn criterion_9_round_trips() {
    criterion(9, "round trips", || {
        let text = fixture_bvh(24, 120, 6, 30.0).unwrap();
        let first = {
            let doc = parse_bvh(&text).unwrap();
            to_world_motion(&doc).unwrap()
        };
        let rewritten = serialize_bvh(&first.skeleton, &first.motion, first.fps).unwrap();
        let second = {
            let doc = parse_bvh(&rewritten).unwrap();
            to_world_motion(&doc).unwrap()
        };
        assert_eq!(first.motion.frames(), second.motion.frames());
        for (a, b) in first
            .skeleton
            .joints()
            .iter()
            .zip(second.skeleton.joints().iter())
        {
            assert_eq!(a.name, b.name);
        }
        for t in 0..first.motion.frames() {
            for d in 0..3 {
                let gap =
                    (first.motion.root_positions[t][d] - second.motion.root_positions[t][d]).abs();
                assert!(gap <= 1e-5, "root position drifted {gap:e}");
            }
            for j in 0..first.skeleton.joint_count() {
                let angle = first.motion.rotations[t][j].geodesic_angle(second.motion.rotations[t][j]);
                assert!(angle <= 1e-5, "rotation drifted {angle:e} rad");
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut done = 0;
        while done < 1000 {
            let q = Quat::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if q.norm() < 1e-2 {
                continue;
            }
            let q = q.normalized();
            let back = Rotation6D::from_quat(q).unwrap().to_quat().unwrap();
            let angle = q.geodesic_angle(back);
            assert!(angle <= 1e-6, "six-value cycle drifted {angle:e} rad");
            done += 1;
        }

        let threshold = default_contact_threshold(&first.skeleton, first.fps);
        let features = to_features(&first.motion, &first.skeleton, threshold, first.fps).unwrap();
        let cycled = from_features(&features, &first.skeleton).unwrap();
        for t in 0..first.motion.frames() {
            for d in 0..3 {
                let gap = (first.motion.root_positions[t][d] - cycled.root_positions[t][d]).abs();
                assert!(gap <= 1e-5, "feature cycle moved the root {gap:e}");
            }
            for j in 0..first.skeleton.joint_count() {
                let angle = first.motion.rotations[t][j].geodesic_angle(cycled.rotations[t][j]);
                assert!(angle <= 1e-5, "feature cycle drifted {angle:e} rad");
            }
        }
        "BVH at 1e-5, rotations at 1e-6 x1000, features at 1e-5".to_string()
    });
}
