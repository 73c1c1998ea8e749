//! Procedural test clips.
//!
//! Real capture data cannot ship with the repository, so tests and the
//! CLI generate a deterministic sinusoidal "walk" instead: a legged
//! rig whose joints swing at a shared stride frequency plus a faster
//! harmonic, with per-joint amplitudes and phases drawn once from a
//! seeded generator.  Identical arguments always produce identical
//! BVH text.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bvh::serialize_bvh;
use crate::error::{Error, Result};
use crate::math::{Axis, Quat, Vec3};
use crate::motion::WorldMotion;
use crate::skeleton::{detect_foot_joints, Joint, Skeleton};

/// Joints beyond the 7-joint legged core, added in this order until
/// the budget runs out: spine chain, arm pairs, then a tail chain of
/// whatever length remains.
const SPINE: [(&str, &str, Vec3); 3] = [
    ("Spine", "Hips", [0.0, 0.12, 0.0]),
    ("Chest", "Spine", [0.0, 0.14, 0.0]),
    ("Head", "Chest", [0.0, 0.18, 0.0]),
];

fn arm_joints(attach: &str) -> Vec<(String, String, Vec3)> {
    let mut v = Vec::new();
    for (side, sx) in [("Left", -1.0), ("Right", 1.0)] {
        v.push((
            format!("{side}Shoulder"),
            attach.to_string(),
            [sx * 0.15, 0.10, 0.0],
        ));
    }
    for (side, sx, parent) in [("Left", -1.0, "LeftShoulder"), ("Right", 1.0, "RightShoulder")] {
        v.push((format!("{side}Arm"), parent.to_string(), [sx * 0.25, 0.0, 0.0]));
    }
    for (side, sx, parent) in [("Left", -1.0, "LeftArm"), ("Right", 1.0, "RightArm")] {
        v.push((
            format!("{side}ForeArm"),
            parent.to_string(),
            [sx * 0.25, 0.0, 0.0],
        ));
    }
    for (side, sx, parent) in [("Left", -1.0, "LeftForeArm"), ("Right", 1.0, "RightForeArm")] {
        v.push((format!("{side}Hand"), parent.to_string(), [sx * 0.20, 0.0, 0.0]));
    }
    v
}

/// Builds the rig for a given joint budget.
pub fn fixture_skeleton(joint_count: usize) -> Result<Skeleton> {
    if joint_count < 7 {
        return Err(Error::InvalidParameter(format!(
            "fixture needs at least 7 joints for a two-legged rig, got {joint_count}"
        )));
    }
    let mut specs: Vec<(String, Option<String>, Vec3, Option<Vec3>)> = vec![
        ("Hips".into(), None, [0.0, 0.9, 0.0], None),
        ("LeftUpLeg".into(), Some("Hips".into()), [-0.1, 0.0, 0.0], None),
        (
            "LeftLeg".into(),
            Some("LeftUpLeg".into()),
            [0.0, -0.4, 0.0],
            None,
        ),
        (
            "LeftFoot".into(),
            Some("LeftLeg".into()),
            [0.0, -0.4, 0.0],
            Some([0.0, -0.05, 0.12]),
        ),
        ("RightUpLeg".into(), Some("Hips".into()), [0.1, 0.0, 0.0], None),
        (
            "RightLeg".into(),
            Some("RightUpLeg".into()),
            [0.0, -0.4, 0.0],
            None,
        ),
        (
            "RightFoot".into(),
            Some("RightLeg".into()),
            [0.0, -0.4, 0.0],
            Some([0.0, -0.05, 0.12]),
        ),
    ];
    let mut budget = joint_count - specs.len();

    let mut spine_top = "Hips".to_string();
    for (name, parent, offset) in SPINE {
        if budget == 0 {
            break;
        }
        specs.push((name.into(), Some(parent.into()), offset, None));
        spine_top = name.into();
        budget -= 1;
    }
    for (name, parent, offset) in arm_joints(&spine_top) {
        if budget == 0 {
            break;
        }
        let end = name
            .ends_with("Hand")
            .then(|| [offset[0].signum() * 0.08, 0.0, 0.0]);
        specs.push((name, Some(parent), offset, end));
        budget -= 1;
    }
    let mut tail_parent = "Hips".to_string();
    for i in 1..=budget {
        let name = format!("Tail{i}");
        specs.push((
            name.clone(),
            Some(tail_parent),
            [0.0, 0.02, -0.15],
            (i == budget).then_some([0.0, 0.0, -0.1]),
        ));
        tail_parent = name;
    }

    let joints: Vec<Joint> = specs
        .iter()
        .map(|(name, parent, offset, end_site)| Joint {
            name: name.clone(),
            parent: parent
                .as_ref()
                .map(|p| specs.iter().position(|(n, ..)| n == p).unwrap()),
            offset: *offset,
            end_site: *end_site,
        })
        .collect();
    let feet = detect_foot_joints(&joints);
    Skeleton::new(joints, feet)
}

/// Oscillator for one joint: two sinusoids on a primary axis plus a
/// small secondary wobble.
struct JointMotion {
    axis: Axis,
    secondary: Axis,
    amp1_deg: f64,
    amp2_deg: f64,
    wobble_deg: f64,
    /// Harmonic multiplier of the stride frequency.
    harmonic: f64,
    phase: f64,
}

/// Deterministic BVH text for a procedural walk cycle.
pub fn fixture_bvh(joint_count: usize, frames: usize, seed: u64, fps: f64) -> Result<String> {
    if frames < 2 {
        return Err(Error::InvalidParameter(format!(
            "fixture needs at least 2 frames, got {frames}"
        )));
    }
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "fixture frame rate {fps} must be positive"
        )));
    }
    let skeleton = fixture_skeleton(joint_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // All randomness is drawn up front, in joint order, so the motion
    // loop is pure arithmetic.
    let stride_hz = 1.1 * rng.random_range(0.9..1.1);
    let speed = 1.2 * rng.random_range(0.9..1.1);
    let sway_amp = 0.03 * rng.random_range(0.8..1.2);
    let bob_amp = 0.02 * rng.random_range(0.8..1.2);
    let weave_deg = 4.0 * rng.random_range(0.5..1.5);
    let motions: Vec<JointMotion> = skeleton
        .joints()
        .iter()
        .map(|j| {
            let name = j.name.as_str();
            let (axis, secondary, base) = if name.contains("UpLeg") {
                (Axis::X, Axis::Y, 28.0)
            } else if name.contains("Leg") {
                (Axis::X, Axis::Z, 18.0)
            } else if name.contains("Foot") {
                (Axis::X, Axis::Y, 12.0)
            } else if name.contains("Shoulder") {
                (Axis::Z, Axis::X, 6.0)
            } else if name.contains("Arm") || name.contains("Hand") {
                (Axis::X, Axis::Z, 14.0)
            } else if name.contains("Tail") {
                (Axis::Y, Axis::Z, 10.0)
            } else {
                (Axis::Y, Axis::X, 5.0)
            };
            let side_phase = if name.starts_with("Right") {
                std::f64::consts::PI
            } else {
                0.0
            };
            let chain_phase = name
                .strip_prefix("Tail")
                .and_then(|n| n.parse::<f64>().ok())
                .map_or(0.0, |n| 0.4 * n);
            JointMotion {
                axis,
                secondary,
                amp1_deg: base * rng.random_range(0.8..1.2),
                amp2_deg: 0.3 * base * rng.random_range(0.5..1.0),
                wobble_deg: 2.0 * rng.random_range(0.5..1.5),
                harmonic: if rng.random_range(0..2u32) == 0 { 2.0 } else { 3.0 },
                phase: side_phase + chain_phase + rng.random_range(-0.3..0.3),
            }
        })
        .collect();

    let tau = std::f64::consts::TAU;
    let mut root_positions = Vec::with_capacity(frames);
    let mut rotations = Vec::with_capacity(frames);
    for i in 0..frames {
        let t = i as f64 / fps;
        let w = tau * stride_hz * t;
        root_positions.push([
            sway_amp * (w + 0.7).sin(),
            0.9 + bob_amp * (2.0 * w).sin(),
            speed * t,
        ]);
        let frame: Vec<Quat> = motions
            .iter()
            .enumerate()
            .map(|(k, m)| {
                if k == 0 {
                    return Quat::from_axis_angle_deg(Axis::Y, weave_deg * (0.35 * w).sin());
                }
                let angle = m.amp1_deg * (w + m.phase).sin()
                    + m.amp2_deg * (m.harmonic * w + 2.0 * m.phase).sin();
                let wobble = m.wobble_deg * (w + 1.3 + m.phase).cos();
                Quat::from_axis_angle_deg(m.axis, angle)
                    * Quat::from_axis_angle_deg(m.secondary, wobble)
            })
            .collect();
        rotations.push(frame);
    }

    let world = WorldMotion {
        root_positions,
        rotations,
    };
    serialize_bvh(&skeleton, &world, fps)
}
