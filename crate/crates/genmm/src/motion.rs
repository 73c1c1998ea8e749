//! Motion representation used throughout synthesis.
//!
//! A clip of `F` frames on a skeleton with `J` joints and `C`
//! contact-labeled feet becomes a dense `F x (J*6 + 3 + C)` matrix:
//!
//! | columns            | content                                   |
//! |--------------------|-------------------------------------------|
//! | `0 .. J*6`         | per-joint rotations, 6D encoding          |
//! | `J*6 .. J*6+3`     | root displacement to the previous frame   |
//! | `J*6+3 .. end`     | foot contact labels (1 = planted)         |
//!
//! Row 0's displacement is zero by construction; the absolute start
//! position is kept separately so the matrix stays translation
//! invariant.  Every column is safe to blend linearly: rotations
//! re-orthonormalize on decode and contacts re-binarize at export.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::math::{self, Quat, Vec3};
use crate::rotation::{Rotation6D, ROTATION_DIM};
use crate::skeleton::Skeleton;

/// Column bookkeeping for a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub joint_count: usize,
    pub contact_count: usize,
}

impl FeatureLayout {
    pub fn new(joint_count: usize, contact_count: usize) -> FeatureLayout {
        FeatureLayout {
            joint_count,
            contact_count,
        }
    }

    pub fn for_skeleton(s: &Skeleton) -> FeatureLayout {
        FeatureLayout::new(s.joint_count(), s.foot_joints().len())
    }

    pub fn columns(&self) -> usize {
        self.joint_count * ROTATION_DIM + 3 + self.contact_count
    }

    pub fn rotation_columns(&self) -> std::ops::Range<usize> {
        0..self.joint_count * ROTATION_DIM
    }

    pub fn joint_columns(&self, joint: usize) -> std::ops::Range<usize> {
        joint * ROTATION_DIM..(joint + 1) * ROTATION_DIM
    }

    pub fn root_velocity_columns(&self) -> std::ops::Range<usize> {
        let start = self.joint_count * ROTATION_DIM;
        start..start + 3
    }

    pub fn contact_columns(&self) -> std::ops::Range<usize> {
        let start = self.joint_count * ROTATION_DIM + 3;
        start..start + self.contact_count
    }
}

/// Feature matrix plus the metadata needed to reconstruct poses.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFeatures {
    pub layout: FeatureLayout,
    /// `frames x layout.columns()`.
    pub data: Array2<f64>,
    /// World position of the root at frame 0.
    pub initial_root_position: Vec3,
    pub fps: f64,
}

impl MotionFeatures {
    pub fn new(
        layout: FeatureLayout,
        data: Array2<f64>,
        initial_root_position: Vec3,
        fps: f64,
    ) -> Result<MotionFeatures> {
        if data.ncols() != layout.columns() {
            return Err(Error::LayoutMismatch(format!(
                "feature matrix has {} columns, layout requires {}",
                data.ncols(),
                layout.columns()
            )));
        }
        Ok(MotionFeatures {
            layout,
            data,
            initial_root_position,
            fps,
        })
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    /// Contact labels snapped to {0, 1}.  Blending produces fractional
    /// values; 0.5 is the decision boundary on export.
    pub fn binary_contacts(&self) -> Array2<f64> {
        let range = self.layout.contact_columns();
        let mut out = Array2::zeros((self.frames(), self.layout.contact_count));
        for (i, row) in self.data.rows().into_iter().enumerate() {
            for (k, c) in range.clone().enumerate() {
                out[(i, k)] = if row[c] >= 0.5 { 1.0 } else { 0.0 };
            }
        }
        out
    }
}

/// Pose track in world terms: absolute root positions plus per-joint
/// local rotations, `frames x joints`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldMotion {
    pub root_positions: Vec<Vec3>,
    pub rotations: Vec<Vec<Quat>>,
}

impl WorldMotion {
    pub fn frames(&self) -> usize {
        self.root_positions.len()
    }

    pub(crate) fn validate(&self, s: &Skeleton) -> Result<()> {
        if self.root_positions.is_empty() {
            return Err(Error::InvalidInput("motion has no frames".into()));
        }
        if self.rotations.len() != self.root_positions.len() {
            return Err(Error::InvalidInput(format!(
                "{} rotation frames vs {} root positions",
                self.rotations.len(),
                self.root_positions.len()
            )));
        }
        for (i, frame) in self.rotations.iter().enumerate() {
            if frame.len() != s.joint_count() {
                return Err(Error::LayoutMismatch(format!(
                    "frame {i} has {} joint rotations, skeleton has {} joints",
                    frame.len(),
                    s.joint_count()
                )));
            }
        }
        Ok(())
    }
}

/// Default contact velocity threshold in world units per frame: 20%
/// of the leg length per second, converted to a per-frame distance.
pub fn default_contact_threshold(s: &Skeleton, fps: f64) -> f64 {
    0.2 * s.leg_length() / fps
}

/// World positions of every joint at every frame.  The root sits at
/// its channel position (its rest offset is ignored); each child adds
/// its parent-rotated offset.
pub fn forward_kinematics(s: &Skeleton, w: &WorldMotion) -> Result<Vec<Vec<Vec3>>> {
    w.validate(s)?;
    let mut out = Vec::with_capacity(w.frames());
    for i in 0..w.frames() {
        let mut pos = vec![[0.0; 3]; s.joint_count()];
        let mut world_rot = vec![Quat::IDENTITY; s.joint_count()];
        pos[0] = w.root_positions[i];
        world_rot[0] = w.rotations[i][0];
        for (k, j) in s.joints().iter().enumerate().skip(1) {
            let p = j.parent.expect("non-root joints have parents");
            pos[k] = math::add(pos[p], world_rot[p].rotate(j.offset));
            world_rot[k] = world_rot[p] * w.rotations[i][k];
        }
        out.push(pos);
    }
    Ok(out)
}

/// Converts a pose track into the blendable feature matrix.
///
/// Contact labels compare each foot's world speed against
/// `contact_threshold` (world units per frame); frame 0 reuses the
/// forward difference to frame 1.  A single-frame clip is treated as
/// stationary.
pub fn to_features(
    w: &WorldMotion,
    s: &Skeleton,
    contact_threshold: f64,
    fps: f64,
) -> Result<MotionFeatures> {
    w.validate(s)?;
    let layout = FeatureLayout::for_skeleton(s);
    let frames = w.frames();
    let mut data = Array2::zeros((frames, layout.columns()));

    for i in 0..frames {
        for (k, q) in w.rotations[i].iter().enumerate() {
            let r = Rotation6D::from_quat(*q).map_err(|e| {
                Error::InvalidInput(format!("frame {i}, joint {k}: {e}"))
            })?;
            for (c, v) in layout.joint_columns(k).zip(r.0) {
                data[(i, c)] = v;
            }
        }
        if i > 0 {
            let v = math::sub(w.root_positions[i], w.root_positions[i - 1]);
            for (c, vv) in layout.root_velocity_columns().zip(v) {
                data[(i, c)] = vv;
            }
        }
    }

    if layout.contact_count > 0 {
        let world = forward_kinematics(s, w)?;
        for (k, &foot) in s.foot_joints().iter().enumerate() {
            let col = layout.contact_columns().start + k;
            for i in 0..frames {
                let speed = if frames == 1 {
                    0.0
                } else if i == 0 {
                    math::norm(math::sub(world[1][foot], world[0][foot]))
                } else {
                    math::norm(math::sub(world[i][foot], world[i - 1][foot]))
                };
                data[(i, col)] = if speed < contact_threshold { 1.0 } else { 0.0 };
            }
        }
    }

    MotionFeatures::new(layout, data, w.root_positions[0], fps)
}

/// Inverse of `to_features`: integrates displacements from the stored
/// start position and decodes every rotation.  Decoding errors report
/// the offending frame and joint.
pub fn from_features(m: &MotionFeatures, s: &Skeleton) -> Result<WorldMotion> {
    if m.layout.joint_count != s.joint_count() {
        return Err(Error::LayoutMismatch(format!(
            "features carry {} joints, skeleton has {}",
            m.layout.joint_count,
            s.joint_count()
        )));
    }
    let frames = m.frames();
    let mut root_positions = Vec::with_capacity(frames);
    let mut rotations = Vec::with_capacity(frames);
    let mut pos = m.initial_root_position;
    let v_cols = m.layout.root_velocity_columns();

    for i in 0..frames {
        let row = m.data.row(i);
        let v = [row[v_cols.start], row[v_cols.start + 1], row[v_cols.start + 2]];
        pos = math::add(pos, v);
        root_positions.push(pos);

        let mut frame = Vec::with_capacity(s.joint_count());
        for k in 0..s.joint_count() {
            let cols = m.layout.joint_columns(k);
            let mut six = [0.0; ROTATION_DIM];
            for (slot, c) in six.iter_mut().zip(cols) {
                *slot = row[c];
            }
            let q = Rotation6D(six).to_quat().map_err(|e| {
                Error::DegenerateRotation(format!("frame {i}, joint {k}: {e}"))
            })?;
            frame.push(q);
        }
        rotations.push(frame);
    }
    Ok(WorldMotion {
        root_positions,
        rotations,
    })
}
