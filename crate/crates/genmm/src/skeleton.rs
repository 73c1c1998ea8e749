//! Skeleton topology: a tree of named joints with rest offsets.
//!
//! Joints are stored in topological order (every joint's parent comes
//! before it), which lets forward kinematics run as a single forward
//! pass over the array.

use crate::error::{Error, Result};
use crate::math::{self, Vec3};

/// One joint in the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// `None` only for the root, which must sit at index 0.
    pub parent: Option<usize>,
    /// Rest offset from the parent joint, in world units.
    pub offset: Vec3,
    /// Terminal offset for leaf joints that carry one (BVH End Site).
    pub end_site: Option<Vec3>,
}

/// Validated joint tree plus the set of joints that generate contact
/// labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    foot_joints: Vec<usize>,
}

impl Skeleton {
    /// Validates topology: index 0 is the unique root, parents precede
    /// children, names are unique (name lookups drive partition and
    /// retargeting code), and foot indices are in range.
    pub fn new(joints: Vec<Joint>, foot_joints: Vec<usize>) -> Result<Skeleton> {
        if joints.is_empty() {
            return Err(Error::InvalidInput("skeleton has no joints".into()));
        }
        if joints[0].parent.is_some() {
            return Err(Error::InvalidInput(
                "joint 0 must be the root (no parent)".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for (k, j) in joints.iter().enumerate() {
            match j.parent {
                None if k != 0 => {
                    return Err(Error::InvalidInput(format!(
                        "joint '{}' has no parent but is not joint 0",
                        j.name
                    )));
                }
                Some(p) if p >= k => {
                    return Err(Error::InvalidInput(format!(
                        "joint '{}' (index {k}) references parent {p}; parents must precede children",
                        j.name
                    )));
                }
                _ => {}
            }
            if !seen.insert(j.name.clone()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate joint name '{}'",
                    j.name
                )));
            }
        }
        let mut foot_joints = foot_joints;
        foot_joints.sort_unstable();
        foot_joints.dedup();
        if let Some(&bad) = foot_joints.iter().find(|&&f| f >= joints.len()) {
            return Err(Error::InvalidInput(format!(
                "foot joint index {bad} out of range ({} joints)",
                joints.len()
            )));
        }
        Ok(Skeleton {
            joints,
            foot_joints,
        })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    /// Ascending indices of contact-labeled joints.
    pub fn foot_joints(&self) -> &[usize] {
        &self.foot_joints
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn children_of(&self, index: usize) -> Vec<usize> {
        (0..self.joints.len())
            .filter(|&k| self.joints[k].parent == Some(index))
            .collect()
    }

    /// World positions of the rest pose: identity rotations, root at
    /// the origin, each joint at its parent's position plus offset.
    pub fn rest_world_positions(&self) -> Vec<Vec3> {
        let mut pos = vec![[0.0; 3]; self.joints.len()];
        for (k, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                pos[k] = math::add(pos[p], j.offset);
            }
        }
        pos
    }

    /// Longest chain of offset lengths from the root to any foot
    /// joint.  Used to scale the contact velocity threshold with the
    /// character's size.  Falls back to the longest root-to-leaf chain
    /// when no foot joints exist, and to 1.0 for a degenerate rig.
    pub fn leg_length(&self) -> f64 {
        let chain = |mut k: usize| {
            let mut len = 0.0;
            while let Some(p) = self.joints[k].parent {
                len += math::norm(self.joints[k].offset);
                k = p;
            }
            len
        };
        let candidates: Vec<usize> = if self.foot_joints.is_empty() {
            let has_child: Vec<bool> = (0..self.joints.len())
                .map(|k| self.joints.iter().any(|j| j.parent == Some(k)))
                .collect();
            (0..self.joints.len()).filter(|&k| !has_child[k]).collect()
        } else {
            self.foot_joints.clone()
        };
        let best = candidates.into_iter().map(chain).fold(0.0, f64::max);
        if best > 0.0 {
            best
        } else {
            1.0
        }
    }
}

/// Case-insensitive name heuristic for contact joints: anything whose
/// name contains "foot" or "toe".
pub fn detect_foot_joints(joints: &[Joint]) -> Vec<usize> {
    joints
        .iter()
        .enumerate()
        .filter(|(_, j)| {
            let lower = j.name.to_lowercase();
            lower.contains("foot") || lower.contains("toe")
        })
        .map(|(k, _)| k)
        .collect()
}
