//! Body parts and patch extraction.
//!
//! Synthesis can run the whole body as one unit or split the skeleton
//! into named parts that are matched independently and averaged back
//! together.  A part owns a set of joints (a connected subtree), the
//! root displacement columns when it contains the root, and the
//! contact columns of the feet inside it.  Adjacent parts must share
//! joints: every parent-child bone has to live inside at least one
//! part, so the averaging step can bridge the seams.
//!
//! A `PatchSet` is the unit the matcher consumes: every length-`p`
//! window of a part's columns, taken at stride 1 from one or more
//! source clips.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::motion::{FeatureLayout, MotionFeatures};
use crate::skeleton::Skeleton;

/// One part of a partition: joints plus the feature columns they own.
#[derive(Debug, Clone, PartialEq)]
pub struct PartDescriptor {
    pub name: String,
    /// Position of this part within the partition.
    pub index: usize,
    /// Member joints, ascending skeleton indices.
    pub joints: Vec<usize>,
    /// True when the part contains the root joint; such parts carry
    /// the root displacement columns (duplicated across parts on
    /// purpose, the assembler averages them).
    pub includes_root_channels: bool,
    /// Skeleton indices of the contact-labeled joints inside the part.
    pub contact_joints: Vec<usize>,
    /// Global feature columns in part-local order: per-joint rotation
    /// blocks, then root displacement, then contacts.
    pub columns: Vec<usize>,
}

impl PartDescriptor {
    fn build(
        name: String,
        index: usize,
        mut joints: Vec<usize>,
        s: &Skeleton,
        layout: &FeatureLayout,
    ) -> PartDescriptor {
        joints.sort_unstable();
        let includes_root_channels = joints.contains(&0);
        let contact_joints: Vec<usize> = s
            .foot_joints()
            .iter()
            .copied()
            .filter(|f| joints.binary_search(f).is_ok())
            .collect();

        let mut columns = Vec::new();
        for &j in &joints {
            columns.extend(layout.joint_columns(j));
        }
        if includes_root_channels {
            columns.extend(layout.root_velocity_columns());
        }
        let contact_start = layout.contact_columns().start;
        for &f in &contact_joints {
            let rank = s
                .foot_joints()
                .iter()
                .position(|&x| x == f)
                .expect("contact joint is a foot joint");
            columns.push(contact_start + rank);
        }

        PartDescriptor {
            name,
            index,
            joints,
            includes_root_channels,
            contact_joints,
            columns,
        }
    }
}

/// Validated set of parts covering a skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonPartition {
    parts: Vec<PartDescriptor>,
}

/// JSON shape accepted by `load_partition`.  A `BTreeMap` keeps part
/// order alphabetical, so the same file always yields the same
/// partition regardless of key order in the JSON.
#[derive(Debug, Deserialize)]
struct PartitionSpec {
    parts: BTreeMap<String, Vec<String>>,
}

impl SkeletonPartition {
    /// The trivial partition: one part holding every joint.
    pub fn whole_body(s: &Skeleton) -> SkeletonPartition {
        let layout = FeatureLayout::for_skeleton(s);
        let part = PartDescriptor::build(
            "body".into(),
            0,
            (0..s.joint_count()).collect(),
            s,
            &layout,
        );
        SkeletonPartition { parts: vec![part] }
    }

    pub fn parts(&self) -> &[PartDescriptor] {
        &self.parts
    }

    pub fn part_by_name(&self, name: &str) -> Option<&PartDescriptor> {
        self.parts.iter().find(|p| p.name == name)
    }
}

/// Parses and validates a partition file:
/// `{"parts": {"upper": ["Hips", "Spine", ...], ...}}`.
///
/// Rules enforced here, each with its own error: every name resolves,
/// no joint repeats within a part, every part is a connected subtree,
/// every joint is covered, and every parent-child bone is contained in
/// at least one part so adjacent parts overlap.
pub fn load_partition(text: &str, s: &Skeleton) -> Result<SkeletonPartition> {
    let spec: PartitionSpec = serde_json::from_str(text)
        .map_err(|e| Error::InvalidPartition(format!("malformed partition JSON: {e}")))?;
    if spec.parts.is_empty() {
        return Err(Error::InvalidPartition("partition declares no parts".into()));
    }

    let layout = FeatureLayout::for_skeleton(s);
    let mut parts = Vec::new();
    for (index, (name, joint_names)) in spec.parts.into_iter().enumerate() {
        let mut joints = Vec::with_capacity(joint_names.len());
        for jn in &joint_names {
            let j = s
                .joint_index(jn)
                .ok_or_else(|| Error::UnknownJoint(format!("'{jn}' in part '{name}'")))?;
            if joints.contains(&j) {
                return Err(Error::InvalidPartition(format!(
                    "joint '{jn}' listed twice in part '{name}'"
                )));
            }
            joints.push(j);
        }
        if joints.is_empty() {
            return Err(Error::InvalidPartition(format!("part '{name}' is empty")));
        }
        parts.push(PartDescriptor::build(name, index, joints, s, &layout));
    }

    for p in &parts {
        let local_roots = p
            .joints
            .iter()
            .filter(|&&j| match s.joints()[j].parent {
                None => true,
                Some(parent) => p.joints.binary_search(&parent).is_err(),
            })
            .count();
        if local_roots != 1 {
            return Err(Error::InvalidPartition(format!(
                "part '{}' is not a connected subtree ({local_roots} local roots)",
                p.name
            )));
        }
    }

    let mut covered = vec![false; s.joint_count()];
    for p in &parts {
        for &j in &p.joints {
            covered[j] = true;
        }
    }
    if let Some(j) = covered.iter().position(|c| !c) {
        return Err(Error::InvalidPartition(format!(
            "joint '{}' is not covered by any part",
            s.joints()[j].name
        )));
    }

    for (k, j) in s.joints().iter().enumerate() {
        let Some(parent) = j.parent else { continue };
        let bridged = parts.iter().any(|p| {
            p.joints.binary_search(&k).is_ok() && p.joints.binary_search(&parent).is_ok()
        });
        if !bridged {
            return Err(Error::InvalidPartition(format!(
                "no part contains both '{}' and its child '{}'; adjacent parts must share overlapping joints",
                s.joints()[parent].name, j.name
            )));
        }
    }

    Ok(SkeletonPartition { parts })
}

/// Where a patch window came from: which source clip and which frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchOrigin {
    pub source: usize,
    pub start: usize,
}

/// Every stride-1 window of one part's columns across one or more
/// source clips.  Window `w` of `windows` holds frames
/// `origins[w].start ..+ window` of its source, frame-major.
#[derive(Debug, Clone)]
pub struct PatchSet {
    /// Partition part index these patches were cut from.
    pub part: usize,
    /// Frames per patch.
    pub window: usize,
    /// Columns per frame.
    pub part_columns: usize,
    /// `len() x (window * part_columns)`.
    pub windows: Array2<f64>,
    /// Source and start frame per window, in (source, start) order.
    pub origins: Vec<PatchOrigin>,
    pub(crate) sources: Vec<Array2<f64>>,
}

impl PatchSet {
    /// Windows of `part`'s columns from a single clip.
    pub fn extract(m: &MotionFeatures, part: &PartDescriptor, window: usize) -> Result<PatchSet> {
        PatchSet::from_part_matrices(part.index, vec![part_matrix(&m.data, &part.columns)], window)
    }

    /// Windows from several clips, concatenated in clip order.
    pub fn extract_multi(
        ms: &[MotionFeatures],
        part: &PartDescriptor,
        window: usize,
    ) -> Result<PatchSet> {
        let mats = ms
            .iter()
            .map(|m| part_matrix(&m.data, &part.columns))
            .collect();
        PatchSet::from_part_matrices(part.index, mats, window)
    }

    /// Core constructor over already-selected part matrices.
    pub fn from_part_matrices(
        part: usize,
        mats: Vec<Array2<f64>>,
        window: usize,
    ) -> Result<PatchSet> {
        if window < 2 {
            return Err(Error::InvalidParameter(format!(
                "patch window {window} must be at least 2"
            )));
        }
        if mats.is_empty() {
            return Err(Error::EmptyKeySet("no source clips".into()));
        }
        let part_columns = mats[0].ncols();
        let mut count = 0usize;
        for m in &mats {
            if m.ncols() != part_columns {
                return Err(Error::LayoutMismatch(format!(
                    "source clips disagree on part width: {} vs {part_columns}",
                    m.ncols()
                )));
            }
            if m.nrows() < window {
                return Err(Error::ExemplarTooShort {
                    frames: m.nrows(),
                    required: window,
                });
            }
            count += m.nrows() - window + 1;
        }

        let mut windows = Array2::zeros((count, window * part_columns));
        let mut origins = Vec::with_capacity(count);
        let mut w = 0;
        for (source, m) in mats.iter().enumerate() {
            for start in 0..=(m.nrows() - window) {
                for t in 0..window {
                    for c in 0..part_columns {
                        windows[(w, t * part_columns + c)] = m[(start + t, c)];
                    }
                }
                origins.push(PatchOrigin { source, start });
                w += 1;
            }
        }

        Ok(PatchSet {
            part,
            window,
            part_columns,
            windows,
            origins,
            sources: mats,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn source_count(&self) -> usize {
        self.sources.len()
    }
}

/// Copies the given columns into a dense `frames x cols` matrix.
pub fn part_matrix(data: &Array2<f64>, cols: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((data.nrows(), cols.len()));
    for i in 0..data.nrows() {
        for (k, &c) in cols.iter().enumerate() {
            out[(i, k)] = data[(i, c)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{detect_foot_joints, Joint};

    fn rig() -> Skeleton {
        let joint = |name: &str, parent: Option<usize>| Joint {
            name: name.into(),
            parent,
            offset: [0.0, 0.1, 0.0],
            end_site: None,
        };
        let joints = vec![
            joint("Hips", None),
            joint("Spine", Some(0)),
            joint("Head", Some(1)),
            joint("LeftUpLeg", Some(0)),
            joint("LeftFoot", Some(3)),
            joint("RightUpLeg", Some(0)),
            joint("RightFoot", Some(5)),
        ];
        let feet = detect_foot_joints(&joints);
        Skeleton::new(joints, feet).unwrap()
    }

    const TWO_PARTS: &str = r#"{
        "parts": {
            "upper": ["Hips", "Spine", "Head"],
            "lower": ["Hips", "LeftUpLeg", "LeftFoot", "RightUpLeg", "RightFoot"]
        }
    }"#;

    #[test]
    fn whole_body_owns_every_column() {
        let s = rig();
        let p = SkeletonPartition::whole_body(&s);
        assert_eq!(p.parts().len(), 1);
        let body = &p.parts()[0];
        let layout = FeatureLayout::for_skeleton(&s);
        assert!(body.includes_root_channels);
        assert_eq!(body.contact_joints, vec![4, 6]);
        let all: Vec<usize> = (0..layout.columns()).collect();
        assert_eq!(body.columns, all);
    }

    #[test]
    fn two_part_split_shares_root() {
        let s = rig();
        let p = load_partition(TWO_PARTS, &s).unwrap();
        assert_eq!(p.parts().len(), 2);
        // BTreeMap ordering: "lower" before "upper".
        let lower = &p.parts()[0];
        let upper = &p.parts()[1];
        assert_eq!(lower.name, "lower");
        assert!(lower.includes_root_channels && upper.includes_root_channels);
        assert_eq!(lower.contact_joints, vec![4, 6]);
        assert!(upper.contact_joints.is_empty());
        let layout = FeatureLayout::for_skeleton(&s);
        let v = layout.root_velocity_columns();
        assert!(lower.columns.contains(&v.start) && upper.columns.contains(&v.start));
        // Rotation columns of Head live only in upper.
        let head = layout.joint_columns(2);
        assert!(upper.columns.contains(&head.start));
        assert!(!lower.columns.contains(&head.start));
    }

    #[test]
    fn unknown_joint_is_reported() {
        let s = rig();
        let bad = TWO_PARTS.replace("\"Head\"", "\"Skull\"");
        assert!(matches!(
            load_partition(&bad, &s),
            Err(Error::UnknownJoint(_))
        ));
    }

    #[test]
    fn uncovered_joint_is_reported() {
        let s = rig();
        let bad = TWO_PARTS.replace(", \"Head\"", "");
        match load_partition(&bad, &s) {
            Err(Error::InvalidPartition(msg)) => assert!(msg.contains("Head"), "{msg}"),
            other => panic!("expected partition error, got {other:?}"),
        }
    }

    #[test]
    fn disconnected_part_is_reported() {
        let s = rig();
        let bad = r#"{"parts": {
            "a": ["Hips", "Spine", "Head", "LeftUpLeg", "RightUpLeg"],
            "b": ["LeftFoot", "RightFoot"]
        }}"#;
        match load_partition(bad, &s) {
            Err(Error::InvalidPartition(msg)) => {
                assert!(msg.contains("'b'") && msg.contains("subtree"), "{msg}")
            }
            other => panic!("expected partition error, got {other:?}"),
        }
    }

    #[test]
    fn missing_overlap_is_reported() {
        let s = rig();
        let bad = r#"{"parts": {
            "upper": ["Spine", "Head"],
            "lower": ["Hips", "LeftUpLeg", "LeftFoot", "RightUpLeg", "RightFoot"]
        }}"#;
        match load_partition(bad, &s) {
            Err(Error::InvalidPartition(msg)) => {
                assert!(msg.contains("overlap"), "{msg}")
            }
            other => panic!("expected partition error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_joint_in_part_is_reported() {
        let s = rig();
        let bad = TWO_PARTS.replace("\"Spine\"", "\"Spine\", \"Spine\"");
        assert!(matches!(
            load_partition(&bad, &s),
            Err(Error::InvalidPartition(_))
        ));
    }

    fn toy_features(s: &Skeleton, frames: usize) -> MotionFeatures {
        let layout = FeatureLayout::for_skeleton(s);
        let mut data = Array2::zeros((frames, layout.columns()));
        for i in 0..frames {
            for c in 0..layout.columns() {
                data[(i, c)] = (i * 1000 + c) as f64;
            }
        }
        MotionFeatures::new(layout, data, [0.0; 3], 30.0).unwrap()
    }

    #[test]
    fn extraction_walks_stride_one() {
        let s = rig();
        let m = toy_features(&s, 6);
        let p = SkeletonPartition::whole_body(&s);
        let set = PatchSet::extract(&m, &p.parts()[0], 4).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.window, 4);
        assert_eq!(set.part_columns, m.layout.columns());
        assert_eq!(set.origins[2], PatchOrigin { source: 0, start: 2 });
        // Window 1, frame offset 2, column 5 is input frame 3, column 5.
        let pc = set.part_columns;
        assert_eq!(set.windows[(1, 2 * pc + 5)], m.data[(3, 5)]);
    }

    #[test]
    fn multi_source_concatenates_in_order() {
        let s = rig();
        let a = toy_features(&s, 5);
        let b = toy_features(&s, 4);
        let p = SkeletonPartition::whole_body(&s);
        let set = PatchSet::extract_multi(&[a, b], &p.parts()[0], 3).unwrap();
        assert_eq!(set.len(), 3 + 2);
        assert_eq!(set.origins[3], PatchOrigin { source: 1, start: 0 });
        assert_eq!(set.source_count(), 2);
    }

    #[test]
    fn short_clip_is_rejected() {
        let s = rig();
        let m = toy_features(&s, 3);
        let p = SkeletonPartition::whole_body(&s);
        assert!(matches!(
            PatchSet::extract(&m, &p.parts()[0], 4),
            Err(Error::ExemplarTooShort {
                frames: 3,
                required: 4
            })
        ));
    }
}
