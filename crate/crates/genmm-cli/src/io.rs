//! File plumbing: BVH in and out, unit scaling, content hashing.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use genmm::bvh::{parse_bvh, serialize_bvh, to_world_motion};
use genmm::motion::{default_contact_threshold, to_features};
use genmm::skeleton::Joint;
use genmm::{MotionFeatures, Skeleton, WorldMotion};

use crate::CliError;

/// One imported BVH, already converted to feature space.
pub struct LoadedClip {
    pub path: PathBuf,
    pub sha256: String,
    pub skeleton: Skeleton,
    pub world: WorldMotion,
    /// Feature matrix; also carries the frame rate and start position.
    pub features: MotionFeatures,
    pub warnings: Vec<String>,
}

impl LoadedClip {
    pub fn frames(&self) -> usize {
        self.features.frames()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Multiplies every rest offset by `factor`.  Topology is untouched,
/// so revalidation cannot fail.
pub fn scale_skeleton(s: &Skeleton, factor: f64) -> Skeleton {
    let joints: Vec<Joint> = s
        .joints()
        .iter()
        .map(|j| Joint {
            name: j.name.clone(),
            parent: j.parent,
            offset: [j.offset[0] * factor, j.offset[1] * factor, j.offset[2] * factor],
            end_site: j
                .end_site
                .map(|e| [e[0] * factor, e[1] * factor, e[2] * factor]),
        })
        .collect();
    Skeleton::new(joints, s.foot_joints().to_vec()).expect("scaling preserves topology")
}

pub fn scale_world(w: &WorldMotion, factor: f64) -> WorldMotion {
    WorldMotion {
        root_positions: w
            .root_positions
            .iter()
            .map(|p| [p[0] * factor, p[1] * factor, p[2] * factor])
            .collect(),
        rotations: w.rotations.clone(),
    }
}

/// Reads and imports a BVH; `scale` converts its units on the way in
/// (synthesis runs in scaled space, `write_clip` converts back).
pub fn load_clip(path: &Path, scale: f64) -> Result<LoadedClip, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let sha256 = sha256_hex(&bytes);
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::data(format!("{}: not valid UTF-8", path.display())))?;
    let doc = parse_bvh(&text)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let import = to_world_motion(&doc)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;

    let (skeleton, world) = if scale == 1.0 {
        (import.skeleton, import.motion)
    } else {
        (
            scale_skeleton(&import.skeleton, scale),
            scale_world(&import.motion, scale),
        )
    };
    let threshold = default_contact_threshold(&skeleton, import.fps);
    let features = to_features(&world, &skeleton, threshold, import.fps)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;

    Ok(LoadedClip {
        path: path.to_path_buf(),
        sha256,
        skeleton,
        world,
        features,
        warnings: import.warnings,
    })
}

/// Serializes a clip back to disk, undoing the load-time unit scale.
pub fn write_clip(
    path: &Path,
    skeleton: &Skeleton,
    world: &WorldMotion,
    fps: f64,
    scale: f64,
) -> Result<(), CliError> {
    let text = if scale == 1.0 {
        serialize_bvh(skeleton, world, fps)
    } else {
        let inv = 1.0 / scale;
        serialize_bvh(&scale_skeleton(skeleton, inv), &scale_world(world, inv), fps)
    }
    .map_err(CliError::from)?;
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
