//! Run manifests.
//!
//! A manifest records everything a synthesis run resolved from its
//! flags and files: input hashes, the full numeric configuration, the
//! embedded contents of any partition / weights / keyframe / map
//! files, the schedule the run produced, and where the output went.
//! Replaying a manifest re-executes the run from this record alone
//! (plus the input BVH files, which are hash-verified) and reproduces
//! the output byte for byte.

use std::collections::BTreeMap;

use genmm::matching::ChannelWeights;
use genmm::pyramid::PyramidSchedule;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HashedFile {
    pub path: String,
    pub sha256: String,
}

fn one() -> f64 {
    1.0
}

/// Channel weighting as it appears in a weights file or manifest;
/// omitted fields mean unweighted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsSpec {
    #[serde(default = "one")]
    pub rotation: f64,
    #[serde(default = "one")]
    pub root_velocity: f64,
    #[serde(default = "one")]
    pub contact: f64,
}

impl Default for WeightsSpec {
    fn default() -> WeightsSpec {
        WeightsSpec {
            rotation: 1.0,
            root_velocity: 1.0,
            contact: 1.0,
        }
    }
}

impl WeightsSpec {
    pub fn to_weights(&self) -> ChannelWeights {
        ChannelWeights {
            rotation: self.rotation,
            root_velocity: self.root_velocity,
            contact: self.contact,
        }
    }
}

/// One keyframe entry: coarse-stage index (the JSON key) maps to a
/// frame of one input clip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyframeSpec {
    pub input: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleEcho {
    pub stages: usize,
    pub exemplar_lengths: Vec<usize>,
    pub synthesis_lengths: Vec<usize>,
}

impl ScheduleEcho {
    pub fn from_schedule(s: &PyramidSchedule) -> ScheduleEcho {
        ScheduleEcho {
            stages: s.stages,
            exemplar_lengths: s.exemplar_lengths.clone(),
            synthesis_lengths: s.synthesis_lengths.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// Which mode ran: synth, complete, keyframe, loop, or reassemble.
    pub command: String,
    pub inputs: Vec<HashedFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub given: Option<HashedFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub given_part: Option<String>,
    /// Output length after resolving any `Nx` multiplier.
    pub length_frames: usize,
    pub patch_size: usize,
    pub k: usize,
    pub alpha: f64,
    pub ratio: f64,
    pub iters: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub scale: f64,
    pub threads: usize,
    pub weights: WeightsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframes: Option<BTreeMap<String, KeyframeSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<BTreeMap<String, usize>>,
    pub output: String,
    pub schedule: ScheduleEcho,
    pub stage_millis: Vec<f64>,
}
