//! Example-based motion synthesis.
//!
//! Given one or more BVH clips, the library grows new motion of any
//! length that is made of the exemplars' own movement patterns in new
//! arrangements.  There is no training step: synthesis starts from
//! noise at a coarse timescale and repeatedly replaces every temporal
//! window of the guess with the most similar exemplar window, blends
//! the overlaps, and upsamples, until the guess reaches full
//! resolution.  A completeness-weighted distance normalization keeps
//! rarely-used exemplar windows competitive, which is what pushes the
//! output to cover the input's variety instead of looping its most
//! common pose.
//!
//! The crate is organized bottom-up:
//!
//! - [`math`], [`rotation`]: quaternions and the 6-value rotation
//!   encoding used in feature space.
//! - [`skeleton`], [`motion`]: rig description, forward kinematics,
//!   and the frames x channels feature representation.
//! - [`bvh`]: parsing and canonical serialization.
//! - [`pyramid`]: temporal schedules and resampling.
//! - [`patching`]: body partitions and window extraction.
//! - [`matching`]: the nearest-neighbor kernel, blending, assembly.
//! - [`synthesis`]: the coarse-to-fine driver and its constraint
//!   modes (completion, keyframes, looping, part reassembly).
//! - [`metrics`]: coverage, patch distance, set diversity.
//! - [`fixture`]: deterministic procedural clips for tests and demos.

// `!(x > 0.0)` guards are deliberate: they reject NaN along with the
// out-of-range values, which the suggested rewrite would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bvh;
pub mod error;
pub mod fixture;
pub mod math;
pub mod matching;
pub mod metrics;
pub mod motion;
pub mod patching;
pub mod pyramid;
pub mod rotation;
pub mod skeleton;
pub mod synthesis;

pub use error::{Error, Result};
pub use motion::{FeatureLayout, MotionFeatures, WorldMotion};
pub use skeleton::Skeleton;
pub use synthesis::{Constraint, SynthesisConfig, SynthesisOutput};
