//! Coarse-to-fine synthesis.
//!
//! A run starts from per-column Gaussian noise at the coarsest stage,
//! refines it against downsampled exemplars, upsamples, and repeats
//! until the final stage runs at full resolution.  Constraints
//! (partial-body completion, pinned keyframes, looping) are enforced
//! by projection: constrained values are overwritten before every
//! matching pass and again after each stage's final blend, so matching
//! always sees them in place and the output satisfies them exactly.
//!
//! Per-part exemplar sources are expressed as a plan (which source
//! clip feeds which part, through which columns), which makes plain
//! multi-exemplar synthesis and cross-clip part reassembly the same
//! pipeline; identical plans produce bit-identical outputs.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matching::{refine, ChannelWeights, MatchingParams};
use crate::motion::{FeatureLayout, MotionFeatures};
use crate::patching::{part_matrix, PatchSet, SkeletonPartition};
use crate::pyramid::{build_pyramid, build_schedule, resample_matrix, PyramidSchedule};
use crate::skeleton::Skeleton;

/// All knobs for one synthesis run.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    /// Patch window length in frames.
    pub patch_size: usize,
    /// Coarsest-stage exemplar length as a multiple of `patch_size`.
    pub coarse_multiple: usize,
    /// Completeness strength of the match normalization.
    pub alpha: f64,
    /// Match-and-blend passes per stage.
    pub iterations: usize,
    /// Per-stage growth factor of the pyramid.
    pub ratio: f64,
    /// Output length in frames at full resolution.
    pub output_frames: usize,
    /// Seed for the initial noise; everything else is deterministic.
    pub seed: u64,
    /// Scale on the per-column noise deviation.
    pub noise_sigma: f64,
    pub weights: ChannelWeights,
}

impl SynthesisConfig {
    /// Defaults tuned for ~30 fps clips; only the output length is
    /// mandatory.
    pub fn for_output(output_frames: usize) -> SynthesisConfig {
        SynthesisConfig {
            patch_size: 11,
            coarse_multiple: 4,
            alpha: 0.01,
            iterations: 5,
            ratio: 4.0 / 3.0,
            output_frames,
            seed: 0,
            noise_sigma: 1.0,
            weights: ChannelWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.matching_params().validate()?;
        if self.coarse_multiple < 1 {
            return Err(Error::InvalidParameter(
                "coarse multiple must be at least 1".into(),
            ));
        }
        if !(self.ratio > 1.0) || !self.ratio.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "pyramid ratio {} must be greater than 1",
                self.ratio
            )));
        }
        if self.output_frames < self.patch_size {
            return Err(Error::InvalidParameter(format!(
                "output length {} is shorter than one patch ({})",
                self.output_frames, self.patch_size
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "noise sigma {} must be finite and non-negative",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    pub fn matching_params(&self) -> MatchingParams {
        MatchingParams {
            window: self.patch_size,
            alpha: self.alpha,
            iterations: self.iterations,
            weights: self.weights,
        }
    }
}

/// Frames of one part, fixed throughout synthesis.  `channels` has one
/// column per part column (the part's own ordering) and any number of
/// rows; it is resampled to each stage's length.
#[derive(Debug, Clone)]
pub struct CompletionConstraint {
    pub part: String,
    pub channels: Array2<f64>,
}

/// A full-resolution feature row pinned at a coarse-stage frame index
/// and carried through every stage.
#[derive(Debug, Clone)]
pub struct Keyframe {
    /// Frame index at the coarsest stage.
    pub coarse_index: usize,
    /// Full feature row (`layout.columns()` values).
    pub row: Vec<f64>,
}

/// Composable constraints; all default to "none".
#[derive(Debug, Clone, Default)]
pub struct Constraint {
    pub completion: Option<CompletionConstraint>,
    pub keyframes: Vec<Keyframe>,
    /// Forces the last frame's pose (rotations and contacts, not the
    /// root displacement) to equal the first frame's at every stage.
    pub looped: bool,
}

impl Constraint {
    pub fn is_empty(&self) -> bool {
        self.completion.is_none() && self.keyframes.is_empty() && !self.looped
    }
}

/// Synthesized clip plus how the run was scheduled and timed.
#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    pub features: MotionFeatures,
    pub schedule: PyramidSchedule,
    /// Wall-clock milliseconds per stage.
    pub stage_millis: Vec<f64>,
}

/// Output row a coarse-stage frame index lands on at a finer stage.
pub fn keyframe_row(coarse_index: usize, coarse_frames: usize, stage_frames: usize) -> usize {
    if coarse_frames <= 1 {
        return 0;
    }
    (coarse_index as f64 * (stage_frames - 1) as f64 / (coarse_frames - 1) as f64).round() as usize
}

/// One exemplar clip for reassembly, with the skeleton it lives on.
#[derive(Debug, Clone)]
pub struct ReassemblySource {
    pub skeleton: Skeleton,
    pub features: MotionFeatures,
}

/// Which source clips feed one part, and through which source columns.
#[derive(Debug, Clone)]
struct PartPlan {
    sources: Vec<(usize, Vec<usize>)>,
}

/// Free-running or constrained synthesis from exemplars that all share
/// the target layout.  Every part draws keys from every exemplar.
pub fn synthesize(
    exemplars: &[MotionFeatures],
    partition: &SkeletonPartition,
    config: &SynthesisConfig,
    constraint: &Constraint,
) -> Result<SynthesisOutput> {
    if exemplars.is_empty() {
        return Err(Error::EmptyKeySet("no exemplars".into()));
    }
    let layout = exemplars[0].layout;
    for e in &exemplars[1..] {
        if e.layout != layout {
            return Err(Error::LayoutMismatch(
                "exemplars disagree on feature layout".into(),
            ));
        }
    }
    let plans: Vec<PartPlan> = partition
        .parts()
        .iter()
        .map(|part| PartPlan {
            sources: (0..exemplars.len())
                .map(|e| (e, part.columns.clone()))
                .collect(),
        })
        .collect();
    let sources: Vec<&MotionFeatures> = exemplars.iter().collect();
    synthesize_with_plan(&sources, layout, partition, &plans, config, constraint)
}

/// Reassembly: every part of the target skeleton takes its exemplar
/// windows from one assigned source clip, resolved joint-by-joint by
/// name.  Overlapping joints between parts stitch the sources
/// together at assembly time.  An assignment mapping every part to the
/// same single source reproduces plain synthesis exactly.
pub fn synthesize_reassembly(
    sources: &[ReassemblySource],
    target: &Skeleton,
    partition: &SkeletonPartition,
    assignment: &BTreeMap<String, usize>,
    config: &SynthesisConfig,
) -> Result<SynthesisOutput> {
    if sources.is_empty() {
        return Err(Error::EmptyKeySet("no source clips".into()));
    }
    let layout = FeatureLayout::for_skeleton(target);
    for (i, s) in sources.iter().enumerate() {
        if s.features.layout != FeatureLayout::for_skeleton(&s.skeleton) {
            return Err(Error::LayoutMismatch(format!(
                "source {i}: features do not match its skeleton"
            )));
        }
    }
    for name in assignment.keys() {
        if partition.part_by_name(name).is_none() {
            return Err(Error::InvalidInput(format!(
                "assignment names unknown part '{name}'"
            )));
        }
    }
    let mut plans = Vec::with_capacity(partition.parts().len());
    for part in partition.parts() {
        let &src = assignment.get(&part.name).ok_or_else(|| {
            Error::InvalidInput(format!("part '{}' has no source assignment", part.name))
        })?;
        let source = sources.get(src).ok_or_else(|| {
            Error::InvalidInput(format!(
                "part '{}' is assigned source {src}, but only {} sources were given",
                part.name,
                sources.len()
            ))
        })?;
        let cols = resolve_part_columns(part, target, source, src)?;
        plans.push(PartPlan {
            sources: vec![(src, cols)],
        });
    }
    let feature_refs: Vec<&MotionFeatures> = sources.iter().map(|s| &s.features).collect();
    synthesize_with_plan(
        &feature_refs,
        layout,
        partition,
        &plans,
        config,
        &Constraint::default(),
    )
}

/// Maps one target part onto a source skeleton by joint name,
/// returning the source feature columns in the part's column order.
fn resolve_part_columns(
    part: &crate::patching::PartDescriptor,
    target: &Skeleton,
    source: &ReassemblySource,
    source_index: usize,
) -> Result<Vec<usize>> {
    let src_layout = source.features.layout;
    let mut cols = Vec::with_capacity(part.columns.len());
    for &j in &part.joints {
        let name = &target.joints()[j].name;
        let sj = source.skeleton.joint_index(name).ok_or_else(|| {
            Error::UnknownJoint(format!(
                "part '{}': joint '{name}' does not exist in source {source_index}",
                part.name
            ))
        })?;
        cols.extend(src_layout.joint_columns(sj));
    }
    if part.includes_root_channels {
        cols.extend(src_layout.root_velocity_columns());
    }
    for &f in &part.contact_joints {
        let name = &target.joints()[f].name;
        let sj = source.skeleton.joint_index(name).ok_or_else(|| {
            Error::UnknownJoint(format!(
                "part '{}': contact joint '{name}' does not exist in source {source_index}",
                part.name
            ))
        })?;
        let rank = source
            .skeleton
            .foot_joints()
            .iter()
            .position(|&x| x == sj)
            .ok_or_else(|| {
                Error::LayoutMismatch(format!(
                    "part '{}': joint '{name}' carries no contact label in source {source_index}",
                    part.name
                ))
            })?;
        cols.push(src_layout.contact_columns().start + rank);
    }
    Ok(cols)
}

/// Constraint data validated against a schedule, ready to materialize
/// per stage.
struct ResolvedConstraint<'a> {
    completion: Option<(usize, &'a Array2<f64>, std::ops::Range<usize>)>,
    keyframes: &'a [Keyframe],
    looped: bool,
}

/// Constraint values at one stage's resolution.
struct StageConstraint<'a> {
    completion: Option<(usize, Array2<f64>)>,
    /// (stage row, full feature row).
    keyframes: Vec<(usize, &'a [f64])>,
    looped: bool,
}

impl<'a> ResolvedConstraint<'a> {
    fn resolve(
        constraint: &'a Constraint,
        partition: &SkeletonPartition,
        layout: &FeatureLayout,
        coarse_frames: usize,
    ) -> Result<ResolvedConstraint<'a>> {
        let completion = match &constraint.completion {
            None => None,
            Some(c) => {
                let part = partition.part_by_name(&c.part).ok_or_else(|| {
                    Error::InvalidPartition(format!("no part named '{}'", c.part))
                })?;
                if c.channels.ncols() != part.columns.len() {
                    return Err(Error::LayoutMismatch(format!(
                        "completion for part '{}' has {} columns, part owns {}",
                        c.part,
                        c.channels.ncols(),
                        part.columns.len()
                    )));
                }
                if c.channels.nrows() < 2 {
                    return Err(Error::InvalidInput(format!(
                        "completion for part '{}' needs at least 2 frames",
                        c.part
                    )));
                }
                let v_local = if part.includes_root_channels {
                    let start = part.joints.len() * crate::rotation::ROTATION_DIM;
                    start..start + 3
                } else {
                    0..0
                };
                Some((part.index, &c.channels, v_local))
            }
        };

        let mut seen = Vec::new();
        for kf in &constraint.keyframes {
            if kf.row.len() != layout.columns() {
                return Err(Error::LayoutMismatch(format!(
                    "keyframe row has {} values, layout needs {}",
                    kf.row.len(),
                    layout.columns()
                )));
            }
            if kf.coarse_index >= coarse_frames {
                return Err(Error::ConstraintOutOfRange(format!(
                    "keyframe index {} exceeds the coarsest stage ({coarse_frames} frames)",
                    kf.coarse_index
                )));
            }
            if seen.contains(&kf.coarse_index) {
                return Err(Error::ConstraintOutOfRange(format!(
                    "keyframe index {} appears twice",
                    kf.coarse_index
                )));
            }
            seen.push(kf.coarse_index);
        }

        Ok(ResolvedConstraint {
            completion,
            keyframes: &constraint.keyframes,
            looped: constraint.looped,
        })
    }

    fn at_stage(&self, stage_frames: usize, coarse_frames: usize) -> StageConstraint<'a> {
        let completion = self.completion.as_ref().map(|(part, channels, v_local)| {
            (
                *part,
                resample_matrix(channels, stage_frames, v_local.clone()),
            )
        });
        let keyframes = self
            .keyframes
            .iter()
            .map(|kf| {
                (
                    keyframe_row(kf.coarse_index, coarse_frames, stage_frames),
                    kf.row.as_slice(),
                )
            })
            .collect();
        StageConstraint {
            completion,
            keyframes,
            looped: self.looped,
        }
    }
}

impl StageConstraint<'_> {
    fn is_empty(&self) -> bool {
        self.completion.is_none() && self.keyframes.is_empty() && !self.looped
    }

    /// Overwrites constrained values in a full feature matrix, in the
    /// fixed order completion, keyframes, loop (later wins conflicts).
    fn project_full(
        &self,
        data: &mut Array2<f64>,
        partition: &SkeletonPartition,
        layout: &FeatureLayout,
    ) {
        if let Some((b, channels)) = &self.completion {
            let part = &partition.parts()[*b];
            for (k, &c) in part.columns.iter().enumerate() {
                for t in 0..data.nrows() {
                    data[(t, c)] = channels[(t, k)];
                }
            }
        }
        for (row, values) in &self.keyframes {
            for (c, &v) in values.iter().enumerate() {
                data[(*row, c)] = v;
            }
        }
        if self.looped {
            let last = data.nrows() - 1;
            for c in layout.rotation_columns().chain(layout.contact_columns()) {
                data[(last, c)] = data[(0, c)];
            }
        }
    }

    /// Same projection restricted to one part's columns.
    fn project_part(
        &self,
        b: usize,
        partial: &mut Array2<f64>,
        partition: &SkeletonPartition,
        layout: &FeatureLayout,
    ) {
        let part = &partition.parts()[b];
        if let Some((cb, channels)) = &self.completion {
            if *cb == b {
                partial.assign(channels);
            }
        }
        for (row, values) in &self.keyframes {
            for (k, &c) in part.columns.iter().enumerate() {
                partial[(*row, k)] = values[c];
            }
        }
        if self.looped {
            let last = partial.nrows() - 1;
            let v = layout.root_velocity_columns();
            for (k, &c) in part.columns.iter().enumerate() {
                if !v.contains(&c) {
                    partial[(last, k)] = partial[(0, k)];
                }
            }
        }
    }
}

/// Pipeline shared by `synthesize` and `synthesize_reassembly`.
fn synthesize_with_plan(
    sources: &[&MotionFeatures],
    layout: FeatureLayout,
    partition: &SkeletonPartition,
    plans: &[PartPlan],
    config: &SynthesisConfig,
    constraint: &Constraint,
) -> Result<SynthesisOutput> {
    config.validate()?;
    let parts = partition.parts();
    for part in parts {
        if let Some(&c) = part.columns.iter().max() {
            if c >= layout.columns() {
                return Err(Error::LayoutMismatch(format!(
                    "part '{}' references column {c}, layout has {}",
                    part.name,
                    layout.columns()
                )));
            }
        }
    }

    let mut used: Vec<usize> = plans
        .iter()
        .flat_map(|p| p.sources.iter().map(|(s, _)| *s))
        .collect();
    used.sort_unstable();
    used.dedup();
    let t_min = used
        .iter()
        .map(|&s| sources[s].frames())
        .min()
        .ok_or_else(|| Error::EmptyKeySet("no exemplar sources in plan".into()))?;

    let schedule = build_schedule(
        t_min,
        config.output_frames,
        config.patch_size,
        config.coarse_multiple,
        config.ratio,
    )?;
    let coarse_frames = schedule.synthesis_lengths[0];
    let resolved = ResolvedConstraint::resolve(constraint, partition, &layout, coarse_frames)?;

    let mut pyramids: Vec<Option<Vec<MotionFeatures>>> = vec![None; sources.len()];
    for &s in &used {
        let lengths = schedule.lengths_for_exemplar(sources[s].frames());
        pyramids[s] = Some(build_pyramid(sources[s], &lengths)?);
    }

    // Metadata comes from the first source that feeds a root-carrying
    // part, so a single-source plan inherits its start and frame rate.
    let meta = parts
        .iter()
        .zip(plans)
        .find(|(part, _)| part.includes_root_channels)
        .map(|(_, plan)| plan.sources[0].0)
        .unwrap_or(used[0]);
    let initial_root_position = sources[meta].initial_root_position;
    let fps = sources[meta].fps;

    let coarse_data: Vec<Option<&Array2<f64>>> = pyramids
        .iter()
        .map(|p| p.as_ref().map(|levels| &levels[0].data))
        .collect();
    let (mean, std) = noise_statistics(&layout, partition, plans, &coarse_data);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut current = Array2::zeros((coarse_frames, layout.columns()));
    for t in 0..coarse_frames {
        for c in 0..layout.columns() {
            let z: f64 = rng.sample(StandardNormal);
            current[(t, c)] = mean[c] + config.noise_sigma * std[c] * z;
        }
    }

    let params = config.matching_params();
    let mut stage_millis = Vec::with_capacity(schedule.stages);
    for s in 0..schedule.stages {
        let start = Instant::now();
        let sc = resolved.at_stage(schedule.synthesis_lengths[s], coarse_frames);
        if !sc.is_empty() {
            sc.project_full(&mut current, partition, &layout);
        }
        let keys: Vec<PatchSet> = parts
            .iter()
            .zip(plans)
            .map(|(part, plan)| {
                let mats = plan
                    .sources
                    .iter()
                    .map(|(src, cols)| {
                        let levels = pyramids[*src].as_ref().expect("used source has a pyramid");
                        part_matrix(&levels[s].data, cols)
                    })
                    .collect();
                PatchSet::from_part_matrices(part.index, mats, config.patch_size)
            })
            .collect::<Result<_>>()?;
        current = refine(&current, &keys, partition, &layout, &params, |b, m| {
            if !sc.is_empty() {
                sc.project_part(b, m, partition, &layout);
            }
        })?;
        if !sc.is_empty() {
            sc.project_full(&mut current, partition, &layout);
        }
        if s + 1 < schedule.stages {
            current = resample_matrix(
                &current,
                schedule.synthesis_lengths[s + 1],
                layout.root_velocity_columns(),
            );
        }
        stage_millis.push(start.elapsed().as_secs_f64() * 1e3);
    }

    let features = MotionFeatures::new(layout, current, initial_root_position, fps)?;
    Ok(SynthesisOutput {
        features,
        schedule,
        stage_millis,
    })
}

/// Per-column mean and deviation of the coarsest exemplar levels,
/// pooled over every (source, column) pair that feeds the column
/// through some part.  Duplicate pairs (parts sharing a column with
/// the same plan) are counted once, so plan structure does not skew
/// the statistics.
fn noise_statistics(
    layout: &FeatureLayout,
    partition: &SkeletonPartition,
    plans: &[PartPlan],
    coarse_data: &[Option<&Array2<f64>>],
) -> (Vec<f64>, Vec<f64>) {
    let cols = layout.columns();
    let mut mean = vec![0.0; cols];
    let mut std = vec![0.0; cols];
    for c in 0..cols {
        let mut feeds: Vec<(usize, usize)> = Vec::new();
        for (part, plan) in partition.parts().iter().zip(plans) {
            if let Some(local) = part.columns.iter().position(|&x| x == c) {
                for (src, scols) in &plan.sources {
                    let pair = (*src, scols[local]);
                    if !feeds.contains(&pair) {
                        feeds.push(pair);
                    }
                }
            }
        }
        let mut n = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for (src, sc) in feeds {
            let data = coarse_data[src].expect("plan source has coarse data");
            for &v in data.column(sc) {
                n += 1.0;
                s1 += v;
                s2 += v * v;
            }
        }
        if n > 0.0 {
            let m = s1 / n;
            mean[c] = m;
            std[c] = (s2 / n - m * m).max(0.0).sqrt();
        }
    }
    (mean, std)
}
