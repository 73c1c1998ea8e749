//! Quantitative evaluation of synthesized motion.
//!
//! Three measurements: how close generated patches stay to the
//! exemplars (`patch_distance`), how much of the exemplar content the
//! output reproduces (`coverage`), and how much a batch of seeded runs
//! differs internally (`set_diversity`).  All are deterministic given
//! their inputs.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matching::pairwise_distances;
use crate::motion::{MotionFeatures, WorldMotion};
use crate::patching::PatchSet;
use crate::rotation::Rotation6D;

/// Everything the evaluation ran with, echoed alongside the values so
/// a report is interpretable on its own.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricsParameters {
    pub local_window: usize,
    pub global_window: usize,
    /// Window used for coverage (the local one by default).
    pub coverage_window: usize,
    pub rel_threshold: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricsReport {
    pub coverage: f64,
    pub local_patch_distance: f64,
    pub global_patch_distance: f64,
    /// Absent when fewer than two samples were supplied.
    pub set_diversity: Option<f64>,
    pub parameters: MetricsParameters,
}

/// Stacks stride-1 whole-body windows from every clip into one set.
fn window_set(clips: &[&MotionFeatures], window: usize) -> Result<PatchSet> {
    if clips.is_empty() {
        return Err(Error::EmptyKeySet("no clips".into()));
    }
    let mats: Vec<Array2<f64>> = clips.iter().map(|m| m.data.clone()).collect();
    PatchSet::from_part_matrices(0, mats, window)
}

/// Mean over all generated windows of the squared-L2 distance to the
/// nearest exemplar window, divided by `window * columns` so the value
/// reads as a per-element squared deviation.
pub fn patch_distance(
    generated: &[&MotionFeatures],
    exemplars: &[&MotionFeatures],
    window: usize,
) -> Result<f64> {
    let gen_set = window_set(generated, window)?;
    let ex_set = window_set(exemplars, window)?;
    let d = pairwise_distances(&gen_set, &ex_set)?;
    let per_element = (window * generated[0].layout.columns()) as f64;
    let mut total = 0.0;
    for row in d.data.rows() {
        let best = row.iter().cloned().fold(f64::INFINITY, f64::min);
        total += best / per_element;
    }
    Ok(total / d.data.nrows() as f64)
}

/// Mean over columns of the population variance of each column, frames
/// pooled across all clips.  Scales the coverage threshold so it
/// tracks the data's own spread.
fn mean_column_variance(clips: &[&MotionFeatures]) -> f64 {
    let cols = clips[0].layout.columns();
    let mut total = 0.0;
    for c in 0..cols {
        let mut n = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for m in clips {
            for &v in m.data.column(c) {
                n += 1.0;
                s1 += v;
                s2 += v * v;
            }
        }
        let mean = s1 / n;
        total += (s2 / n - mean * mean).max(0.0);
    }
    total / cols as f64
}

/// Fraction of exemplar windows whose nearest generated window lies
/// strictly below `rel_threshold * mean_column_variance(exemplars)`
/// in per-element squared-L2 distance.
pub fn coverage(
    generated: &[&MotionFeatures],
    exemplars: &[&MotionFeatures],
    window: usize,
    rel_threshold: f64,
) -> Result<f64> {
    if !(rel_threshold > 0.0) || !rel_threshold.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "coverage threshold {rel_threshold} must be positive and finite"
        )));
    }
    let gen_set = window_set(generated, window)?;
    let ex_set = window_set(exemplars, window)?;
    let d = pairwise_distances(&gen_set, &ex_set)?;
    let per_element = (window * exemplars[0].layout.columns()) as f64;
    let cutoff = rel_threshold * mean_column_variance(exemplars);
    let mut covered = 0usize;
    for j in 0..d.data.ncols() {
        let best = d.data.column(j).iter().cloned().fold(f64::INFINITY, f64::min);
        if best / per_element < cutoff {
            covered += 1;
        }
    }
    Ok(covered as f64 / d.data.ncols() as f64)
}

/// Flattens a clip's joint rotations to a `frames x (joints*6)` matrix
/// of rotation coordinates.
fn rotation_coordinates(w: &WorldMotion) -> Result<Array2<f64>> {
    let frames = w.frames();
    let joints = w.rotations.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((frames, joints * 6));
    for (t, row) in w.rotations.iter().enumerate() {
        if row.len() != joints {
            return Err(Error::InvalidInput(format!(
                "frame {t} has {} joints, frame 0 has {joints}",
                row.len()
            )));
        }
        for (j, q) in row.iter().enumerate() {
            let r = Rotation6D::from_quat(*q)?;
            for (k, &v) in r.0.iter().enumerate() {
                out[(t, j * 6 + k)] = v;
            }
        }
    }
    Ok(out)
}

/// Spread of a seeded batch: the per-(frame, joint, component)
/// standard deviation of rotation coordinates across samples, averaged
/// over everything, then divided by the pooled standard deviation of
/// the exemplar's own rotation coordinates.
pub fn set_diversity(samples: &[WorldMotion], exemplar: &WorldMotion) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "set diversity needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let coords: Vec<Array2<f64>> = samples
        .iter()
        .map(rotation_coordinates)
        .collect::<Result<_>>()?;
    let shape = coords[0].dim();
    for (i, c) in coords.iter().enumerate() {
        if c.dim() != shape {
            return Err(Error::InvalidInput(format!(
                "sample {i} has shape {:?}, sample 0 has {shape:?}",
                c.dim()
            )));
        }
    }

    let n = samples.len() as f64;
    let mut std_total = 0.0;
    for t in 0..shape.0 {
        for c in 0..shape.1 {
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for sample in &coords {
                let v = sample[(t, c)];
                s1 += v;
                s2 += v * v;
            }
            let mean = s1 / n;
            std_total += (s2 / n - mean * mean).max(0.0).sqrt();
        }
    }
    let numerator = std_total / (shape.0 * shape.1) as f64;

    let ex = rotation_coordinates(exemplar)?;
    let m = ex.len() as f64;
    if m == 0.0 {
        return Err(Error::InvalidInput("exemplar has no rotations".into()));
    }
    let s1: f64 = ex.iter().sum();
    let s2: f64 = ex.iter().map(|v| v * v).sum();
    let mean = s1 / m;
    let denom = (s2 / m - mean * mean).max(0.0).sqrt();
    if denom <= 0.0 {
        return Err(Error::InvalidInput(
            "exemplar rotation coordinates are constant; diversity is undefined".into(),
        ));
    }
    Ok(numerator / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Axis, Quat};
    use crate::motion::FeatureLayout;

    fn features(frames: usize, phase: f64) -> MotionFeatures {
        let layout = FeatureLayout {
            joint_count: 2,
            contact_count: 0,
        };
        let mut data = Array2::zeros((frames, layout.columns()));
        for i in 0..frames {
            for c in 0..layout.columns() {
                data[(i, c)] = (0.17 * i as f64 + 0.9 * c as f64 + phase).sin() + 1e-3 * i as f64;
            }
        }
        for c in layout.root_velocity_columns() {
            data[(0, c)] = 0.0;
        }
        MotionFeatures::new(layout, data, [0.0; 3], 30.0).unwrap()
    }

    fn constant(frames: usize, value: f64) -> MotionFeatures {
        let layout = FeatureLayout {
            joint_count: 2,
            contact_count: 0,
        };
        let mut data = Array2::from_elem((frames, layout.columns()), value);
        for c in layout.root_velocity_columns() {
            data[(0, c)] = 0.0;
        }
        MotionFeatures::new(layout, data, [0.0; 3], 30.0).unwrap()
    }

    #[test]
    fn identical_clips_have_zero_distance_and_full_coverage() {
        let m = features(60, 0.4);
        let d = patch_distance(&[&m], &[&m], 11).unwrap();
        assert!(d.abs() < 1e-12, "{d}");
        let c = coverage(&[&m], &[&m], 11, 0.05).unwrap();
        assert_eq!(c, 1.0);
    }

    #[test]
    fn constant_offset_gives_squared_offset() {
        // Exemplar constant 0, generated constant c: every element
        // differs by c, so the per-element squared distance is c^2.
        // The displacement columns break the pattern at frame 0 only
        // for windows containing it; use the interior by making the
        // whole clip longer than one window and checking the floor.
        let ex = constant(40, 0.0);
        let g = constant(40, 0.5);
        let d = patch_distance(&[&g], &[&ex], 5).unwrap();
        // Row 0 of the displacement columns is pinned to zero in both
        // clips (3 of 15 columns over 1 of 5 window rows), which only
        // lowers the distance for windows touching frame 0.
        let exact = 0.25;
        assert!(d <= exact + 1e-12 && d > exact * 0.9, "{d}");
        let interior = patch_distance(
            &[&MotionFeatures::new(
                ex.layout,
                Array2::from_elem((40, ex.layout.columns()), 0.5),
                [0.0; 3],
                30.0,
            )
            .unwrap()],
            &[&MotionFeatures::new(
                ex.layout,
                Array2::zeros((40, ex.layout.columns())),
                [0.0; 3],
                30.0,
            )
            .unwrap()],
            5,
        )
        .unwrap();
        assert!((interior - exact).abs() < 1e-12, "{interior}");
    }

    #[test]
    fn adding_exemplars_never_increases_distance() {
        let g = features(50, 0.1);
        let a = features(60, 2.0);
        let b = features(60, 0.1);
        let one = patch_distance(&[&g], &[&a], 11).unwrap();
        let two = patch_distance(&[&g], &[&a, &b], 11).unwrap();
        assert!(two <= one + 1e-15, "{two} > {one}");
    }

    #[test]
    fn half_clip_covers_half_the_windows() {
        let ex = features(200, 0.7);
        let layout = ex.layout;
        let half = MotionFeatures::new(
            layout,
            ex.data.slice(ndarray::s![0..100, ..]).to_owned(),
            [0.0; 3],
            30.0,
        )
        .unwrap();
        // A tiny threshold counts only exact window matches: exemplar
        // windows starting at 0..=89 exist verbatim in the half clip.
        let c = coverage(&[&half], &[&ex], 11, 1e-9).unwrap();
        assert!((c - 90.0 / 190.0).abs() < 1e-12, "{c}");
    }

    #[test]
    fn far_away_clip_covers_nothing() {
        let ex = features(80, 0.7);
        let mut shifted = ex.clone();
        shifted.data += 1000.0;
        for c in ex.layout.root_velocity_columns() {
            shifted.data[(0, c)] = 0.0;
        }
        let c = coverage(&[&shifted], &[&ex], 11, 0.05).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn too_short_inputs_error() {
        let m = features(8, 0.0);
        assert!(patch_distance(&[&m], &[&m], 11).is_err());
        assert!(coverage(&[&m], &[&m], 11, 0.05).is_err());
    }

    fn world(frames: usize, joints: usize, speed: f64) -> WorldMotion {
        let mut root_positions = Vec::with_capacity(frames);
        let mut rotations = Vec::with_capacity(frames);
        for t in 0..frames {
            root_positions.push([t as f64 * 0.01, 1.0, 0.0]);
            rotations.push(
                (0..joints)
                    .map(|j| {
                        Quat::from_axis_angle_deg(
                            Axis::Y,
                            30.0 * (speed * t as f64 + j as f64).sin(),
                        )
                    })
                    .collect(),
            );
        }
        WorldMotion {
            root_positions,
            rotations,
        }
    }

    #[test]
    fn identical_samples_have_zero_diversity() {
        let w = world(30, 3, 0.2);
        let d = set_diversity(&[w.clone(), w.clone()], &w).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn reversed_sample_has_positive_diversity() {
        let w = world(30, 3, 0.2);
        let mut rev = w.clone();
        rev.root_positions.reverse();
        rev.rotations.reverse();
        let d = set_diversity(&[w.clone(), rev], &w).unwrap();
        assert!(d > 0.0, "{d}");
    }

    #[test]
    fn diversity_ignores_sample_order() {
        let a = world(30, 3, 0.2);
        let b = world(30, 3, 0.31);
        let ex = world(40, 3, 0.25);
        let d1 = set_diversity(&[a.clone(), b.clone()], &ex).unwrap();
        let d2 = set_diversity(&[b, a], &ex).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn diversity_rejects_mismatched_shapes() {
        let a = world(30, 3, 0.2);
        let b = world(31, 3, 0.2);
        assert!(set_diversity(&[a.clone(), b], &a).is_err());
        let c = world(30, 4, 0.2);
        assert!(set_diversity(&[a.clone(), c], &a).is_err());
        assert!(set_diversity(std::slice::from_ref(&a), &a).is_err());
    }
}
