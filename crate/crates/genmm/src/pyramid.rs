//! Temporal pyramids: how many stages a synthesis run gets, how long
//! every stage is, and the resampling that moves motion between
//! adjacent resolutions.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::motion::MotionFeatures;

/// Per-stage lengths for one synthesis run, coarsest first.
///
/// The coarsest stage holds `coarse_multiple * patch_size` exemplar
/// frames, enough for a handful of distinct patch windows, and grows
/// by `ratio` per stage until the final stage reaches the full inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidSchedule {
    pub stages: usize,
    /// Shortest-exemplar frame count per stage; other exemplars are
    /// scaled through `lengths_for_exemplar`.
    pub exemplar_lengths: Vec<usize>,
    /// Output frame count per stage.
    pub synthesis_lengths: Vec<usize>,
    pub ratio: f64,
    pub patch_size: usize,
    coarse_floor: usize,
}

/// Derives the stage count and per-stage lengths.
///
/// `exemplar_frames` is the shortest exemplar.  The stage count is the
/// smallest S with `exemplar_frames / ratio^(S-1) <=
/// coarse_multiple * patch_size`; lengths follow the closed form
/// `round(frames / ratio^(stages-1-s))` with both endpoints pinned.
pub fn build_schedule(
    exemplar_frames: usize,
    output_frames: usize,
    patch_size: usize,
    coarse_multiple: usize,
    ratio: f64,
) -> Result<PyramidSchedule> {
    if patch_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "patch size {patch_size} must be at least 2"
        )));
    }
    if coarse_multiple < 1 {
        return Err(Error::InvalidParameter(
            "coarse multiple must be at least 1".into(),
        ));
    }
    if !(ratio > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "pyramid ratio {ratio} must be greater than 1"
        )));
    }
    let coarse_floor = coarse_multiple * patch_size;
    if exemplar_frames < coarse_floor {
        return Err(Error::ExemplarTooShort {
            frames: exemplar_frames,
            required: coarse_floor,
        });
    }
    if output_frames < patch_size {
        return Err(Error::InvalidParameter(format!(
            "output length {output_frames} is shorter than one patch ({patch_size})"
        )));
    }

    // ceil with a guard so exact powers of `ratio` don't gain a stage
    // from float noise.
    let raw = (exemplar_frames as f64 / coarse_floor as f64).ln() / ratio.ln();
    let steps = if (raw - raw.round()).abs() < 1e-9 {
        raw.round()
    } else {
        raw.ceil()
    };
    let stages = steps.max(0.0) as usize + 1;

    let mut schedule = PyramidSchedule {
        stages,
        exemplar_lengths: Vec::new(),
        synthesis_lengths: Vec::new(),
        ratio,
        patch_size,
        coarse_floor,
    };
    schedule.exemplar_lengths = schedule.lengths_for_exemplar(exemplar_frames);
    schedule.synthesis_lengths = stage_lengths(output_frames, stages, ratio, patch_size, None);
    Ok(schedule)
}

impl PyramidSchedule {
    /// Stage lengths for one exemplar.  Every exemplar shrinks by the
    /// same per-stage ratio; the coarsest stage never drops below the
    /// schedule's coarse floor, so the shortest exemplar reproduces
    /// `exemplar_lengths` exactly and longer ones stay proportional.
    pub fn lengths_for_exemplar(&self, frames: usize) -> Vec<usize> {
        stage_lengths(
            frames,
            self.stages,
            self.ratio,
            self.patch_size,
            Some(self.coarse_floor),
        )
    }
}

fn stage_lengths(
    frames: usize,
    stages: usize,
    ratio: f64,
    patch_size: usize,
    coarse_floor: Option<usize>,
) -> Vec<usize> {
    let mut lengths = Vec::with_capacity(stages);
    for s in 0..stages {
        let exp = (stages - 1 - s) as i32;
        let len = (frames as f64 / ratio.powi(exp)).round() as usize;
        lengths.push(len.max(patch_size));
    }
    lengths[stages - 1] = frames;
    if let Some(floor) = coarse_floor {
        lengths[0] = lengths[0].max(floor);
    }
    for s in 1..stages {
        lengths[s] = lengths[s].max(lengths[s - 1]);
    }
    lengths
}

/// Linearly resamples a feature matrix to `target` rows.
///
/// Rotation and contact columns are interpolated per value.  The root
/// displacement columns are resampled through their running sum (the
/// root's path), then differenced back, so the total traveled offset
/// is preserved no matter how the frame rate changes.  First and last
/// rows map exactly onto the input's first and last rows.
pub fn resample(m: &MotionFeatures, target: usize) -> Result<MotionFeatures> {
    if m.frames() < 2 {
        return Err(Error::InvalidInput(format!(
            "cannot resample a {}-frame clip",
            m.frames()
        )));
    }
    if target < 2 {
        return Err(Error::InvalidParameter(format!(
            "resample target {target} must be at least 2"
        )));
    }
    let data = resample_matrix(&m.data, target, m.layout.root_velocity_columns());
    MotionFeatures::new(m.layout, data, m.initial_root_position, m.fps)
}

/// Matrix-level resampling; `v_cols` marks the displacement columns
/// that go through the running-sum path.  Callers guarantee
/// `data.nrows() >= 2` and `target >= 2`.
pub fn resample_matrix(
    data: &Array2<f64>,
    target: usize,
    v_cols: std::ops::Range<usize>,
) -> Array2<f64> {
    let n = data.nrows();
    let cols = data.ncols();
    if target == n {
        return data.clone();
    }

    // Running sum of every displacement column: cum[i] = sum of rows 0..=i.
    let mut cum = Array2::zeros((n, v_cols.len()));
    for (d, c) in v_cols.clone().enumerate() {
        let mut acc = 0.0;
        for i in 0..n {
            acc += data[(i, c)];
            cum[(i, d)] = acc;
        }
    }

    let scale = (n - 1) as f64 / (target - 1) as f64;
    let sample = |t: usize| -> (usize, usize, f64) {
        if t == 0 {
            (0, 0, 0.0)
        } else if t == target - 1 {
            (n - 1, n - 1, 0.0)
        } else {
            let u = (t as f64 * scale).min((n - 1) as f64);
            let lo = u.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, u - lo as f64)
        }
    };

    let mut out = Array2::zeros((target, cols));
    let mut prev_cum: Vec<f64> = (0..v_cols.len()).map(|d| cum[(0, d)]).collect();
    for t in 0..target {
        let (lo, hi, frac) = sample(t);
        for c in 0..cols {
            out[(t, c)] = data[(lo, c)] * (1.0 - frac) + data[(hi, c)] * frac;
        }
        for (d, c) in v_cols.clone().enumerate() {
            let q = cum[(lo, d)] * (1.0 - frac) + cum[(hi, d)] * frac;
            if t == 0 {
                // Row 0 keeps its literal displacement; the sum of all
                // following rows then telescopes to the input total.
                out[(t, c)] = data[(0, c)];
            } else {
                out[(t, c)] = q - prev_cum[d];
            }
            prev_cum[d] = q;
        }
    }
    out
}

/// Builds an exemplar pyramid by repeated downsampling: the finest
/// level is the input itself and every coarser level is resampled from
/// the level above it, which keeps adjacent levels maximally similar.
/// `lengths` is coarsest-first and must end at the input length.
pub fn build_pyramid(m: &MotionFeatures, lengths: &[usize]) -> Result<Vec<MotionFeatures>> {
    if lengths.is_empty() {
        return Err(Error::InvalidParameter("empty pyramid schedule".into()));
    }
    if *lengths.last().unwrap() != m.frames() {
        return Err(Error::LayoutMismatch(format!(
            "pyramid schedule ends at {} frames but the clip has {}",
            lengths.last().unwrap(),
            m.frames()
        )));
    }
    let mut levels = vec![m.clone()];
    for s in (0..lengths.len() - 1).rev() {
        let coarser = resample(levels.last().unwrap(), lengths[s])?;
        levels.push(coarser);
    }
    levels.reverse();
    Ok(levels)
}
