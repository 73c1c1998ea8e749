//! Patch matching and blending.
//!
//! One refinement step takes a guess motion, finds the nearest
//! exemplar window for every guess window, and rewrites the guess as
//! the per-frame average of its matched windows.  Distances are
//! squared L2 over whole windows, then divided per key by
//! `alpha + (that key's distance to its closest query)`: keys that no
//! query sits near become cheap, which pulls rarely-used exemplar
//! windows into the output and keeps the synthesis complete rather
//! than collapsed onto a few windows.  Small `alpha` strengthens the
//! effect, large `alpha` approaches plain nearest neighbors.
//!
//! The kernel never materializes per-window vectors.  For stride-1
//! windows, the window distance is a sum of per-frame distances along
//! a diagonal of the frame-to-frame distance matrix, which itself
//! comes from one matrix product (`|x-y|^2 = |x|^2 + |y|^2 - 2xy`).
//! Each window distance is then a sliding sum along that diagonal.
//! Very large query/key products stream the keys in blocks instead of
//! materializing the full matrix.

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};

use crate::error::{Error, Result};
use crate::motion::{FeatureLayout, MotionFeatures};
use crate::patching::{part_matrix, PatchSet, SkeletonPartition};

/// Entry cap for a materialized query-by-key distance matrix; above
/// this the matcher streams key blocks and keeps running minima.
pub(crate) const MAX_DENSE_ENTRIES: usize = 1 << 26;

/// Row-chunk height for the parallel matrix product.  Fixed so the
/// work split (and thus every float) is independent of thread count.
const GRAM_CHUNK: usize = 256;

/// Relative importance of the three channel groups during matching.
/// Weights scale distances only; blended output values are never
/// weighted, so a weight of zero simply ignores a group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelWeights {
    pub rotation: f64,
    pub root_velocity: f64,
    pub contact: f64,
}

impl Default for ChannelWeights {
    fn default() -> ChannelWeights {
        ChannelWeights {
            rotation: 1.0,
            root_velocity: 1.0,
            contact: 1.0,
        }
    }
}

impl ChannelWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rotation", self.rotation),
            ("root_velocity", self.root_velocity),
            ("contact", self.contact),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "channel weight {name} = {v} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }

    pub fn is_uniform(&self) -> bool {
        self.rotation == 1.0 && self.root_velocity == 1.0 && self.contact == 1.0
    }

    /// Per-column multipliers (square roots of the weights, since they
    /// scale values whose squared differences are summed) for one
    /// part's columns.  `None` when all weights are 1, which lets the
    /// kernel skip the scaled copies entirely.
    pub(crate) fn column_scales(
        &self,
        columns: &[usize],
        layout: &FeatureLayout,
    ) -> Option<Vec<f64>> {
        if self.is_uniform() {
            return None;
        }
        let rot = layout.rotation_columns();
        let vel = layout.root_velocity_columns();
        Some(
            columns
                .iter()
                .map(|&c| {
                    let w = if rot.contains(&c) {
                        self.rotation
                    } else if vel.contains(&c) {
                        self.root_velocity
                    } else {
                        self.contact
                    };
                    w.sqrt()
                })
                .collect(),
        )
    }
}

/// Knobs for one refinement call.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingParams {
    /// Patch window length in frames.
    pub window: usize,
    /// Completeness strength; must be positive.
    pub alpha: f64,
    /// Match-and-blend passes per stage.
    pub iterations: usize,
    pub weights: ChannelWeights,
}

impl MatchingParams {
    pub fn new(window: usize, alpha: f64, iterations: usize) -> MatchingParams {
        MatchingParams {
            window,
            alpha,
            iterations,
            weights: ChannelWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::InvalidParameter(format!(
                "patch window {} must be at least 2",
                self.window
            )));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha {} must be positive and finite",
                self.alpha
            )));
        }
        self.weights.validate()
    }
}

/// Squared window distances, queries by keys.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub data: Array2<f64>,
}

/// Distances after per-key normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDistanceMatrix {
    pub data: Array2<f64>,
    pub alpha: f64,
}

/// Chosen key window per query window.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchAssignment {
    pub keys: Vec<usize>,
}

impl MatchAssignment {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Materializes the full squared-distance matrix between two patch
/// sets (same part width, same window).  Unweighted.
pub fn pairwise_distances(x: &PatchSet, y: &PatchSet) -> Result<DistanceMatrix> {
    if x.part_columns != y.part_columns {
        return Err(Error::LayoutMismatch(format!(
            "query patches have {} columns, keys have {}",
            x.part_columns, y.part_columns
        )));
    }
    if x.window != y.window {
        return Err(Error::LayoutMismatch(format!(
            "query window {} vs key window {}",
            x.window, y.window
        )));
    }
    if x.is_empty() {
        return Err(Error::EmptyKeySet("no query windows".into()));
    }
    if y.is_empty() {
        return Err(Error::EmptyKeySet("no key windows".into()));
    }

    let mut d = Array2::zeros((x.len(), y.len()));
    let mut ox = 0;
    for xm in &x.sources {
        let nxk = xm.nrows() + 1 - x.window;
        let mut oy = 0;
        for ym in &y.sources {
            let nyk = ym.nrows() + 1 - y.window;
            let g = frame_gram(xm.view(), ym.view());
            window_sums_into(&g, x.window, d.slice_mut(s![ox..ox + nxk, oy..oy + nyk]));
            oy += nyk;
        }
        ox += nxk;
    }
    Ok(DistanceMatrix { data: d })
}

/// Divides every column by `alpha` plus that column's minimum, so each
/// key's cost is relative to how close its best query already is.
pub fn normalize(d: &DistanceMatrix, alpha: f64) -> Result<NormalizedDistanceMatrix> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "alpha {alpha} must be positive and finite"
        )));
    }
    if d.data.nrows() == 0 || d.data.ncols() == 0 {
        return Err(Error::EmptyKeySet("empty distance matrix".into()));
    }
    let mins = column_minima(&d.data);
    let mut out = d.data.clone();
    for mut row in out.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v /= alpha + mins[j];
        }
    }
    Ok(NormalizedDistanceMatrix { data: out, alpha })
}

/// Per-query argmin.  Ties go to the lowest key index, so assignment
/// is a pure function of the matrix.
pub fn assign(d: &NormalizedDistanceMatrix) -> Result<MatchAssignment> {
    if d.data.ncols() == 0 {
        return Err(Error::EmptyKeySet("no key windows".into()));
    }
    let keys = d
        .data
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = f64::INFINITY;
            let mut best_j = 0;
            for (j, &v) in row.iter().enumerate() {
                if v < best {
                    best = v;
                    best_j = j;
                }
            }
            best_j
        })
        .collect();
    Ok(MatchAssignment { keys })
}

/// Rewrites a clip of `frames` frames from an assignment: every output
/// window votes the frames of its matched key window, and each frame
/// becomes the mean of the votes it received.  The mean is the least
/// squares solution once the per-window matches are fixed.
pub fn blend(assignment: &MatchAssignment, keys: &PatchSet, frames: usize) -> Result<Array2<f64>> {
    let w = keys.window;
    if frames < w {
        return Err(Error::InvalidInput(format!(
            "cannot blend {frames} frames from windows of {w}"
        )));
    }
    let nx = frames - w + 1;
    if assignment.len() != nx {
        return Err(Error::LayoutMismatch(format!(
            "assignment covers {} windows, output needs {nx}",
            assignment.len()
        )));
    }
    let pc = keys.part_columns;
    let mut sums = Array2::zeros((frames, pc));
    let mut counts = vec![0.0f64; frames];
    for (wi, &key) in assignment.keys.iter().enumerate() {
        let origin = *keys.origins.get(key).ok_or_else(|| {
            Error::InvalidInput(format!("assignment references key {key} of {}", keys.len()))
        })?;
        let src = &keys.sources[origin.source];
        for t in 0..w {
            let frame = wi + t;
            counts[frame] += 1.0;
            let srow = src.row(origin.start + t);
            let mut drow = sums.row_mut(frame);
            for c in 0..pc {
                drow[c] += srow[c];
            }
        }
    }
    for (i, &cnt) in counts.iter().enumerate() {
        sums.row_mut(i).mapv_inplace(|v| v / cnt);
    }
    Ok(sums)
}

/// Merges per-part partial motions back into a full feature matrix.
/// Columns owned by several parts (shared joints, duplicated root
/// displacement) are averaged.
pub fn assemble(
    partials: &[Array2<f64>],
    partition: &SkeletonPartition,
    layout: &FeatureLayout,
) -> Result<Array2<f64>> {
    let parts = partition.parts();
    if partials.len() != parts.len() {
        return Err(Error::LayoutMismatch(format!(
            "{} partial motions for {} parts",
            partials.len(),
            parts.len()
        )));
    }
    let frames = partials
        .first()
        .ok_or_else(|| Error::InvalidInput("no partial motions".into()))?
        .nrows();
    let total = layout.columns();
    let mut sums = Array2::zeros((frames, total));
    let mut counts = vec![0.0f64; total];
    for (p, part) in partials.iter().zip(parts) {
        if p.nrows() != frames {
            return Err(Error::LayoutMismatch(format!(
                "part '{}' has {} frames, expected {frames}",
                part.name,
                p.nrows()
            )));
        }
        if p.ncols() != part.columns.len() {
            return Err(Error::LayoutMismatch(format!(
                "part '{}' has {} columns, descriptor owns {}",
                part.name,
                p.ncols(),
                part.columns.len()
            )));
        }
        for (k, &c) in part.columns.iter().enumerate() {
            counts[c] += 1.0;
            for i in 0..frames {
                sums[(i, c)] += p[(i, k)];
            }
        }
    }
    if let Some(c) = counts.iter().position(|&x| x == 0.0) {
        return Err(Error::InvalidPartition(format!(
            "feature column {c} is not covered by any part"
        )));
    }
    for i in 0..frames {
        for (c, &cnt) in counts.iter().enumerate() {
            sums[(i, c)] /= cnt;
        }
    }
    Ok(sums)
}

/// One full refinement of `guess` against `exemplars`: per part,
/// `iterations` rounds of match-and-blend, then cross-part assembly.
/// With zero iterations the guess comes back unchanged.
pub fn match_and_blend(
    guess: &MotionFeatures,
    exemplars: &[MotionFeatures],
    partition: &SkeletonPartition,
    params: &MatchingParams,
) -> Result<MotionFeatures> {
    params.validate()?;
    if exemplars.is_empty() {
        return Err(Error::EmptyKeySet("no exemplars".into()));
    }
    for e in exemplars {
        if e.layout != guess.layout {
            return Err(Error::LayoutMismatch(
                "exemplar layout differs from guess layout".into(),
            ));
        }
    }
    let keys: Vec<PatchSet> = partition
        .parts()
        .iter()
        .map(|part| PatchSet::extract_multi(exemplars, part, params.window))
        .collect::<Result<_>>()?;
    let data = refine(
        &guess.data,
        &keys,
        partition,
        &guess.layout,
        params,
        |_, _| {},
    )?;
    MotionFeatures::new(
        guess.layout,
        data,
        guess.initial_root_position,
        guess.fps,
    )
}

/// Refinement core shared by free-running and constrained synthesis.
/// `project_part` runs on each part's partial motion right before
/// every matching pass; constraint-free callers pass a no-op.  The
/// assembled result is returned unprojected so the caller decides how
/// stage-exit constraints apply.
pub(crate) fn refine<F>(
    guess: &Array2<f64>,
    keys: &[PatchSet],
    partition: &SkeletonPartition,
    layout: &FeatureLayout,
    params: &MatchingParams,
    mut project_part: F,
) -> Result<Array2<f64>>
where
    F: FnMut(usize, &mut Array2<f64>),
{
    let parts = partition.parts();
    if keys.len() != parts.len() {
        return Err(Error::LayoutMismatch(format!(
            "{} key sets for {} parts",
            keys.len(),
            parts.len()
        )));
    }
    let frames = guess.nrows();
    let mut partials: Vec<Array2<f64>> = parts
        .iter()
        .map(|p| part_matrix(guess, &p.columns))
        .collect();
    for (b, part) in parts.iter().enumerate() {
        let key_set = &keys[b];
        if key_set.part != b
            || key_set.part_columns != part.columns.len()
            || key_set.window != params.window
        {
            return Err(Error::LayoutMismatch(format!(
                "key set {b} does not match part '{}'",
                part.name
            )));
        }
        let scales = params.weights.column_scales(&part.columns, layout);
        for _ in 0..params.iterations {
            project_part(b, &mut partials[b]);
            let a = assign_nearest(&partials[b], key_set, params.alpha, scales.as_deref())?;
            partials[b] = blend(&a, key_set, frames)?;
        }
    }
    assemble(&partials, partition, layout)
}

/// Nearest key window per query window of a part matrix, using the
/// production kernel (normalization included).
pub(crate) fn assign_nearest(
    query: &Array2<f64>,
    keys: &PatchSet,
    alpha: f64,
    scales: Option<&[f64]>,
) -> Result<MatchAssignment> {
    assign_nearest_capped(query, keys, alpha, scales, MAX_DENSE_ENTRIES)
}

/// Same as `assign_nearest` with an explicit dense-matrix cap, so
/// tests can force the blocked path on small inputs.
pub(crate) fn assign_nearest_capped(
    query: &Array2<f64>,
    keys: &PatchSet,
    alpha: f64,
    scales: Option<&[f64]>,
    cap: usize,
) -> Result<MatchAssignment> {
    let w = keys.window;
    if query.ncols() != keys.part_columns {
        return Err(Error::LayoutMismatch(format!(
            "query has {} columns, keys have {}",
            query.ncols(),
            keys.part_columns
        )));
    }
    if keys.is_empty() {
        return Err(Error::EmptyKeySet("no key windows".into()));
    }
    if query.nrows() < w {
        return Err(Error::InvalidInput(format!(
            "query has {} frames, patch window is {w}",
            query.nrows()
        )));
    }

    let scaled = scales.map(|sc| {
        let q = scale_columns(query.view(), sc);
        let ks: Vec<Array2<f64>> = keys
            .sources
            .iter()
            .map(|m| scale_columns(m.view(), sc))
            .collect();
        (q, ks)
    });
    let (qv, kvs): (ArrayView2<f64>, Vec<ArrayView2<f64>>) = match &scaled {
        Some((q, ks)) => (q.view(), ks.iter().map(|m| m.view()).collect()),
        None => (
            query.view(),
            keys.sources.iter().map(|m| m.view()).collect(),
        ),
    };

    let nx = qv.nrows() + 1 - w;
    let ny = keys.len();
    if nx.saturating_mul(ny) <= cap {
        assign_dense(qv, &kvs, w, alpha)
    } else {
        assign_blocked(qv, &kvs, w, alpha, cap)
    }
}

fn assign_dense(
    q: ArrayView2<f64>,
    key_mats: &[ArrayView2<f64>],
    window: usize,
    alpha: f64,
) -> Result<MatchAssignment> {
    let nx = q.nrows() + 1 - window;
    let ny: usize = key_mats.iter().map(|m| m.nrows() + 1 - window).sum();
    let mut d = Array2::zeros((nx, ny));
    let mut off = 0;
    for km in key_mats {
        let nyk = km.nrows() + 1 - window;
        let g = frame_gram(q, *km);
        window_sums_into(&g, window, d.slice_mut(s![.., off..off + nyk]));
        off += nyk;
    }
    let mins = column_minima(&d);
    let keys: Vec<usize> = d
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|row| {
            let mut best = f64::INFINITY;
            let mut best_j = 0;
            for (j, &v) in row.iter().enumerate() {
                let nv = v / (alpha + mins[j]);
                if nv < best {
                    best = nv;
                    best_j = j;
                }
            }
            best_j
        })
        .collect();
    Ok(MatchAssignment { keys })
}

/// Streaming variant: keys are visited in blocks, each block's column
/// minima are complete (every query is present), so a single pass with
/// a running strict-less best reproduces the dense argmin and its
/// lowest-index tie-breaking.
fn assign_blocked(
    q: ArrayView2<f64>,
    key_mats: &[ArrayView2<f64>],
    window: usize,
    alpha: f64,
    cap: usize,
) -> Result<MatchAssignment> {
    let nx = q.nrows() + 1 - window;
    let block = (cap / nx.max(1)).max(1);
    let mut best: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); nx];
    let mut global = 0usize;
    for km in key_mats {
        let nyk = km.nrows() + 1 - window;
        let mut b0 = 0;
        while b0 < nyk {
            let bn = block.min(nyk - b0);
            let frames = km.slice(s![b0..b0 + bn + window - 1, ..]);
            let g = frame_gram(q, frames);
            let mut d = Array2::zeros((nx, bn));
            window_sums_into(&g, window, d.view_mut());
            let mins = column_minima(&d);
            let base = global + b0;
            best.par_iter_mut()
                .zip(d.axis_iter(Axis(0)).into_par_iter())
                .for_each(|(b, row)| {
                    for (j, &v) in row.iter().enumerate() {
                        let nv = v / (alpha + mins[j]);
                        if nv < b.0 {
                            *b = (nv, base + j);
                        }
                    }
                });
            b0 += bn;
        }
        global += nyk;
    }
    Ok(MatchAssignment {
        keys: best.into_iter().map(|(_, j)| j).collect(),
    })
}

fn column_minima(d: &Array2<f64>) -> Vec<f64> {
    let mut mins = vec![f64::INFINITY; d.ncols()];
    for row in d.rows() {
        for (j, &v) in row.iter().enumerate() {
            if v < mins[j] {
                mins[j] = v;
            }
        }
    }
    mins
}

fn scale_columns(m: ArrayView2<f64>, scales: &[f64]) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.rows_mut() {
        for (v, s) in row.iter_mut().zip(scales) {
            *v *= s;
        }
    }
    out
}

/// Per-frame squared distances between two frame matrices, computed
/// as `|x|^2 + |y|^2 - 2xy` with the cross term as one parallel matrix
/// product.  Clamped at zero since cancellation can dip a hair below.
fn frame_gram(q: ArrayView2<f64>, k: ArrayView2<f64>) -> Array2<f64> {
    let (hx, hy) = (q.nrows(), k.nrows());
    let mut g = Array2::zeros((hx, hy));
    let kt = k.t();
    g.axis_chunks_iter_mut(Axis(0), GRAM_CHUNK)
        .into_par_iter()
        .zip(q.axis_chunks_iter(Axis(0), GRAM_CHUNK).into_par_iter())
        .for_each(|(mut gc, qc)| {
            general_mat_mul(-2.0, &qc, &kt, 0.0, &mut gc);
        });
    let qn: Vec<f64> = q.rows().into_iter().map(|r| r.dot(&r)).collect();
    let kn: Vec<f64> = k.rows().into_iter().map(|r| r.dot(&r)).collect();
    g.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(u, mut row)| {
            for (v, val) in row.iter_mut().enumerate() {
                *val = (*val + qn[u] + kn[v]).max(0.0);
            }
        });
    g
}

/// Window distances from frame distances: entry (i, j) is the sum of
/// `window` frame distances down a diagonal, maintained as a sliding
/// sum per diagonal.
fn window_sums_into(g: &Array2<f64>, window: usize, mut dst: ArrayViewMut2<f64>) {
    let (hx, hy) = (g.nrows(), g.ncols());
    let nx = hx + 1 - window;
    let ny = hy + 1 - window;
    debug_assert_eq!(dst.nrows(), nx);
    debug_assert_eq!(dst.ncols(), ny);
    let mut starts: Vec<(usize, usize)> = (0..hx).map(|i| (i, 0)).collect();
    starts.extend((1..hy).map(|j| (0, j)));
    for (i0, j0) in starts {
        let len = (hx - i0).min(hy - j0);
        if len < window {
            continue;
        }
        let mut acc = 0.0;
        for t in 0..window {
            acc += g[(i0 + t, j0 + t)];
        }
        if i0 < nx && j0 < ny {
            dst[(i0, j0)] = acc.max(0.0);
        }
        for o in 1..=(len - window) {
            acc += g[(i0 + o + window - 1, j0 + o + window - 1)] - g[(i0 + o - 1, j0 + o - 1)];
            let (i, j) = (i0 + o, j0 + o);
            if i < nx && j < ny {
                dst[(i, j)] = acc.max(0.0);
            }
        }
    }
}
