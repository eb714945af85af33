//! Confidence-based label augmentation and graph label propagation.
//!
//! High-confidence classifier predictions are merged into the ground-truth
//! set (ground truth wins conflicts), hard superpixel labels are rebuilt
//! from the merged set, and the propagation system
//! `T* = (Id - alpha S)^-1 T` with `S = D^-1/2 W D^-1/2` produces the
//! smoothed per-superpixel scores. Small systems are solved directly; large
//! ones by the geometric fixed-point iteration, and the two agree.

use crate::classmap::{ClassificationMap, Provenance};
use crate::cube::HsiCube;
use crate::error::{GrnnError, Result};
use crate::graph::SuperpixelGraph;
use crate::labelmap::LabelMap;
use crate::linalg::{self, Mat};
use crate::mlp::{MlpParams, Trace};
use crate::segmentation::SuperpixelSegmentation;

/// Above this node count the solver switches to fixed-point iteration.
pub const DIRECT_SOLVE_LIMIT: usize = 2000;

const FIXED_POINT_TOL: f64 = 1e-10;
const FIXED_POINT_MAX_ITERS: usize = 100_000;

#[derive(Debug, Clone)]
pub struct AugmentedLabels {
    pub base: LabelMap,
    pub confident: LabelMap,
    pub merged: LabelMap,
    pub tau: f64,
}

/// Pixels whose top-class probability reaches `tau`, labeled by the argmax
/// class (1-based).
pub fn confident_set(params: &MlpParams, reduced: &HsiCube, tau: f64) -> Result<LabelMap> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(GrnnError::InvalidInput(format!(
            "confidence threshold {tau} outside (0, 1)"
        )));
    }
    if reduced.bands != params.shape.input {
        return Err(GrnnError::InvalidInput("band/input mismatch".into()));
    }
    let c = params.shape.classes;
    let mut trace = Trace::new(&params.shape);
    let mut entries = Vec::new();
    for p in 0..reduced.n_pixels() {
        params.forward_trace(reduced.pixel_flat(p), &mut trace);
        let mut best = 0usize;
        for q in 1..c {
            if trace.probs[q] > trace.probs[best] {
                best = q;
            }
        }
        if trace.probs[best] >= tau {
            entries.push((p / reduced.width, p % reduced.width, best + 1));
        }
    }
    LabelMap::new(reduced.height, reduced.width, c, entries)
}

/// Union of two label sets; on conflicts the base (ground-truth) label wins.
pub fn merge_labels(base: &LabelMap, confident: &LabelMap) -> Result<LabelMap> {
    if base.height != confident.height || base.width != confident.width {
        return Err(GrnnError::InvalidInput("label map shape mismatch".into()));
    }
    let mut entries: Vec<(usize, usize, usize)> = base.entries().to_vec();
    for &(r, c, cls) in confident.entries() {
        if base.get(r, c).is_none() {
            entries.push((r, c, cls));
        }
    }
    LabelMap::new(
        base.height,
        base.width,
        base.num_classes.max(confident.num_classes),
        entries,
    )
}

/// Run the full augmentation step for a trained classifier.
pub fn augment(
    params: &MlpParams,
    reduced: &HsiCube,
    base: &LabelMap,
    tau: f64,
) -> Result<AugmentedLabels> {
    let confident = confident_set(params, reduced, tau)?;
    let merged = merge_labels(base, &confident)?;
    Ok(AugmentedLabels {
        base: base.clone(),
        confident,
        merged,
        tau,
    })
}

/// Smoothed scores `T* = (Id - alpha S)^-1 T`; solver chosen by size.
pub fn propagate(graph: &SuperpixelGraph, t: &Mat, alpha: f64) -> Result<Mat> {
    if graph.n <= DIRECT_SOLVE_LIMIT {
        propagate_direct(graph, t, alpha)
    } else {
        propagate_iterative(graph, t, alpha)
    }
}

fn check_inputs(graph: &SuperpixelGraph, t: &Mat, alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(GrnnError::InvalidInput(format!(
            "alpha {alpha} outside [0, 1)"
        )));
    }
    if t.rows != graph.n {
        return Err(GrnnError::InvalidInput("score rows != node count".into()));
    }
    if graph.degrees.iter().any(|&d| !(d > 0.0)) {
        return Err(GrnnError::InvalidInput("zero-degree node".into()));
    }
    Ok(())
}

/// Dense LU solve of the propagation system.
pub fn propagate_direct(graph: &SuperpixelGraph, t: &Mat, alpha: f64) -> Result<Mat> {
    check_inputs(graph, t, alpha)?;
    let n = graph.n;
    let mut a = Mat::identity(n);
    for (k, row) in graph.row_normalized().iter().enumerate() {
        for &(l, s) in row {
            *a.at_mut(k, l) -= alpha * s;
        }
    }
    let mut x = t.clone();
    linalg::lu_solve(&a, &mut x)?;
    Ok(x)
}

/// Fixed-point iteration `F <- alpha S F + T`, run until the update residual
/// drops below 1e-10; converges geometrically because the spectral radius of
/// `alpha S` is at most `alpha < 1`.
pub fn propagate_iterative(graph: &SuperpixelGraph, t: &Mat, alpha: f64) -> Result<Mat> {
    check_inputs(graph, t, alpha)?;
    let s = graph.row_normalized();
    let mut f = t.clone();
    let mut next = Mat::zeros(t.rows, t.cols);
    for _ in 0..FIXED_POINT_MAX_ITERS {
        let mut residual = 0.0f64;
        for (k, row) in s.iter().enumerate() {
            let dst = next.row_mut(k);
            dst.copy_from_slice(t.row(k));
            for &(l, w) in row {
                let src = f.row(l);
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += alpha * w * v;
                }
            }
        }
        for (a, b) in next.data.iter().zip(&f.data) {
            residual = residual.max((a - b).abs());
        }
        std::mem::swap(&mut f, &mut next);
        if residual < FIXED_POINT_TOL {
            return Ok(f);
        }
    }
    Err(GrnnError::Solve(
        "fixed-point propagation did not converge".into(),
    ))
}

/// Broadcast the per-superpixel argmax of `t_star` to every member pixel.
/// All-zero rows (no information reached the node) fall back to class 1 and
/// are flagged in the provenance channel.
pub fn final_labels(
    t_star: &Mat,
    seg: &SuperpixelSegmentation,
) -> Result<ClassificationMap> {
    if t_star.rows != seg.count {
        return Err(GrnnError::InvalidInput("score rows != superpixels".into()));
    }
    let c = t_star.cols;
    let mut class_of = vec![0u32; seg.count];
    let mut fallback = vec![false; seg.count];
    for k in 0..seg.count {
        let row = t_star.row(k);
        let mut best = 0usize;
        for q in 1..c {
            if row[q] > row[best] {
                best = q;
            }
        }
        class_of[k] = (best + 1) as u32;
        fallback[k] = row.iter().all(|&v| v == 0.0);
    }
    let mut map = ClassificationMap::unclassified(seg.height, seg.width, c);
    for p in 0..seg.n_pixels() {
        let k = seg.assignment[p] as usize;
        map.labels[p] = class_of[k];
        map.provenance[p] = if fallback[k] {
            Provenance::Fallback
        } else {
            Provenance::Predicted
        };
    }
    Ok(map)
}

/// Hard superpixel labels for a label set, as the N x c propagation input.
pub fn hard_label_matrix(
    labels: &LabelMap,
    seg: &SuperpixelSegmentation,
    c: usize,
) -> Result<Mat> {
    let sup = crate::labels::soft_labels(labels, seg, c)?;
    Ok(sup.hard)
}
