//! One-hot encodings and soft/hard superpixel label matrices.
//!
//! A superpixel is labeled iff it contains at least one labeled pixel. Soft
//! rows are the class frequencies among its labeled pixels; hard rows are
//! the one-hot argmax (ties to the lowest class). Unlabeled rows stay zero.

use crate::error::{GrnnError, Result};
use crate::labelmap::LabelMap;
use crate::linalg::Mat;
use crate::segmentation::SuperpixelSegmentation;

/// One-hot encoding of class `y` in 1..=c.
pub fn one_hot(y: usize, c: usize) -> Result<Vec<f64>> {
    if y < 1 || y > c {
        return Err(GrnnError::Label(format!("class {y} out of range 1..={c}")));
    }
    let mut v = vec![0.0; c];
    v[y - 1] = 1.0;
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct SuperpixelLabels {
    /// N x c; labeled rows lie on the probability simplex, others are zero.
    pub soft: Mat,
    /// N x c; one-hot rows for labeled superpixels, zero otherwise.
    pub hard: Mat,
    pub labeled_mask: Vec<bool>,
}

impl SuperpixelLabels {
    pub fn num_labeled(&self) -> usize {
        self.labeled_mask.iter().filter(|&&m| m).count()
    }
}

/// Soft labels: per-superpixel mean of the one-hot encodings of its labeled
/// pixels. The returned `hard` matrix is filled in as well.
pub fn soft_labels(
    labels: &LabelMap,
    seg: &SuperpixelSegmentation,
    c: usize,
) -> Result<SuperpixelLabels> {
    if labels.height != seg.height || labels.width != seg.width {
        return Err(GrnnError::InvalidInput(
            "label map does not match segmentation shape".into(),
        ));
    }
    if labels.num_classes > c {
        return Err(GrnnError::Label(format!(
            "label map has {} classes, expected at most {c}",
            labels.num_classes
        )));
    }
    let n = seg.count;
    let mut soft = Mat::zeros(n, c);
    let mut counts = vec![0usize; n];
    for &(r, col, cls) in labels.entries() {
        let k = seg.label(r, col) as usize;
        soft.row_mut(k)[cls - 1] += 1.0;
        counts[k] += 1;
    }
    let mut labeled_mask = vec![false; n];
    for k in 0..n {
        if counts[k] > 0 {
            labeled_mask[k] = true;
            let inv = 1.0 / counts[k] as f64;
            for v in soft.row_mut(k) {
                *v *= inv;
            }
        }
    }
    let mut out = SuperpixelLabels {
        soft,
        hard: Mat::zeros(n, c),
        labeled_mask,
    };
    hard_labels(&mut out);
    Ok(out)
}

/// Recompute the hard matrix from the soft one: per labeled row, one-hot at
/// the argmax, ties broken by the lowest class index.
pub fn hard_labels(labels: &mut SuperpixelLabels) {
    let c = labels.soft.cols;
    for k in 0..labels.soft.rows {
        let hard = labels.hard.row_mut(k);
        hard.fill(0.0);
        if !labels.labeled_mask[k] {
            continue;
        }
        let soft = labels.soft.row(k);
        let mut best = 0usize;
        for q in 1..c {
            if soft[q] > soft[best] {
                best = q;
            }
        }
        hard[best] = 1.0;
    }
}
