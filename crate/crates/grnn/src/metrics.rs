//! Evaluation: confusion matrix, overall accuracy, per-class recall, and
//! Cohen's kappa over held-out labeled pixels, plus stratified label splits.

use crate::classmap::ClassificationMap;
use crate::error::{GrnnError, Result};
use crate::labelmap::LabelMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_classes: usize,
    /// Rows = truth class (1..=c); columns = predicted class (1..=c) plus a
    /// final column counting unclassified predictions.
    pub confusion: Vec<Vec<u64>>,
    /// Overall accuracy: trace / n_test.
    pub oa: f64,
    /// Cohen's kappa, chance-corrected agreement.
    pub kappa: f64,
    /// Set when expected agreement is 1 and kappa = 1 was assigned by
    /// convention.
    pub kappa_degenerate: bool,
    /// Per-class recall; `None` for classes absent from the truth set.
    pub per_class: Vec<Option<f64>>,
    pub n_test: u64,
}

/// Score a prediction map against held-out truth labels. Unclassified
/// predictions on test pixels count as errors (reserved confusion column).
pub fn evaluate(pred: &ClassificationMap, truth: &LabelMap) -> Result<EvalReport> {
    if pred.height != truth.height || pred.width != truth.width {
        return Err(GrnnError::InvalidInput("map/labels shape mismatch".into()));
    }
    if truth.is_empty() {
        return Err(GrnnError::InvalidInput("empty truth set".into()));
    }
    let c = truth.num_classes.max(pred.num_classes);
    let mut confusion = vec![vec![0u64; c + 1]; c];
    for &(r, col, cls) in truth.entries() {
        let p = pred.label(r, col) as usize;
        let col_idx = if p == 0 { c } else { p - 1 };
        confusion[cls - 1][col_idx] += 1;
    }
    report_from_confusion(confusion)
}

/// Build the report from a filled confusion matrix (last column = unclassified).
pub fn report_from_confusion(confusion: Vec<Vec<u64>>) -> Result<EvalReport> {
    let c = confusion.len();
    let n: u64 = confusion.iter().flatten().sum();
    if n == 0 {
        return Err(GrnnError::InvalidInput("empty confusion matrix".into()));
    }
    let nf = n as f64;
    let mut trace = 0u64;
    let mut row_sums = vec![0u64; c];
    let mut col_sums = vec![0u64; c];
    for (i, row) in confusion.iter().enumerate() {
        trace += row[i];
        row_sums[i] = row.iter().sum();
        for (j, &v) in row.iter().take(c).enumerate() {
            col_sums[j] += v;
        }
    }
    let oa = trace as f64 / nf;
    // expected agreement from marginal products; the unclassified column has
    // no truth row, so it contributes nothing
    let pe: f64 = row_sums
        .iter()
        .zip(&col_sums)
        .map(|(&r, &p)| (r as f64 / nf) * (p as f64 / nf))
        .sum();
    let (kappa, kappa_degenerate) = if (1.0 - pe).abs() < 1e-15 {
        // only possible when truth and prediction are the same single class
        (1.0, true)
    } else {
        ((oa - pe) / (1.0 - pe), false)
    };
    let per_class = (0..c)
        .map(|i| {
            if row_sums[i] == 0 {
                None
            } else {
                Some(confusion[i][i] as f64 / row_sums[i] as f64)
            }
        })
        .collect();
    Ok(EvalReport {
        num_classes: c,
        confusion,
        oa,
        kappa,
        kappa_degenerate,
        per_class,
        n_test: n,
    })
}

impl EvalReport {
    /// Human-readable text table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "n_test = {}, OA = {:.4}, kappa = {:.4}{}\n",
            self.n_test,
            self.oa,
            self.kappa,
            if self.kappa_degenerate {
                " (degenerate: expected agreement 1)"
            } else {
                ""
            }
        ));
        out.push_str("per-class recall:\n");
        for (i, r) in self.per_class.iter().enumerate() {
            match r {
                Some(v) => out.push_str(&format!("  class {:>3}: {:.4}\n", i + 1, v)),
                None => out.push_str(&format!("  class {:>3}: (absent)\n", i + 1)),
            }
        }
        out.push_str("confusion (rows = truth, last col = unclassified):\n");
        for row in &self.confusion {
            out.push_str("  ");
            for v in row {
                out.push_str(&format!("{v:>6} "));
            }
            out.push('\n');
        }
        out
    }
}

/// How to divide labeled pixels into train and test sets.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// Fraction of each class assigned to training.
    Fraction(f64),
    /// Fixed number of training pixels per class.
    PerClassCount(usize),
}

/// Stratified split, deterministic per seed. Fractional per-class counts are
/// floored and the remainders granted to the largest classes.
pub fn split_labels(
    labels: &LabelMap,
    spec: SplitSpec,
    seed: u64,
) -> Result<(LabelMap, LabelMap)> {
    let by_class = labels.by_class();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // per-class training counts
    let mut class_sizes: Vec<(usize, usize)> = by_class
        .iter()
        .map(|(&cls, pixels)| (cls, pixels.len()))
        .collect();
    let mut take: Vec<(usize, usize)> = match spec {
        SplitSpec::PerClassCount(k) => {
            if k == 0 {
                return Err(GrnnError::InvalidInput("per-class count must be >= 1".into()));
            }
            for &(cls, size) in &class_sizes {
                if size < k {
                    return Err(GrnnError::Label(format!(
                        "class {cls} has only {size} labeled pixels, requested {k}"
                    )));
                }
            }
            class_sizes.iter().map(|&(cls, _)| (cls, k)).collect()
        }
        SplitSpec::Fraction(f) => {
            if !(0.0 < f && f < 1.0) {
                return Err(GrnnError::InvalidInput(format!(
                    "train fraction {f} outside (0, 1)"
                )));
            }
            let total: usize = class_sizes.iter().map(|&(_, s)| s).sum();
            let target = (f * total as f64).round() as usize;
            let mut take: Vec<(usize, usize)> = class_sizes
                .iter()
                .map(|&(cls, s)| (cls, (f * s as f64).floor() as usize))
                .collect();
            let mut assigned: usize = take.iter().map(|&(_, k)| k).sum();
            // grant remainders to the largest classes first
            class_sizes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            'outer: while assigned < target {
                let mut progressed = false;
                for &(cls, size) in &class_sizes {
                    if assigned >= target {
                        break 'outer;
                    }
                    let entry = take.iter_mut().find(|(c, _)| *c == cls).unwrap();
                    if entry.1 < size {
                        entry.1 += 1;
                        assigned += 1;
                        progressed = true;
                    }
                }
                if !progressed {
                    break;
                }
            }
            take
        }
    };
    take.sort_unstable();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (cls, k) in take {
        let mut pixels = by_class[&cls].clone();
        pixels.shuffle(&mut rng);
        for (i, (r, c)) in pixels.into_iter().enumerate() {
            if i < k {
                train.push((r, c, cls));
            } else {
                test.push((r, c, cls));
            }
        }
    }
    Ok((
        LabelMap::new(labels.height, labels.width, labels.num_classes, train)?,
        LabelMap::new(labels.height, labels.width, labels.num_classes, test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn map_from(labels: &[(usize, usize, u32)], h: usize, w: usize, c: usize) -> ClassificationMap {
        let mut map = ClassificationMap::unclassified(h, w, c);
        for &(r, col, cls) in labels {
            map.labels[r * w + col] = cls;
        }
        map
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let truth = LabelMap::new(1, 4, 2, vec![(0, 0, 1), (0, 1, 1), (0, 2, 2), (0, 3, 2)])
            .unwrap();
        let pred = map_from(&[(0, 0, 1), (0, 1, 1), (0, 2, 2), (0, 3, 2)], 1, 4, 2);
        let r = evaluate(&pred, &truth).unwrap();
        assert_eq!(r.oa, 1.0);
        assert_eq!(r.kappa, 1.0);
        assert!(!r.kappa_degenerate);
    }

    #[test]
    fn hand_computed_six_pixel_case() {
        // truth [1,1,1,2,2,2], pred [1,1,2,2,2,2]: OA = 5/6, pe = 1/2, kappa = 2/3
        let truth = LabelMap::new(
            1,
            6,
            2,
            vec![(0, 0, 1), (0, 1, 1), (0, 2, 1), (0, 3, 2), (0, 4, 2), (0, 5, 2)],
        )
        .unwrap();
        let pred = map_from(
            &[(0, 0, 1), (0, 1, 1), (0, 2, 2), (0, 3, 2), (0, 4, 2), (0, 5, 2)],
            1,
            6,
            2,
        );
        let r = evaluate(&pred, &truth).unwrap();
        assert!((r.oa - 5.0 / 6.0).abs() < 1e-15);
        assert!((r.kappa - 2.0 / 3.0).abs() < 1e-12, "kappa = {}", r.kappa);
    }

    #[test]
    fn degenerate_single_class_gets_kappa_one() {
        let truth = LabelMap::new(1, 3, 1, vec![(0, 0, 1), (0, 1, 1), (0, 2, 1)]).unwrap();
        let pred = map_from(&[(0, 0, 1), (0, 1, 1), (0, 2, 1)], 1, 3, 1);
        let r = evaluate(&pred, &truth).unwrap();
        assert_eq!(r.kappa, 1.0);
        assert!(r.kappa_degenerate);
    }

    #[test]
    fn unclassified_prediction_counts_as_error() {
        let truth = LabelMap::new(1, 2, 2, vec![(0, 0, 1), (0, 1, 2)]).unwrap();
        let pred = map_from(&[(0, 0, 1)], 1, 2, 2); // second pixel left at 0
        let r = evaluate(&pred, &truth).unwrap();
        assert!((r.oa - 0.5).abs() < 1e-15);
        assert_eq!(r.confusion[1][2], 1); // truth 2, reserved column
    }

    #[test]
    fn matches_brute_force_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..100 {
            let c = rng.random_range(2..=5usize);
            let n = rng.random_range(5..=60usize);
            let w = n;
            let mut entries = Vec::new();
            let mut preds = Vec::new();
            for i in 0..n {
                let t = rng.random_range(1..=c);
                // prediction may be 0 = unclassified
                let p = rng.random_range(0..=c);
                entries.push((0usize, i, t));
                preds.push((0usize, i, p as u32));
            }
            let truth = LabelMap::new(1, w, c, entries.clone()).unwrap();
            let pred = map_from(&preds, 1, w, c);
            let r = evaluate(&pred, &truth).unwrap();

            // brute force: recount every pair
            let mut correct = 0usize;
            for (&(_, i, t), &(_, _, p)) in entries.iter().zip(&preds) {
                if p as usize == t {
                    correct += 1;
                }
                let _ = i;
            }
            let oa = correct as f64 / n as f64;
            assert_eq!(r.oa, oa);

            let mut pe = 0.0;
            for q in 1..=c {
                let tq = entries.iter().filter(|e| e.2 == q).count() as f64 / n as f64;
                let pq = preds.iter().filter(|e| e.2 as usize == q).count() as f64 / n as f64;
                pe += tq * pq;
            }
            if (1.0 - pe).abs() >= 1e-15 {
                let kappa = (oa - pe) / (1.0 - pe);
                assert!((r.kappa - kappa).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oa_invariant_under_consistent_relabeling() {
        let truth = LabelMap::new(
            1,
            5,
            3,
            vec![(0, 0, 1), (0, 1, 2), (0, 2, 3), (0, 3, 1), (0, 4, 2)],
        )
        .unwrap();
        let pred = map_from(&[(0, 0, 1), (0, 1, 3), (0, 2, 3), (0, 3, 2), (0, 4, 2)], 1, 5, 3);
        let r1 = evaluate(&pred, &truth).unwrap();

        // permutation 1->2, 2->3, 3->1 applied to both
        let perm = |x: usize| x % 3 + 1;
        let truth2 = LabelMap::new(
            1,
            5,
            3,
            truth
                .entries()
                .iter()
                .map(|&(r, c, cls)| (r, c, perm(cls)))
                .collect(),
        )
        .unwrap();
        let pred2 = map_from(
            &[(0, 0, 2), (0, 1, 1), (0, 2, 1), (0, 3, 3), (0, 4, 3)],
            1,
            5,
            3,
        );
        let r2 = evaluate(&pred2, &truth2).unwrap();
        assert_eq!(r1.oa, r2.oa);
        assert!((r1.kappa - r2.kappa).abs() < 1e-12);
    }

    fn labels_for_split() -> LabelMap {
        let mut entries = Vec::new();
        for i in 0..100 {
            entries.push((i / 10, i % 10, 1));
        }
        LabelMap::new(10, 10, 1, entries).unwrap()
    }

    #[test]
    fn fraction_split_half() {
        let labels = labels_for_split();
        let (train, test) = split_labels(&labels, SplitSpec::Fraction(0.5), 1).unwrap();
        assert_eq!(train.len(), 50);
        assert_eq!(test.len(), 50);
    }

    #[test]
    fn per_class_count_exact() {
        let mut entries = Vec::new();
        for i in 0..30 {
            entries.push((0, i, 1 + i % 3));
        }
        let labels = LabelMap::new(1, 30, 3, entries).unwrap();
        let (train, test) = split_labels(&labels, SplitSpec::PerClassCount(10), 5).unwrap();
        assert_eq!(train.len(), 30);
        assert_eq!(test.len(), 0);
        let (train, _) = split_labels(&labels, SplitSpec::PerClassCount(4), 5).unwrap();
        let counts = train.class_counts();
        assert_eq!(counts, vec![4, 4, 4]);
    }

    #[test]
    fn per_class_count_too_large_fails() {
        let labels = LabelMap::new(1, 3, 1, vec![(0, 0, 1), (0, 1, 1), (0, 2, 1)]).unwrap();
        assert!(split_labels(&labels, SplitSpec::PerClassCount(4), 0).is_err());
    }

    #[test]
    fn split_deterministic_and_disjoint() {
        let mut entries = Vec::new();
        for i in 0..60 {
            entries.push((i / 8, i % 8, 1 + i % 4));
        }
        let labels = LabelMap::new(8, 8, 4, entries).unwrap();
        let (tr1, te1) = split_labels(&labels, SplitSpec::Fraction(0.3), 77).unwrap();
        let (tr2, te2) = split_labels(&labels, SplitSpec::Fraction(0.3), 77).unwrap();
        assert_eq!(tr1.entries(), tr2.entries());
        assert_eq!(te1.entries(), te2.entries());

        // disjoint, union = input
        let mut all: Vec<_> = tr1.entries().to_vec();
        all.extend_from_slice(te1.entries());
        all.sort_unstable();
        assert_eq!(all, labels.entries());

        let (tr3, _) = split_labels(&labels, SplitSpec::Fraction(0.3), 78).unwrap();
        assert_ne!(tr1.entries(), tr3.entries());
    }
}
