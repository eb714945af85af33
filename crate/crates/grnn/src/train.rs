//! Training of the pixelwise classifier under the five-term objective:
//! labeled-pixel cross-entropy, squared distance between soft superpixel
//! labels and mean superpixel predictions, a degree-normalized graph
//! smoothness energy, intra-superpixel prediction variance, and a negative
//! entropy penalty on the mean superpixel prediction.
//!
//! Gradients are exact reverse-mode accumulations through this fixed
//! computation graph; correctness is pinned by finite-difference tests.

use crate::cube::HsiCube;
use crate::error::{GrnnError, Result};
use crate::graph::SuperpixelGraph;
use crate::labelmap::LabelMap;
use crate::labels::SuperpixelLabels;
use crate::linalg::Mat;
use crate::mlp::{log_sum_exp, MlpParams, MlpShape, Trace};
use crate::segmentation::SuperpixelSegmentation;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the superpixel soft-label distance term.
    pub lambda_superpixel: f64,
    /// Weight of the graph smoothness energy.
    pub lambda_graph: f64,
    /// Weight of the intra-superpixel prediction variance.
    pub lambda_variance: f64,
    /// Weight of the (negative) entropy of the mean superpixel prediction.
    pub lambda_entropy: f64,
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            lambda_superpixel: 0.0,
            lambda_graph: 0.0,
            lambda_variance: 0.0,
            lambda_entropy: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_superpixel,
            self.lambda_graph,
            self.lambda_variance,
            self.lambda_entropy,
        ];
        if all.iter().any(|&l| !(l >= 0.0)) {
            return Err(GrnnError::InvalidInput(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn any_active(&self) -> bool {
        self.lambda_superpixel > 0.0
            || self.lambda_graph > 0.0
            || self.lambda_variance > 0.0
            || self.lambda_entropy > 0.0
    }
}

/// Weighted, signed contribution of each term; `total` is their sum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pixel_ce: f64,
    pub superpixel_dist: f64,
    pub graph_energy: f64,
    pub variance: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Immutable view of everything the objective needs.
pub struct TrainingSet<'a> {
    pub reduced: &'a HsiCube,
    pub seg: &'a SuperpixelSegmentation,
    pub graph: &'a SuperpixelGraph,
    pub sup: &'a SuperpixelLabels,
    /// (flat pixel index, 0-based class) of every labeled pixel.
    labeled: Vec<(usize, usize)>,
    /// 0-based class per pixel, or -1.
    label_of: Vec<i32>,
    sizes: Vec<usize>,
    num_classes: usize,
}

impl<'a> TrainingSet<'a> {
    pub fn new(
        reduced: &'a HsiCube,
        seg: &'a SuperpixelSegmentation,
        graph: &'a SuperpixelGraph,
        sup: &'a SuperpixelLabels,
        labels: &LabelMap,
        num_classes: usize,
    ) -> Result<Self> {
        if reduced.height != seg.height || reduced.width != seg.width {
            return Err(GrnnError::InvalidInput("cube/segmentation mismatch".into()));
        }
        if graph.n != seg.count || sup.soft.rows != seg.count {
            return Err(GrnnError::InvalidInput(
                "graph/labels do not match superpixel count".into(),
            ));
        }
        if sup.soft.cols != num_classes {
            return Err(GrnnError::InvalidInput("class count mismatch".into()));
        }
        let mut label_of = vec![-1i32; reduced.n_pixels()];
        let mut labeled = Vec::with_capacity(labels.len());
        for &(r, c, cls) in labels.entries() {
            if cls > num_classes {
                return Err(GrnnError::Label(format!(
                    "class {cls} exceeds configured count {num_classes}"
                )));
            }
            let p = r * seg.width + c;
            label_of[p] = (cls - 1) as i32;
            labeled.push((p, cls - 1));
        }
        Ok(TrainingSet {
            reduced,
            seg,
            graph,
            sup,
            labeled,
            label_of,
            sizes: seg.sizes(),
            num_classes,
        })
    }

    pub fn num_labeled_pixels(&self) -> usize {
        self.labeled.len()
    }
}

struct ForwardStats {
    /// Per-pixel class probabilities (empty rows when only labeled pixels
    /// were evaluated).
    probs: Mat,
    pixel_ce: f64,
    /// Mean prediction per superpixel.
    sup_mean: Mat,
    /// Mean of superpixel means.
    global_mean: Vec<f64>,
    full: bool,
}

fn forward_stats(
    params: &MlpParams,
    set: &TrainingSet,
    need_full: bool,
) -> Result<ForwardStats> {
    let n_px = set.reduced.n_pixels();
    let c = set.num_classes;
    let b = set.reduced.bands;
    let mut probs = Mat::zeros(if need_full { n_px } else { 0 }, c);

    let pixel_ce = if need_full {
        let parts: Vec<f64> = probs
            .data
            .par_chunks_mut(CHUNK * c)
            .enumerate()
            .map(|(chunk_idx, chunk)| {
                let start = chunk_idx * CHUNK;
                let mut trace = Trace::new(&params.shape);
                let mut ce = 0.0;
                for (off, row) in chunk.chunks_mut(c).enumerate() {
                    let p = start + off;
                    params.forward_trace(&set.reduced.data[p * b..(p + 1) * b], &mut trace);
                    row.copy_from_slice(&trace.probs);
                    let y = set.label_of[p];
                    if y >= 0 {
                        ce += log_sum_exp(&trace.logits) - trace.logits[y as usize];
                    }
                }
                ce
            })
            .collect();
        parts.into_iter().sum()
    } else {
        let mut trace = Trace::new(&params.shape);
        let mut ce = 0.0;
        for &(p, y) in &set.labeled {
            params.forward_trace(&set.reduced.data[p * b..(p + 1) * b], &mut trace);
            ce += log_sum_exp(&trace.logits) - trace.logits[y];
        }
        ce
    };

    let n_sup = set.seg.count;
    let mut sup_mean = Mat::zeros(n_sup, c);
    let mut global_mean = vec![0.0; c];
    if need_full {
        for p in 0..n_px {
            let row = sup_mean.row_mut(set.seg.assignment[p] as usize);
            for (dst, &v) in row.iter_mut().zip(probs.row(p)) {
                *dst += v;
            }
        }
        for k in 0..n_sup {
            let inv = 1.0 / set.sizes[k] as f64;
            for v in sup_mean.row_mut(k) {
                *v *= inv;
            }
        }
        for k in 0..n_sup {
            for (g, &v) in global_mean.iter_mut().zip(sup_mean.row(k)) {
                *g += v;
            }
        }
        for g in &mut global_mean {
            *g /= n_sup as f64;
        }
    }

    Ok(ForwardStats {
        probs,
        pixel_ce,
        sup_mean,
        global_mean,
        full: need_full,
    })
}

fn breakdown_from_stats(
    stats: &ForwardStats,
    set: &TrainingSet,
    weights: &LossWeights,
    unweighted_graph_term: bool,
) -> Result<LossBreakdown> {
    let c = set.num_classes;
    let n_sup = set.seg.count;

    let mut superpixel_dist = 0.0;
    let mut graph_energy = 0.0;
    let mut variance = 0.0;
    let mut entropy = 0.0;

    if stats.full {
        if weights.lambda_superpixel > 0.0 {
            for k in 0..n_sup {
                if set.sup.labeled_mask[k] {
                    superpixel_dist +=
                        crate::linalg::sq_dist(set.sup.soft.row(k), stats.sup_mean.row(k));
                }
            }
            superpixel_dist *= weights.lambda_superpixel;
        }

        if weights.lambda_graph > 0.0 {
            let u = normalized_rows(&stats.sup_mean, &set.graph.degrees);
            let mut raw = 0.0;
            if unweighted_graph_term {
                // sum over all ordered pairs of ||u_k - u_l||^2
                let mut sum_u = vec![0.0; c];
                let mut sum_sq = 0.0;
                for k in 0..n_sup {
                    let row = u.row(k);
                    for (s, &v) in sum_u.iter_mut().zip(row) {
                        *s += v;
                    }
                    sum_sq += crate::linalg::dot(row, row);
                }
                raw = 2.0 * (n_sup as f64 * sum_sq - crate::linalg::dot(&sum_u, &sum_u));
            } else {
                for (k, row) in set.graph.rows().iter().enumerate() {
                    for &(l, w) in row {
                        if k < l {
                            raw += 2.0 * w * crate::linalg::sq_dist(u.row(k), u.row(l));
                        }
                    }
                }
            }
            graph_energy = weights.lambda_graph * raw;
        }

        if weights.lambda_variance > 0.0 {
            let mut per_sup = vec![0.0; n_sup];
            for p in 0..stats.probs.rows {
                let k = set.seg.assignment[p] as usize;
                per_sup[k] += crate::linalg::sq_dist(stats.probs.row(p), stats.sup_mean.row(k));
            }
            for k in 0..n_sup {
                variance += per_sup[k] / set.sizes[k] as f64;
            }
            variance *= weights.lambda_variance;
        }

        if weights.lambda_entropy > 0.0 {
            let h: f64 = stats
                .global_mean
                .iter()
                .map(|&m| if m > 0.0 { -m * m.ln() } else { 0.0 })
                .sum();
            entropy = -weights.lambda_entropy * h;
        }
    }

    for (value, term) in [
        (stats.pixel_ce, "pixel_ce"),
        (superpixel_dist, "superpixel_dist"),
        (graph_energy, "graph_energy"),
        (variance, "variance"),
        (entropy, "entropy"),
    ] {
        if !value.is_finite() {
            return Err(GrnnError::NonFiniteLoss { term });
        }
    }

    Ok(LossBreakdown {
        pixel_ce: stats.pixel_ce,
        superpixel_dist,
        graph_energy,
        variance,
        entropy,
        total: stats.pixel_ce + superpixel_dist + graph_energy + variance + entropy,
    })
}

fn normalized_rows(sup_mean: &Mat, degrees: &[f64]) -> Mat {
    let mut u = sup_mean.clone();
    for k in 0..u.rows {
        let inv = 1.0 / degrees[k].sqrt();
        for v in u.row_mut(k) {
            *v *= inv;
        }
    }
    u
}

/// Total loss and its per-term breakdown at the given parameters.
pub fn loss(
    params: &MlpParams,
    set: &TrainingSet,
    weights: &LossWeights,
    unweighted_graph_term: bool,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let stats = forward_stats(params, set, weights.any_active())?;
    breakdown_from_stats(&stats, set, weights, unweighted_graph_term)
}

/// Loss breakdown plus the exact gradient of the total with respect to the
/// flat parameter vector.
pub fn loss_and_gradient(
    params: &MlpParams,
    set: &TrainingSet,
    weights: &LossWeights,
    unweighted_graph_term: bool,
) -> Result<(LossBreakdown, Vec<f64>)> {
    weights.validate()?;
    let full = weights.any_active();
    let stats = forward_stats(params, set, full)?;
    let breakdown = breakdown_from_stats(&stats, set, weights, unweighted_graph_term)?;

    let c = set.num_classes;
    let n_sup = set.seg.count;
    let n_px = set.reduced.n_pixels();
    let b = set.reduced.bands;

    // per-superpixel part of d loss / d phi_j, shared by all member pixels
    let mut sup_grad = Mat::zeros(if full { n_sup } else { 0 }, c);
    if full {
        if weights.lambda_superpixel > 0.0 {
            for k in 0..n_sup {
                if set.sup.labeled_mask[k] {
                    let t = set.sup.soft.row(k);
                    let mu = stats.sup_mean.row(k);
                    let dst = sup_grad.row_mut(k);
                    for q in 0..c {
                        dst[q] += 2.0 * weights.lambda_superpixel * (mu[q] - t[q]);
                    }
                }
            }
        }
        if weights.lambda_graph > 0.0 {
            let u = normalized_rows(&stats.sup_mean, &set.graph.degrees);
            if unweighted_graph_term {
                let mut sum_u = vec![0.0; c];
                for k in 0..n_sup {
                    for (s, &v) in sum_u.iter_mut().zip(u.row(k)) {
                        *s += v;
                    }
                }
                for k in 0..n_sup {
                    let inv_sqrt_d = 1.0 / set.graph.degrees[k].sqrt();
                    let uk = u.row(k);
                    let dst = sup_grad.row_mut(k);
                    for q in 0..c {
                        dst[q] += weights.lambda_graph
                            * 4.0
                            * (n_sup as f64 * uk[q] - sum_u[q])
                            * inv_sqrt_d;
                    }
                }
            } else {
                for (k, row) in set.graph.rows().iter().enumerate() {
                    let inv_sqrt_d = 1.0 / set.graph.degrees[k].sqrt();
                    for &(l, w) in row {
                        let (uk, ul) = (u.row(k), u.row(l));
                        for q in 0..c {
                            *sup_grad.at_mut(k, q) +=
                                weights.lambda_graph * 4.0 * w * (uk[q] - ul[q]) * inv_sqrt_d;
                        }
                    }
                }
            }
        }
        if weights.lambda_entropy > 0.0 {
            for k in 0..n_sup {
                let dst = sup_grad.row_mut(k);
                for q in 0..c {
                    let m = stats.global_mean[q];
                    dst[q] += weights.lambda_entropy * (m.ln() + 1.0) / n_sup as f64;
                }
            }
        }
    }

    // per-pixel backprop, fixed-size chunks summed in order for determinism
    let ranges: Vec<(usize, usize)> = (0..n_px)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(n_px)))
        .collect();
    let n_params = params.shape.n_params();
    let lambda_v = weights.lambda_variance;

    let partials: Vec<Vec<f64>> = ranges
        .par_iter()
        .map(|&(start, end)| {
            let mut grad = vec![0.0; n_params];
            let mut trace = Trace::new(&params.shape);
            let mut g = vec![0.0; c];
            let mut dlogits = vec![0.0; c];
            for p in start..end {
                let y = set.label_of[p];
                if !full && y < 0 {
                    continue;
                }
                let x = &set.reduced.data[p * b..(p + 1) * b];
                params.forward_trace(x, &mut trace);
                let phi = &trace.probs;

                if full {
                    let k = set.seg.assignment[p] as usize;
                    let inv_size = 1.0 / set.sizes[k] as f64;
                    let sup_row = sup_grad.row(k);
                    let mu = stats.sup_mean.row(k);
                    for q in 0..c {
                        g[q] = (sup_row[q] + 2.0 * lambda_v * (phi[q] - mu[q])) * inv_size;
                    }
                    // softmax jacobian: diag(phi) - phi phi^T
                    let phg = crate::linalg::dot(phi, &g);
                    for q in 0..c {
                        dlogits[q] = phi[q] * (g[q] - phg);
                    }
                } else {
                    dlogits.fill(0.0);
                }
                if y >= 0 {
                    for q in 0..c {
                        dlogits[q] += phi[q];
                    }
                    dlogits[y as usize] -= 1.0;
                }
                params.backward_from_logits(x, &trace, &dlogits, &mut grad);
            }
            grad
        })
        .collect();

    let mut grad = vec![0.0; n_params];
    for part in partials {
        for (g, p) in grad.iter_mut().zip(part) {
            *g += p;
        }
    }
    Ok((breakdown, grad))
}

/// Adam optimizer state for a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        AdamState {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update with bias correction.
pub fn adam_step(state: &mut AdamState, theta: &mut [f64], grad: &[f64]) {
    assert_eq!(theta.len(), grad.len());
    assert_eq!(theta.len(), state.first_moment.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..theta.len() {
        let g = grad[i];
        state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
        state.second_moment[i] =
            state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.first_moment[i] / bc1;
        let v_hat = state.second_moment[i] / bc2;
        theta[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub n_iter: usize,
    pub seed: u64,
    pub hidden1: usize,
    pub hidden2: usize,
    pub negative_slope: f64,
    pub learning_rate: f64,
    /// Literal reading of the graph term: unweighted sum over all pairs.
    pub unweighted_graph_term: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::zero(),
            n_iter: 400,
            seed: 0,
            hidden1: 196,
            hidden2: 160,
            negative_slope: 0.1,
            learning_rate: 1e-3,
            unweighted_graph_term: false,
        }
    }
}

/// Full-batch training; returns the final parameters and one loss breakdown
/// per iteration (evaluated before each step).
pub fn train(set: &TrainingSet, cfg: &TrainConfig) -> Result<(MlpParams, Vec<LossBreakdown>)> {
    if cfg.n_iter == 0 {
        return Err(GrnnError::InvalidInput("n_iter must be >= 1".into()));
    }
    let shape = MlpShape {
        input: set.reduced.bands,
        hidden1: cfg.hidden1,
        hidden2: cfg.hidden2,
        classes: set.num_classes,
    };
    let mut params = MlpParams::init(shape, cfg.negative_slope, cfg.seed);
    let mut adam = AdamState::new(shape.n_params(), cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.n_iter);
    for _ in 0..cfg.n_iter {
        let (breakdown, grad) =
            loss_and_gradient(&params, set, &cfg.weights, cfg.unweighted_graph_term)?;
        history.push(breakdown);
        adam_step(&mut adam, &mut params.theta, &grad);
    }
    Ok((params, history))
}

/// Write the loss history as CSV: one row per iteration.
pub fn write_history(history: &[LossBreakdown], path: &Path) -> Result<()> {
    let mut out = String::from("iter,total,pixel_ce,superpixel_dist,graph_energy,variance,entropy\n");
    for (i, h) in history.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i, h.total, h.pixel_ce, h.superpixel_dist, h.graph_energy, h.variance, h.entropy
        ));
    }
    std::fs::write(path, out).map_err(|e| GrnnError::io(path, e))
}
