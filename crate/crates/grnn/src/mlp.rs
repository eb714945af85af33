//! Pixelwise classifier: a two-hidden-layer MLP with leaky-ReLU activations
//! and a softmax head, stored as one flat f64 parameter vector so the
//! optimizer and gradient checks can treat it uniformly.

use crate::container;
use crate::cube::HsiCube;
use crate::error::{GrnnError, Result};
use crate::linalg::Mat;
use crate::segmentation::SuperpixelSegmentation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Layer sizes; the flat parameter layout is
/// `[w1 (h1 x b) | b1 | w2 (h2 x h1) | b2 | w3 (c x h2) | b3]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
}

impl MlpShape {
    pub fn n_params(&self) -> usize {
        (self.input + 1) * self.hidden1
            + (self.hidden1 + 1) * self.hidden2
            + (self.hidden2 + 1) * self.classes
    }

    pub fn offsets(&self) -> [usize; 6] {
        let w1 = 0;
        let b1 = w1 + self.hidden1 * self.input;
        let w2 = b1 + self.hidden1;
        let b2 = w2 + self.hidden2 * self.hidden1;
        let w3 = b2 + self.hidden2;
        let b3 = w3 + self.classes * self.hidden2;
        [w1, b1, w2, b2, w3, b3]
    }
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    pub shape: MlpShape,
    /// Leaky-ReLU negative slope.
    pub negative_slope: f64,
    /// Seed used by [`MlpParams::init`]; `None` for hand-built parameters.
    pub init_seed: Option<u64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    input: usize,
    hidden1: usize,
    hidden2: usize,
    classes: usize,
    negative_slope: f64,
    seed: Option<u64>,
    dtype: String,
    byte_order: String,
}

/// Scratch space for a single forward/backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub pre1: Vec<f64>,
    pub act1: Vec<f64>,
    pub pre2: Vec<f64>,
    pub act2: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Trace {
    pub fn new(shape: &MlpShape) -> Self {
        Trace {
            pre1: vec![0.0; shape.hidden1],
            act1: vec![0.0; shape.hidden1],
            pre2: vec![0.0; shape.hidden2],
            act2: vec![0.0; shape.hidden2],
            logits: vec![0.0; shape.classes],
            probs: vec![0.0; shape.classes],
        }
    }
}

#[inline]
pub fn leaky_relu(u: f64, slope: f64) -> f64 {
    if u > 0.0 {
        u
    } else {
        slope * u
    }
}

impl MlpParams {
    /// Xavier-uniform weights, zero biases; deterministic per seed.
    pub fn init(shape: MlpShape, negative_slope: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; shape.n_params()];
        let [w1, _, w2, _, w3, _] = shape.offsets();
        let mut fill = |start: usize, rows: usize, cols: usize, theta: &mut Vec<f64>| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            for v in &mut theta[start..start + rows * cols] {
                *v = rng.random_range(-a..a);
            }
        };
        fill(w1, shape.hidden1, shape.input, &mut theta);
        fill(w2, shape.hidden2, shape.hidden1, &mut theta);
        fill(w3, shape.classes, shape.hidden2, &mut theta);
        MlpParams {
            shape,
            negative_slope,
            init_seed: Some(seed),
            theta,
        }
    }

    /// Forward pass through `trace`; `probs` ends up on the simplex.
    pub fn forward_trace(&self, x: &[f64], trace: &mut Trace) {
        let s = &self.shape;
        let [w1, b1, w2, b2, w3, b3] = s.offsets();
        let th = &self.theta;
        for i in 0..s.hidden1 {
            let row = &th[w1 + i * s.input..w1 + (i + 1) * s.input];
            let mut acc = th[b1 + i];
            for (w, &xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            trace.pre1[i] = acc;
            trace.act1[i] = leaky_relu(acc, self.negative_slope);
        }
        for i in 0..s.hidden2 {
            let row = &th[w2 + i * s.hidden1..w2 + (i + 1) * s.hidden1];
            let mut acc = th[b2 + i];
            for (w, &a) in row.iter().zip(&trace.act1) {
                acc += w * a;
            }
            trace.pre2[i] = acc;
            trace.act2[i] = leaky_relu(acc, self.negative_slope);
        }
        for i in 0..s.classes {
            let row = &th[w3 + i * s.hidden2..w3 + (i + 1) * s.hidden2];
            let mut acc = th[b3 + i];
            for (w, &a) in row.iter().zip(&trace.act2) {
                acc += w * a;
            }
            trace.logits[i] = acc;
        }
        softmax(&trace.logits, &mut trace.probs);
    }

    /// Class probabilities for one input.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut trace = Trace::new(&self.shape);
        self.forward_trace(x, &mut trace);
        trace.probs
    }

    /// Accumulate `d loss / d theta` into `grad` given `d loss / d logits`,
    /// reusing the activations left in `trace` by `forward_trace`.
    pub fn backward_from_logits(
        &self,
        x: &[f64],
        trace: &Trace,
        dlogits: &[f64],
        grad: &mut [f64],
    ) {
        let s = &self.shape;
        let [w1, b1, w2, b2, w3, b3] = s.offsets();
        let th = &self.theta;

        let mut delta2 = vec![0.0; s.hidden2];
        for i in 0..s.classes {
            let d = dlogits[i];
            grad[b3 + i] += d;
            let wrow = &th[w3 + i * s.hidden2..w3 + (i + 1) * s.hidden2];
            let grow = &mut grad[w3 + i * s.hidden2..w3 + (i + 1) * s.hidden2];
            for j in 0..s.hidden2 {
                grow[j] += d * trace.act2[j];
                delta2[j] += d * wrow[j];
            }
        }
        for (j, d) in delta2.iter_mut().enumerate() {
            *d *= if trace.pre2[j] > 0.0 {
                1.0
            } else {
                self.negative_slope
            };
        }

        let mut delta1 = vec![0.0; s.hidden1];
        for i in 0..s.hidden2 {
            let d = delta2[i];
            grad[b2 + i] += d;
            let wrow = &th[w2 + i * s.hidden1..w2 + (i + 1) * s.hidden1];
            let grow = &mut grad[w2 + i * s.hidden1..w2 + (i + 1) * s.hidden1];
            for j in 0..s.hidden1 {
                grow[j] += d * trace.act1[j];
                delta1[j] += d * wrow[j];
            }
        }
        for (j, d) in delta1.iter_mut().enumerate() {
            *d *= if trace.pre1[j] > 0.0 {
                1.0
            } else {
                self.negative_slope
            };
        }

        for i in 0..s.hidden1 {
            let d = delta1[i];
            grad[b1 + i] += d;
            let grow = &mut grad[w1 + i * s.input..w1 + (i + 1) * s.input];
            for j in 0..s.input {
                grow[j] += d * x[j];
            }
        }
    }

    pub fn save(&self, header_path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            input: self.shape.input,
            hidden1: self.shape.hidden1,
            hidden2: self.shape.hidden2,
            classes: self.shape.classes,
            negative_slope: self.negative_slope,
            seed: self.init_seed,
            dtype: "f32".into(),
            byte_order: "little".into(),
        };
        container::write_header(header_path, &header)?;
        container::write_raw_f32(header_path, &self.theta)
    }

    pub fn load(header_path: &Path) -> Result<Self> {
        let header: CheckpointHeader = container::read_header(header_path)?;
        let shape = MlpShape {
            input: header.input,
            hidden1: header.hidden1,
            hidden2: header.hidden2,
            classes: header.classes,
        };
        let theta = container::read_raw_f32(header_path, shape.n_params())?;
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(GrnnError::NonFinite {
                context: "checkpoint parameters".into(),
                index: i,
            });
        }
        Ok(MlpParams {
            shape,
            negative_slope: header.negative_slope,
            init_seed: header.seed,
            theta,
        })
    }
}

pub fn softmax(logits: &[f64], probs: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(logits) {
        *p = (z - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
}

/// `logsumexp(logits)`, the stable normalizer used by the cross-entropy term.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Mean class probabilities per superpixel (over all member pixels).
pub fn superpixel_prediction(
    params: &MlpParams,
    reduced: &HsiCube,
    seg: &SuperpixelSegmentation,
) -> Result<Mat> {
    if reduced.height != seg.height || reduced.width != seg.width {
        return Err(GrnnError::InvalidInput(
            "segmentation does not match cube shape".into(),
        ));
    }
    let c = params.shape.classes;
    let mut out = Mat::zeros(seg.count, c);
    let mut trace = Trace::new(&params.shape);
    for p in 0..reduced.n_pixels() {
        params.forward_trace(reduced.pixel_flat(p), &mut trace);
        let row = out.row_mut(seg.assignment[p] as usize);
        for (dst, &v) in row.iter_mut().zip(&trace.probs) {
            *dst += v;
        }
    }
    for (k, &size) in seg.sizes().iter().enumerate() {
        let inv = 1.0 / size as f64;
        for v in out.row_mut(k) {
            *v *= inv;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        let tiny = MlpShape {
            input: 1,
            hidden1: 1,
            hidden2: 1,
            classes: 1,
        };
        assert_eq!(tiny.n_params(), 6);

        let preset = MlpShape {
            input: 30,
            hidden1: 196,
            hidden2: 160,
            classes: 16,
        };
        assert_eq!(
            preset.n_params(),
            30 * 196 + 196 + 196 * 160 + 160 + 160 * 16 + 16
        );
        assert_eq!(preset.n_params(), 40_172);
    }

    #[test]
    fn leaky_relu_slope() {
        assert_eq!(leaky_relu(-1.0, 0.1), -0.1);
        assert_eq!(leaky_relu(2.0, 0.1), 2.0);
        assert_eq!(leaky_relu(0.0, 0.1), 0.0);
    }

    #[test]
    fn init_deterministic_per_seed() {
        let shape = MlpShape {
            input: 3,
            hidden1: 4,
            hidden2: 4,
            classes: 2,
        };
        let a = MlpParams::init(shape, 0.1, 42);
        let b = MlpParams::init(shape, 0.1, 42);
        assert_eq!(a.theta, b.theta);
        let c = MlpParams::init(shape, 0.1, 43);
        assert_ne!(a.theta, c.theta);
    }

    #[test]
    fn zero_params_give_uniform_output() {
        let shape = MlpShape {
            input: 3,
            hidden1: 4,
            hidden2: 5,
            classes: 4,
        };
        let params = MlpParams {
            shape,
            negative_slope: 0.1,
            init_seed: None,
            theta: vec![0.0; shape.n_params()],
        };
        let probs = params.forward(&[1.0, -2.0, 0.5]);
        for p in probs {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn outputs_on_simplex() {
        let shape = MlpShape {
            input: 5,
            hidden1: 8,
            hidden2: 6,
            classes: 3,
        };
        let params = MlpParams::init(shape, 0.1, 7);
        for i in 0..50 {
            let x: Vec<f64> = (0..5).map(|j| ((i * 5 + j) as f64 * 0.7).sin() * 3.0).collect();
            let probs = params.forward(&x);
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn softmax_stable_for_large_logits() {
        let mut probs = vec![0.0; 3];
        softmax(&[1000.0, 999.0, -1000.0], &mut probs);
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(probs[0] > probs[1] && probs[1] > probs[2]);
    }

    #[test]
    fn superpixel_prediction_averages() {
        let shape = MlpShape {
            input: 2,
            hidden1: 3,
            hidden2: 3,
            classes: 2,
        };
        let params = MlpParams::init(shape, 0.1, 1);
        // two identical pixels in one superpixel -> row equals single forward
        let cube = HsiCube::new(1, 2, 2, vec![0.3, -0.7, 0.3, -0.7]).unwrap();
        let seg = SuperpixelSegmentation {
            height: 1,
            width: 2,
            count: 1,
            assignment: vec![0, 0],
        };
        let pred = superpixel_prediction(&params, &cube, &seg).unwrap();
        let single = params.forward(&[0.3, -0.7]);
        for (a, b) in pred.row(0).iter().zip(&single) {
            assert!((a - b).abs() < 1e-15);
        }

        // rows stay on the simplex
        let cube = HsiCube::new(2, 2, 2, vec![0.1, 0.2, -0.5, 1.0, 2.0, -1.0, 0.0, 0.3]).unwrap();
        let seg = SuperpixelSegmentation {
            height: 2,
            width: 2,
            count: 2,
            assignment: vec![0, 0, 1, 1],
        };
        let pred = superpixel_prediction(&params, &cube, &seg).unwrap();
        for k in 0..2 {
            let sum: f64 = pred.row(k).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let shape = MlpShape {
            input: 3,
            hidden1: 4,
            hidden2: 4,
            classes: 2,
        };
        let params = MlpParams::init(shape, 0.1, 5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        params.save(&p).unwrap();
        let back = MlpParams::load(&p).unwrap();
        assert_eq!(back.shape, shape);
        for (a, b) in back.theta.iter().zip(&params.theta) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
