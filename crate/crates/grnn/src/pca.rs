//! Spectral dimensionality reduction: project each pixel onto the leading
//! principal components of the band covariance, keeping enough components
//! to reach a cumulative explained-variance target.

use crate::cube::HsiCube;
use crate::container;
use crate::error::{GrnnError, Result};
use crate::linalg::{self, Mat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Fitted projection model.
///
/// Rows of `components` are orthonormal (to 1e-8 as fitted; file round-trips
/// are f32 and therefore a little looser).
#[derive(Debug, Clone)]
pub struct PcaModel {
    /// Per-band mean of the training pixels.
    pub mean: Vec<f64>,
    /// Per-band scale divisor; all ones unless fitted with standardization.
    pub scale: Vec<f64>,
    /// `n_components x bands`, row k = k-th principal axis.
    pub components: Mat,
    /// Descending, non-negative.
    pub explained_variance: Vec<f64>,
    /// Total variance of the (scaled) training data.
    pub total_variance: f64,
    /// Set when the data had (numerically) zero variance; the model then
    /// keeps a single zero-variance component and projects everything to 0.
    pub degenerate: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct PcaHeader {
    bands: usize,
    n_components: usize,
    total_variance: f64,
    degenerate: bool,
    dtype: String,
    byte_order: String,
    layout: String,
}

impl PcaModel {
    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.rows
    }

    /// Serialize as JSON header + f32 blob `[mean | scale | components | explained_variance]`.
    pub fn save(&self, header_path: &Path) -> Result<()> {
        let header = PcaHeader {
            bands: self.bands(),
            n_components: self.n_components(),
            total_variance: self.total_variance,
            degenerate: self.degenerate,
            dtype: "f32".into(),
            byte_order: "little".into(),
            layout: "mean|scale|components|explained_variance".into(),
        };
        container::write_header(header_path, &header)?;
        let mut blob = Vec::new();
        blob.extend_from_slice(&self.mean);
        blob.extend_from_slice(&self.scale);
        blob.extend_from_slice(&self.components.data);
        blob.extend_from_slice(&self.explained_variance);
        container::write_raw_f32(header_path, &blob)
    }

    pub fn load(header_path: &Path) -> Result<Self> {
        let header: PcaHeader = container::read_header(header_path)?;
        let (bb, k) = (header.bands, header.n_components);
        let blob = container::read_raw_f32(header_path, bb + bb + k * bb + k)?;
        let mean = blob[..bb].to_vec();
        let scale = blob[bb..2 * bb].to_vec();
        let components = Mat {
            rows: k,
            cols: bb,
            data: blob[2 * bb..2 * bb + k * bb].to_vec(),
        };
        let explained_variance = blob[2 * bb + k * bb..].to_vec();
        Ok(PcaModel {
            mean,
            scale,
            components,
            explained_variance,
            total_variance: header.total_variance,
            degenerate: header.degenerate,
        })
    }
}

/// Fit a projection preserving `variance_target` of the data variance.
///
/// The covariance is computed over all pixels with the sample (1/(n-1))
/// convention; bands are mean-centered, and divided by their standard
/// deviation when `standardize` is set.
pub fn fit_pca(cube: &HsiCube, variance_target: f64, standardize: bool) -> Result<PcaModel> {
    cube.validate()?;
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(GrnnError::InvalidInput(format!(
            "variance_target {variance_target} outside (0, 1]"
        )));
    }
    let n = cube.n_pixels();
    let bb = cube.bands;

    let mut mean = vec![0.0; bb];
    for p in 0..n {
        let px = cube.pixel_flat(p);
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut scale = vec![1.0; bb];
    if standardize {
        let mut var = vec![0.0; bb];
        for p in 0..n {
            let px = cube.pixel_flat(p);
            for (v, (&x, &m)) in var.iter_mut().zip(px.iter().zip(&mean)) {
                let d = x - m;
                *v += d * d;
            }
        }
        let denom = (n.max(2) - 1) as f64;
        for (s, v) in scale.iter_mut().zip(&var) {
            let sd = (v / denom).sqrt();
            if sd > 1e-12 {
                *s = sd;
            }
        }
    }

    // covariance, upper triangle then mirrored
    let mut cov = Mat::zeros(bb, bb);
    for p in 0..n {
        let px = cube.pixel_flat(p);
        for i in 0..bb {
            let di = (px[i] - mean[i]) / scale[i];
            let row = &mut cov.data[i * bb..(i + 1) * bb];
            for j in i..bb {
                row[j] += di * (px[j] - mean[j]) / scale[j];
            }
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    for i in 0..bb {
        for j in i..bb {
            let v = cov.at(i, j) / denom;
            *cov.at_mut(i, j) = v;
            *cov.at_mut(j, i) = v;
        }
    }

    let eigen = linalg::sym_eigen(&cov);
    let values: Vec<f64> = eigen.values.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();

    let mean_sq: f64 = mean.iter().map(|m| m * m).sum::<f64>() / bb as f64;
    if total <= 1e-18 * (1.0 + mean_sq) {
        // constant data: keep one zero-variance component
        let mut components = Mat::zeros(1, bb);
        *components.at_mut(0, 0) = 1.0;
        return Ok(PcaModel {
            mean,
            scale,
            components,
            explained_variance: vec![0.0],
            total_variance: 0.0,
            degenerate: true,
        });
    }

    let mut cum = 0.0;
    let mut k = bb;
    for (i, &v) in values.iter().enumerate() {
        cum += v;
        if cum / total >= variance_target - 1e-12 {
            k = i + 1;
            break;
        }
    }

    let mut components = Mat::zeros(k, bb);
    for r in 0..k {
        components.row_mut(r).copy_from_slice(eigen.vectors.row(r));
    }
    Ok(PcaModel {
        mean,
        scale,
        components,
        explained_variance: values[..k].to_vec(),
        total_variance: total,
        degenerate: false,
    })
}

/// Project every pixel: `x -> components * ((x - mean) / scale)`.
pub fn apply_pca(model: &PcaModel, cube: &HsiCube) -> Result<HsiCube> {
    if cube.bands != model.bands() {
        return Err(GrnnError::InvalidInput(format!(
            "cube has {} bands, model expects {}",
            cube.bands,
            model.bands()
        )));
    }
    let k = model.n_components();
    let bb = model.bands();
    let n = cube.n_pixels();
    let mut out = vec![0.0; n * k];
    out.par_chunks_mut(k)
        .zip(cube.data.par_chunks(bb))
        .for_each(|(dst, px)| {
            let mut centered = vec![0.0; bb];
            for i in 0..bb {
                centered[i] = (px[i] - model.mean[i]) / model.scale[i];
            }
            for (r, d) in dst.iter_mut().enumerate() {
                *d = linalg::dot(model.components.row(r), &centered);
            }
        });
    HsiCube::new(cube.height, cube.width, k, out)
}

/// Reconstruct pixels from their projections (least-squares inverse).
pub fn inverse_pca(model: &PcaModel, reduced: &HsiCube) -> Result<HsiCube> {
    if reduced.bands != model.n_components() {
        return Err(GrnnError::InvalidInput("component count mismatch".into()));
    }
    let k = model.n_components();
    let bb = model.bands();
    let n = reduced.n_pixels();
    let mut out = vec![0.0; n * bb];
    for p in 0..n {
        let y = reduced.pixel_flat(p);
        let dst = &mut out[p * bb..(p + 1) * bb];
        for i in 0..bb {
            let mut acc = 0.0;
            for r in 0..k {
                acc += model.components.at(r, i) * y[r];
            }
            dst[i] = acc * model.scale[i] + model.mean[i];
        }
    }
    HsiCube::new(reduced.height, reduced.width, bb, out)
}

/// First principal component as an H x W image min-max normalized to [0, 1];
/// a constant component maps to all 0.5.
pub fn first_component_image(reduced: &HsiCube) -> Vec<f64> {
    let n = reduced.n_pixels();
    let mut img = Vec::with_capacity(n);
    for p in 0..n {
        img.push(reduced.pixel_flat(p)[0]);
    }
    let min = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 0.0 {
        return vec![0.5; n];
    }
    let inv = 1.0 / (max - min);
    for v in &mut img {
        *v = (*v - min) * inv;
    }
    img
}
