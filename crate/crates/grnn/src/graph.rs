//! Superpixel graph construction: per-superpixel features (mean spectrum
//! plus centroid) and a sparse symmetric adjacency built from Gaussian
//! kernels on spectral and spatial distances, truncated to the strongest
//! neighbors per row.

use crate::cube::HsiCube;
use crate::error::{GrnnError, Result};
use crate::linalg::Mat;
use crate::segmentation::SuperpixelSegmentation;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Kernel bandwidth shared by both exponents.
    pub bandwidth: f64,
    /// Spectral-vs-spatial trade-off in [0, 1]; 1 = spectral only.
    pub spectral_tradeoff: f64,
    /// Scale of spectral distances.
    pub sigma_spectral: f64,
    /// Scale of spatial distances, in pixels.
    pub sigma_spatial: f64,
    /// Pixel connectivity (4 or 8) defining superpixel adjacency.
    pub connectivity: u8,
    /// Keep at most this many neighbors per row before symmetrization.
    pub max_neighbors: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            bandwidth: 15.0,
            spectral_tradeoff: 0.5,
            sigma_spectral: 1.0,
            sigma_spatial: 10.0,
            connectivity: 8,
            max_neighbors: 20,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.sigma_spectral > 0.0 && self.sigma_spatial > 0.0) {
            return Err(GrnnError::InvalidInput(
                "bandwidth and sigmas must be > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.spectral_tradeoff) {
            return Err(GrnnError::InvalidInput(
                "spectral_tradeoff must be in [0, 1]".into(),
            ));
        }
        if self.connectivity != 4 && self.connectivity != 8 {
            return Err(GrnnError::InvalidInput("connectivity must be 4 or 8".into()));
        }
        if self.max_neighbors == 0 {
            return Err(GrnnError::InvalidInput("max_neighbors must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sparse symmetric superpixel graph with positive node degrees.
#[derive(Debug, Clone)]
pub struct SuperpixelGraph {
    pub n: usize,
    /// Spectral feature length (feature rows are `spectral_dim + 2` long).
    pub spectral_dim: usize,
    /// N x (spectral_dim + 2): mean spectrum then normalized centroid.
    pub features: Mat,
    /// Adjacency rows sorted by column; symmetric, zero diagonal.
    rows: Vec<Vec<(usize, f64)>>,
    pub degrees: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

/// Serde-friendly mirror of [`SuperpixelGraph`] for caching.
#[derive(Debug, Serialize, Deserialize)]
pub struct PortableGraph {
    pub n: usize,
    pub spectral_dim: usize,
    pub height: usize,
    pub width: usize,
    pub features: Vec<f64>,
    /// Upper-triangle edges (k < l, weight).
    pub edges: Vec<(u32, u32, f64)>,
}

impl SuperpixelGraph {
    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn n_edges(&self) -> usize {
        self.rows.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// `S = D^-1/2 W D^-1/2` in the same sparse row layout.
    pub fn row_normalized(&self) -> Vec<Vec<(usize, f64)>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(k, row)| {
                row.iter()
                    .map(|&(l, w)| (l, w / (self.degrees[k] * self.degrees[l]).sqrt()))
                    .collect()
            })
            .collect()
    }

    pub fn validate(&self, max_neighbors: usize) -> Result<()> {
        if self.rows.len() != self.n || self.degrees.len() != self.n {
            return Err(GrnnError::InvalidInput("graph shape mismatch".into()));
        }
        for (k, row) in self.rows.iter().enumerate() {
            if row.len() > 2 * max_neighbors {
                return Err(GrnnError::InvalidInput(format!(
                    "row {k} has {} entries, cap is {}",
                    row.len(),
                    2 * max_neighbors
                )));
            }
            let mut deg = 0.0;
            for &(l, w) in row {
                if l == k {
                    return Err(GrnnError::InvalidInput(format!("diagonal entry at {k}")));
                }
                if !(w >= 0.0) {
                    return Err(GrnnError::InvalidInput(format!(
                        "negative weight at ({k}, {l})"
                    )));
                }
                let sym = self.rows[l].binary_search_by(|e| e.0.cmp(&k));
                match sym {
                    Ok(i) if self.rows[l][i].1 == w => {}
                    _ => {
                        return Err(GrnnError::InvalidInput(format!(
                            "asymmetry at ({k}, {l})"
                        )))
                    }
                }
                deg += w;
            }
            if !(deg > 0.0) {
                return Err(GrnnError::InvalidInput(format!("node {k} has zero degree")));
            }
            if (deg - self.degrees[k]).abs() > 1e-9 * deg.max(1.0) {
                return Err(GrnnError::InvalidInput(format!("stale degree at {k}")));
            }
        }
        Ok(())
    }

    /// Debug dump: one `k,l,w` line per upper-triangle edge.
    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (k, row) in self.rows.iter().enumerate() {
            for &(l, w) in row {
                if k < l {
                    out.push_str(&format!("{k},{l},{w}\n"));
                }
            }
        }
        fs::write(path, out).map_err(|e| GrnnError::io(path, e))
    }

    pub fn to_portable(&self) -> PortableGraph {
        let mut edges = Vec::with_capacity(self.n_edges());
        for (k, row) in self.rows.iter().enumerate() {
            for &(l, w) in row {
                if k < l {
                    edges.push((k as u32, l as u32, w));
                }
            }
        }
        PortableGraph {
            n: self.n,
            spectral_dim: self.spectral_dim,
            height: self.height,
            width: self.width,
            features: self.features.data.clone(),
            edges,
        }
    }

    pub fn from_portable(p: PortableGraph) -> Result<Self> {
        let dim = p.spectral_dim + 2;
        if p.features.len() != p.n * dim {
            return Err(GrnnError::InvalidInput("portable graph shape".into()));
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p.n];
        for &(k, l, w) in &p.edges {
            rows[k as usize].push((l as usize, w));
            rows[l as usize].push((k as usize, w));
        }
        for row in &mut rows {
            row.sort_unstable_by_key(|e| e.0);
        }
        let degrees = rows
            .iter()
            .map(|row| row.iter().map(|e| e.1).sum())
            .collect();
        Ok(SuperpixelGraph {
            n: p.n,
            spectral_dim: p.spectral_dim,
            features: Mat {
                rows: p.n,
                cols: dim,
                data: p.features,
            },
            rows,
            degrees,
            height: p.height,
            width: p.width,
        })
    }
}

/// Per-superpixel features: mean spectrum of the member pixels, then the
/// centroid as (mean row / H, mean col / W).
pub fn extract_features(reduced: &HsiCube, seg: &SuperpixelSegmentation) -> Result<Mat> {
    if reduced.height != seg.height || reduced.width != seg.width {
        return Err(GrnnError::InvalidInput(
            "segmentation does not match cube shape".into(),
        ));
    }
    let b = reduced.bands;
    let n = seg.count;
    let dim = b + 2;
    let mut features = Mat::zeros(n, dim);
    let mut counts = vec![0usize; n];
    for p in 0..reduced.n_pixels() {
        let k = seg.assignment[p] as usize;
        let row = features.row_mut(k);
        for (dst, &v) in row[..b].iter_mut().zip(reduced.pixel_flat(p)) {
            *dst += v;
        }
        row[b] += (p / seg.width) as f64;
        row[b + 1] += (p % seg.width) as f64;
        counts[k] += 1;
    }
    for k in 0..n {
        let c = counts[k] as f64;
        let row = features.row_mut(k);
        for v in row[..b].iter_mut() {
            *v /= c;
        }
        row[b] /= c * seg.height as f64;
        row[b + 1] /= c * seg.width as f64;
    }
    Ok(features)
}

/// Product-of-Gaussians edge weight from squared spectral and spatial
/// (pixel-unit) distances.
pub fn kernel_weight(cfg: &GraphConfig, d_spec_sq: f64, d_spat_sq: f64) -> f64 {
    let beta = cfg.spectral_tradeoff;
    let e1 = -beta * d_spec_sq / (cfg.bandwidth * cfg.sigma_spectral * cfg.sigma_spectral);
    let e2 = -(1.0 - beta) * d_spat_sq / (cfg.bandwidth * cfg.sigma_spatial * cfg.sigma_spatial);
    (e1 + e2).exp()
}

/// Pairs of superpixels whose pixel sets touch under `connectivity`.
pub fn superpixel_adjacency(seg: &SuperpixelSegmentation, connectivity: u8) -> Vec<Vec<usize>> {
    let (h, w) = (seg.height, seg.width);
    let mut adj: Vec<std::collections::BTreeSet<usize>> = vec![Default::default(); seg.count];
    let mut link = |a: u32, b: u32| {
        if a != b {
            adj[a as usize].insert(b as usize);
            adj[b as usize].insert(a as usize);
        }
    };
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            if c + 1 < w {
                link(seg.assignment[p], seg.assignment[p + 1]);
            }
            if r + 1 < h {
                link(seg.assignment[p], seg.assignment[p + w]);
                if connectivity == 8 {
                    if c + 1 < w {
                        link(seg.assignment[p], seg.assignment[p + w + 1]);
                    }
                    if c > 0 {
                        link(seg.assignment[p], seg.assignment[p + w - 1]);
                    }
                }
            }
        }
    }
    adj.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Keep the `k` largest weights (ties to the lower index).
fn truncate_row_top_k(mut entries: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    if entries.len() > k {
        entries.sort_unstable_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        entries.truncate(k);
    }
    entries.sort_unstable_by_key(|e| e.0);
    entries
}

/// Build the sparse symmetric adjacency over candidate pairs (spatially
/// adjacent superpixels plus the nearest neighbors in feature space),
/// truncated per row to the strongest `max_neighbors` and symmetrized by
/// elementwise max. Nodes that would end up isolated are reconnected to
/// their nearest feature-space neighbor.
pub fn build_adjacency(
    features: &Mat,
    seg: &SuperpixelSegmentation,
    cfg: &GraphConfig,
) -> Result<SuperpixelGraph> {
    cfg.validate()?;
    let n = features.rows;
    if n != seg.count {
        return Err(GrnnError::InvalidInput(
            "feature rows do not match superpixel count".into(),
        ));
    }
    let b = features.cols - 2;
    let spatial_adj = superpixel_adjacency(seg, cfg.connectivity);
    let (hf, wf) = (seg.height as f64, seg.width as f64);

    // per-row candidate weights, in parallel; each row is self-contained
    let kept: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let fk = features.row(k);
            let mut dist: Vec<(f64, usize, f64)> = Vec::with_capacity(n - 1); // (feat_d2, idx, weight)
            for l in 0..n {
                if l == k {
                    continue;
                }
                let fl = features.row(l);
                let mut d_spec = 0.0;
                for i in 0..b {
                    let d = fk[i] - fl[i];
                    d_spec += d * d;
                }
                let dy = (fk[b] - fl[b]) * hf;
                let dx = (fk[b + 1] - fl[b + 1]) * wf;
                let d_spat = dy * dy + dx * dx;
                let d_feat = d_spec + (fk[b] - fl[b]).powi(2) + (fk[b + 1] - fl[b + 1]).powi(2);
                dist.push((d_feat, l, kernel_weight(cfg, d_spec, d_spat)));
            }
            // candidate set: xi-adjacent or among the max_neighbors nearest
            let mut candidates: Vec<(usize, f64)> = Vec::new();
            let nn = cfg.max_neighbors.min(dist.len());
            if nn > 0 && nn < dist.len() {
                dist.select_nth_unstable_by(nn - 1, |a, b| {
                    a.0.partial_cmp(&b.0)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.1.cmp(&b.1))
                });
            }
            let mut is_candidate = vec![false; n];
            for &(_, l, _) in dist.iter().take(nn) {
                is_candidate[l] = true;
            }
            for &l in &spatial_adj[k] {
                is_candidate[l] = true;
            }
            for &(_, l, w) in &dist {
                if is_candidate[l] {
                    candidates.push((l, w));
                }
            }
            candidates.sort_unstable_by_key(|e| e.0);
            truncate_row_top_k(candidates, cfg.max_neighbors)
        })
        .collect();

    // symmetrize by elementwise max
    let mut sym: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
    for (k, row) in kept.iter().enumerate() {
        for &(l, w) in row {
            let e1 = sym[k].entry(l).or_insert(0.0);
            *e1 = e1.max(w);
            let e2 = sym[l].entry(k).or_insert(0.0);
            *e2 = e2.max(w);
        }
    }
    let mut rows: Vec<Vec<(usize, f64)>> = sym
        .into_iter()
        .map(|m| m.into_iter().collect())
        .collect();

    // reconnect isolated nodes to their nearest feature-space neighbor
    let degree_of = |row: &Vec<(usize, f64)>| row.iter().map(|e| e.1).sum::<f64>();
    for k in 0..n {
        if degree_of(&rows[k]) > 0.0 {
            continue;
        }
        let fk = features.row(k).to_vec();
        let mut best: Option<(f64, usize, f64)> = None;
        for l in 0..n {
            if l == k {
                continue;
            }
            let fl = features.row(l);
            let mut d_spec = 0.0;
            for i in 0..b {
                let d = fk[i] - fl[i];
                d_spec += d * d;
            }
            let d_feat = d_spec + (fk[b] - fl[b]).powi(2) + (fk[b + 1] - fl[b + 1]).powi(2);
            let dy = (fk[b] - fl[b]) * hf;
            let dx = (fk[b + 1] - fl[b + 1]) * wf;
            let w = kernel_weight(cfg, d_spec, dy * dy + dx * dx);
            if best.map_or(true, |(bd, _, _)| d_feat < bd) {
                best = Some((d_feat, l, w));
            }
        }
        if let Some((_, l, w)) = best {
            let w = w.max(f64::MIN_POSITIVE);
            upsert(&mut rows[k], l, w);
            upsert(&mut rows[l], k, w);
        }
    }

    // max-symmetrization can leave high in-degree rows above the 2*n_s cap;
    // trim their weakest edges (both directions), never emptying a row
    let cap = 2 * cfg.max_neighbors;
    for k in 0..n {
        if rows[k].len() <= cap {
            continue;
        }
        let mut by_weight: Vec<(f64, usize)> =
            rows[k].iter().map(|&(l, w)| (w, l)).collect();
        by_weight.sort_unstable_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        for (_, l) in by_weight {
            if rows[k].len() <= cap {
                break;
            }
            if rows[l].len() <= 1 {
                continue;
            }
            if let Ok(i) = rows[k].binary_search_by(|e| e.0.cmp(&l)) {
                rows[k].remove(i);
            }
            if let Ok(i) = rows[l].binary_search_by(|e| e.0.cmp(&k)) {
                rows[l].remove(i);
            }
        }
    }

    let degrees: Vec<f64> = rows.iter().map(degree_of).collect();
    if let Some(k) = degrees.iter().position(|&d| !(d > 0.0)) {
        return Err(GrnnError::InvalidInput(format!(
            "node {k} is isolated after repair"
        )));
    }

    let graph = SuperpixelGraph {
        n,
        spectral_dim: b,
        features: features.clone(),
        rows,
        degrees,
        height: seg.height,
        width: seg.width,
    };
    debug_assert!(
        graph.validate(cfg.max_neighbors).is_ok(),
        "{:?}",
        graph.validate(cfg.max_neighbors)
    );
    Ok(graph)
}

fn upsert(row: &mut Vec<(usize, f64)>, col: usize, w: f64) {
    match row.binary_search_by(|e| e.0.cmp(&col)) {
        Ok(i) => row[i].1 = row[i].1.max(w),
        Err(i) => row.insert(i, (col, w)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_seg(h: usize, w: usize, bh: usize, bw: usize) -> SuperpixelSegmentation {
        // blocks of bh x bw
        let across = w / bw;
        let mut assignment = vec![0u32; h * w];
        for r in 0..h {
            for c in 0..w {
                assignment[r * w + c] = ((r / bh) * across + c / bw) as u32;
            }
        }
        SuperpixelSegmentation {
            height: h,
            width: w,
            count: (h / bh) * across,
            assignment,
        }
    }

    #[test]
    fn features_of_uniform_superpixels() {
        // 4x4 image, 2x2 blocks, each block constant
        let seg = grid_seg(4, 4, 2, 2);
        let mut data = vec![0.0; 4 * 4 * 2];
        for p in 0..16 {
            let k = seg.assignment[p] as f64;
            data[p * 2] = k;
            data[p * 2 + 1] = -k;
        }
        let cube = HsiCube::new(4, 4, 2, data).unwrap();
        let f = extract_features(&cube, &seg).unwrap();
        // block 0: identical pixels (0, 0) -> spectral part exactly
        assert_eq!(f.row(0)[..2], [0.0, 0.0]);
        assert_eq!(f.row(3)[..2], [3.0, -3.0]);
        // centroid of rows {0,1} cols {0,1} in 4x4 -> (0.125, 0.125)
        assert!((f.row(0)[2] - 0.125).abs() < 1e-15);
        assert!((f.row(0)[3] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn two_pixel_mean_spectrum() {
        let seg = SuperpixelSegmentation {
            height: 1,
            width: 2,
            count: 1,
            assignment: vec![0, 0],
        };
        let cube = HsiCube::new(1, 2, 3, vec![0.0, 0.0, 0.0, 2.0, 2.0, 2.0]).unwrap();
        let f = extract_features(&cube, &seg).unwrap();
        assert_eq!(f.row(0)[..3], [1.0, 1.0, 1.0]);
    }

    #[test]
    fn identical_features_give_unit_weight() {
        let cfg = GraphConfig::default();
        assert_eq!(kernel_weight(&cfg, 0.0, 0.0), 1.0);
    }

    #[test]
    fn weights_monotone_in_sigmas() {
        let base = GraphConfig::default();
        for &(ds, dl) in &[(0.5, 3.0), (2.0, 0.1), (4.0, 4.0)] {
            let w0 = kernel_weight(&base, ds, dl);
            let mut wider = base.clone();
            wider.sigma_spectral *= 2.0;
            assert!(kernel_weight(&wider, ds, dl) >= w0);
            let mut wider = base.clone();
            wider.sigma_spatial *= 2.0;
            assert!(kernel_weight(&wider, ds, dl) >= w0);
        }
    }

    #[test]
    fn top_k_keeps_largest() {
        let kept = truncate_row_top_k(
            vec![(1, 0.9), (2, 0.5), (3, 0.1), (4, 0.05)],
            2,
        );
        assert_eq!(kept, vec![(1, 0.9), (2, 0.5)]);
    }

    #[test]
    fn top_k_tie_breaks_by_lower_index() {
        let kept = truncate_row_top_k(vec![(5, 0.5), (2, 0.5), (7, 0.5)], 2);
        assert_eq!(kept, vec![(2, 0.5), (5, 0.5)]);
    }

    #[test]
    fn adjacency_of_grid_blocks() {
        let seg = grid_seg(4, 4, 2, 2);
        let adj4 = superpixel_adjacency(&seg, 4);
        assert_eq!(adj4[0], vec![1, 2]);
        let adj8 = superpixel_adjacency(&seg, 8);
        assert_eq!(adj8[0], vec![1, 2, 3]);
    }

    fn small_graph() -> SuperpixelGraph {
        let seg = grid_seg(6, 6, 2, 2);
        let mut data = Vec::new();
        for p in 0..36 {
            let k = seg.assignment[p] as f64;
            data.push((k * 0.37).sin());
            data.push((k * 0.61).cos());
        }
        let cube = HsiCube::new(6, 6, 2, data).unwrap();
        let f = extract_features(&cube, &seg).unwrap();
        build_adjacency(
            &f,
            &seg,
            &GraphConfig {
                sigma_spatial: 3.0,
                max_neighbors: 4,
                ..GraphConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn built_graph_satisfies_invariants() {
        let g = small_graph();
        g.validate(4).unwrap();
        assert!(g.degrees.iter().all(|&d| d > 0.0));
    }

    #[test]
    fn normalized_adjacency_two_nodes() {
        // 1x2 image, two superpixels, single edge
        let seg = SuperpixelSegmentation {
            height: 1,
            width: 2,
            count: 2,
            assignment: vec![0, 1],
        };
        let cube = HsiCube::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let f = extract_features(&cube, &seg).unwrap();
        let g = build_adjacency(&f, &seg, &GraphConfig::default()).unwrap();
        let s = g.row_normalized();
        assert_eq!(s[0].len(), 1);
        assert!((s[0][0].1 - 1.0).abs() < 1e-12, "S_12 = {}", s[0][0].1);
    }

    #[test]
    fn normalized_triangle_is_half() {
        // hand-built triangle with equal unit weights: d_k = 2, S = 1/2
        let g = SuperpixelGraph {
            n: 3,
            spectral_dim: 0,
            features: Mat::zeros(3, 2),
            rows: vec![
                vec![(1, 1.0), (2, 1.0)],
                vec![(0, 1.0), (2, 1.0)],
                vec![(0, 1.0), (1, 1.0)],
            ],
            degrees: vec![2.0, 2.0, 2.0],
            height: 1,
            width: 3,
        };
        let s = g.row_normalized();
        for row in &s {
            for &(_, v) in row {
                assert!((v - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn normalized_spectral_radius_at_most_one() {
        // power iteration on |S|, which bounds the spectral radius of S
        let g = small_graph();
        let s = g.row_normalized();
        let n = g.n;
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut next = vec![0.0; n];
            for (k, row) in s.iter().enumerate() {
                for &(l, w) in row {
                    next[k] += w.abs() * v[l];
                }
            }
            lambda = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if lambda == 0.0 {
                break;
            }
            for x in &mut next {
                *x /= lambda;
            }
            v = next;
        }
        assert!(lambda <= 1.0 + 1e-10, "spectral radius {lambda}");
    }

    #[test]
    fn portable_round_trip() {
        let g = small_graph();
        let p = g.to_portable();
        let text = serde_json::to_string(&p).unwrap();
        let back: PortableGraph = serde_json::from_str(&text).unwrap();
        let g2 = SuperpixelGraph::from_portable(back).unwrap();
        assert_eq!(g.rows, g2.rows);
        assert_eq!(g.features.data, g2.features.data);
        for (a, b) in g.degrees.iter().zip(&g2.degrees) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
