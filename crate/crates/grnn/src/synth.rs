//! Synthetic hyperspectral scenes for end-to-end validation: Voronoi
//! "crowns" with smooth per-class signatures, Gaussian band noise, and a
//! sparse uniform label sample per class.

use crate::cube::HsiCube;
use crate::error::{GrnnError, Result};
use crate::labelmap::LabelMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub n_classes: usize,
    /// Voronoi sites per class.
    pub crowns_per_class: usize,
    /// Standard deviation of i.i.d. Gaussian noise added per band.
    pub noise_sigma: f64,
    /// Minimum pairwise L2 distance between class signatures.
    pub spectral_separation: f64,
    /// Fraction of pixels labeled in the sparse set (at least one per class).
    pub label_fraction: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Desk-scale scene: 64 x 64 x 32, 8 classes, ~1% labels, noise at
    /// roughly 15 dB SNR for the default signature scale.
    pub fn desk() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            bands: 32,
            n_classes: 8,
            crowns_per_class: 5,
            noise_sigma: 0.22,
            spectral_separation: 0.8,
            label_fraction: 0.01,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(GrnnError::InvalidInput("need at least 2 classes".into()));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(GrnnError::InvalidInput(
                "label_fraction must be in (0, 1]".into(),
            ));
        }
        if self.crowns_per_class == 0 || self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(GrnnError::InvalidInput("zero dimension".into()));
        }
        if self.n_classes * self.crowns_per_class > self.height * self.width {
            return Err(GrnnError::InvalidInput("more crowns than pixels".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct SynthScene {
    pub cube: HsiCube,
    /// Every pixel labeled with its true class.
    pub truth: LabelMap,
    /// Sparse uniform sample, `label_fraction` per class (>= 1 pixel).
    pub sparse: LabelMap,
    /// Class signatures, one row of `bands` values per class.
    pub signatures: Vec<Vec<f64>>,
    /// Mean squared signature value over classes and bands; with
    /// `noise_sigma > 0` the scene SNR is `10 log10(power / sigma^2)`.
    pub signal_power: f64,
}

/// Sum of a few Gaussian bumps across the band axis.
fn smooth_signature(bands: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n_bumps = rng.random_range(3..=5);
    let bumps: Vec<(f64, f64, f64)> = (0..n_bumps)
        .map(|_| {
            (
                rng.random::<f64>() * (bands as f64 - 1.0),
                rng.random::<f64>() * 0.6 + 0.4,
                rng.random::<f64>() * (bands as f64 / 6.0) + bands as f64 / 12.0,
            )
        })
        .collect();
    (0..bands)
        .map(|b| {
            bumps
                .iter()
                .map(|&(center, amp, width)| {
                    let d = (b as f64 - center) / width;
                    amp * (-0.5 * d * d).exp()
                })
                .sum::<f64>()
                + 0.1
        })
        .collect()
}

/// Generate a scene: Voronoi crowns over random sites, one class per crown,
/// pixel = class signature + noise. Deterministic per seed.
pub fn generate(cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w, bands, c) = (cfg.height, cfg.width, cfg.bands, cfg.n_classes);

    // class signatures with enforced pairwise separation
    let mut signatures: Vec<Vec<f64>> = Vec::with_capacity(c);
    let mut attempts = 0usize;
    while signatures.len() < c {
        attempts += 1;
        if attempts > 200 * c {
            return Err(GrnnError::InvalidInput(format!(
                "could not find {c} signatures separated by {}",
                cfg.spectral_separation
            )));
        }
        let cand = smooth_signature(bands, &mut rng);
        let ok = signatures.iter().all(|s| {
            crate::linalg::sq_dist(s, &cand).sqrt() >= cfg.spectral_separation
        });
        if ok {
            signatures.push(cand);
        }
    }

    // Voronoi sites with class assignment, one block of crowns per class
    let n_sites = c * cfg.crowns_per_class;
    let mut site_classes: Vec<usize> = (0..n_sites).map(|i| i % c).collect();
    site_classes.shuffle(&mut rng);
    let mut sites: Vec<(f64, f64)> = Vec::with_capacity(n_sites);
    let mut used = std::collections::BTreeSet::new();
    while sites.len() < n_sites {
        let r = rng.random_range(0..h);
        let col = rng.random_range(0..w);
        if used.insert((r, col)) {
            sites.push((r as f64, col as f64));
        }
    }

    // nearest site per pixel (ties to the lower site index)
    let mut class_of_pixel = vec![0usize; h * w];
    for p in 0..h * w {
        let (r, col) = ((p / w) as f64, (p % w) as f64);
        let mut best = (f64::INFINITY, 0usize);
        for (i, &(sr, sc)) in sites.iter().enumerate() {
            let d = (r - sr) * (r - sr) + (col - sc) * (col - sc);
            if d < best.0 {
                best = (d, i);
            }
        }
        class_of_pixel[p] = site_classes[best.1];
    }

    // assemble cube
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0))
        .map_err(|e| GrnnError::InvalidInput(e.to_string()))?;
    let mut data = Vec::with_capacity(h * w * bands);
    for p in 0..h * w {
        let sig = &signatures[class_of_pixel[p]];
        for b in 0..bands {
            let n = if cfg.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            data.push(sig[b] + n);
        }
    }
    let cube = HsiCube::new(h, w, bands, data)?;

    let truth_entries: Vec<(usize, usize, usize)> = (0..h * w)
        .map(|p| (p / w, p % w, class_of_pixel[p] + 1))
        .collect();
    let truth = LabelMap::new(h, w, c, truth_entries)?;

    // sparse sample: per class, uniform without replacement
    let mut sparse_entries = Vec::new();
    for cls in 1..=c {
        let mut pixels: Vec<(usize, usize)> = truth
            .entries()
            .iter()
            .filter(|e| e.2 == cls)
            .map(|e| (e.0, e.1))
            .collect();
        let k = ((cfg.label_fraction * pixels.len() as f64).round() as usize)
            .max(1)
            .min(pixels.len());
        pixels.shuffle(&mut rng);
        for &(r, col) in pixels.iter().take(k) {
            sparse_entries.push((r, col, cls));
        }
    }
    let sparse = LabelMap::new(h, w, c, sparse_entries)?;

    let signal_power = signatures
        .iter()
        .flat_map(|s| s.iter())
        .map(|&v| v * v)
        .sum::<f64>()
        / (c * bands) as f64;

    Ok(SynthScene {
        cube,
        truth,
        sparse,
        signatures,
        signal_power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_pixels_equal_signatures() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            height: 16,
            width: 16,
            bands: 8,
            ..SynthConfig::desk()
        };
        let scene = generate(&cfg).unwrap();
        for &(r, c, cls) in scene.truth.entries() {
            let px = scene.cube.pixel(r, c);
            for (a, b) in px.iter().zip(&scene.signatures[cls - 1]) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn full_label_fraction_matches_truth() {
        let cfg = SynthConfig {
            label_fraction: 1.0,
            height: 12,
            width: 12,
            bands: 6,
            ..SynthConfig::desk()
        };
        let scene = generate(&cfg).unwrap();
        assert_eq!(scene.sparse.entries(), scene.truth.entries());
    }

    #[test]
    fn desk_preset_labels_every_class() {
        let scene = generate(&SynthConfig::desk()).unwrap();
        let counts = scene.sparse.class_counts();
        assert_eq!(counts.len(), 8);
        assert!(counts.iter().all(|&n| n >= 1), "{counts:?}");
        // roughly 1% of 4096 pixels
        let total: usize = counts.iter().sum();
        assert!(total >= 8 && total <= 80, "total = {total}");
    }

    #[test]
    fn truth_constant_within_cells_and_deterministic() {
        let cfg = SynthConfig::desk();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.cube.data, b.cube.data);
        assert_eq!(a.truth.entries(), b.truth.entries());
        assert_eq!(a.sparse.entries(), b.sparse.entries());
    }

    #[test]
    fn nearest_signature_classifier_is_perfect_without_noise() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            height: 20,
            width: 20,
            bands: 16,
            ..SynthConfig::desk()
        };
        let scene = generate(&cfg).unwrap();
        for &(r, c, cls) in scene.truth.entries() {
            let px = scene.cube.pixel(r, c);
            let mut best = (f64::INFINITY, 0usize);
            for (i, sig) in scene.signatures.iter().enumerate() {
                let d = crate::linalg::sq_dist(px, sig);
                if d < best.0 {
                    best = (d, i);
                }
            }
            assert_eq!(best.1 + 1, cls);
        }
    }

    #[test]
    fn desk_preset_snr_near_15db() {
        let scene = generate(&SynthConfig::desk()).unwrap();
        let snr_db = 10.0
            * (scene.signal_power / (SynthConfig::desk().noise_sigma.powi(2))).log10();
        assert!(
            (10.0..20.0).contains(&snr_db),
            "snr {snr_db} dB not near 15"
        );
    }

    #[test]
    fn infeasible_separation_errors() {
        let cfg = SynthConfig {
            spectral_separation: 1e6,
            ..SynthConfig::desk()
        };
        assert!(generate(&cfg).is_err());
    }
}
