//! Batch pipeline: preprocess -> segment -> graph -> train -> augment ->
//! propagate -> evaluate -> emit artifacts.
//!
//! Stage outputs are cached under `<out_dir>/cache` with content-hash names,
//! and every computed artifact is written to disk and read back before use,
//! so a rerun that hits the cache sees bit-identical inputs and produces a
//! bit-identical report.

use crate::classmap::{default_palette, emit_map, ClassificationMap, Provenance};
use crate::cube::{load_cube, save_cube, HsiCube};
use crate::error::{GrnnError, Result};
use crate::graph::{build_adjacency, extract_features, GraphConfig, PortableGraph, SuperpixelGraph};
use crate::labelmap::{load_labels, save_labels, LabelMap};
use crate::labels::{soft_labels, SuperpixelLabels};
use crate::linalg::Mat;
use crate::metrics::{evaluate, split_labels, EvalReport, SplitSpec};
use crate::mlp::{MlpParams, Trace};
use crate::pca::{apply_pca, first_component_image, fit_pca, PcaModel};
use crate::propagate::{augment, final_labels, hard_label_matrix, propagate};
use crate::segmentation::SuperpixelSegmentation;
use crate::slic::{slic_segment, SlicConfig};
use crate::synth::{generate, SynthConfig};
use crate::train::{train, write_history, LossWeights, TrainConfig, TrainingSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Full pipeline: regularized training, augmentation, propagation.
    Grnn,
    /// Plain supervised MLP, pixel map from per-pixel argmax.
    MlpOnly,
    /// No classifier: propagate hard ground-truth superpixel labels only.
    LabelpropOnly,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "grnn" => Ok(Mode::Grnn),
            "mlp-only" => Ok(Mode::MlpOnly),
            "labelprop-only" => Ok(Mode::LabelpropOnly),
            other => Err(format!(
                "unknown mode `{other}` (expected grnn, mlp-only, or labelprop-only)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Cube header path.
    pub cube: PathBuf,
    /// Labeled-pixel CSV used for training (and testing, when split).
    pub labels: PathBuf,
    /// Optional separate evaluation CSV; training pixels are excluded from it.
    pub eval_labels: Option<PathBuf>,
    pub mode: Mode,
    /// Master seed: drives the split, the network init, and training.
    pub seed: u64,
    /// Override for the class count (defaults to the maximum labeled class).
    pub num_classes: Option<usize>,
    pub variance_target: f64,
    pub standardize: bool,
    pub slic: SlicConfig,
    pub graph: GraphConfig,
    pub train: TrainConfig,
    /// Minimum top-class probability for a prediction to augment the labels.
    pub confidence_threshold: f64,
    /// Label-smoothing strength of the propagation solve.
    pub alpha: f64,
    pub split: Option<SplitSpec>,
    /// Also dump the propagated superpixel scores as CSV.
    pub dump_scores: bool,
}

impl PipelineConfig {
    fn base(mode: Mode) -> Self {
        PipelineConfig {
            cube: PathBuf::new(),
            labels: PathBuf::new(),
            eval_labels: None,
            mode,
            seed: 0,
            num_classes: None,
            variance_target: 0.9990,
            standardize: false,
            slic: SlicConfig::default(),
            graph: GraphConfig::default(),
            train: TrainConfig::default(),
            confidence_threshold: 0.4,
            alpha: 0.5,
            split: None,
            dump_scores: false,
        }
    }

    /// Hyperparameters tuned for the 145x145, 16-class benchmark scene.
    pub fn indian_pines() -> Self {
        let mut cfg = Self::base(Mode::Grnn);
        cfg.slic.n_superpixels = 1200;
        cfg.graph = GraphConfig {
            bandwidth: 15.0,
            spectral_tradeoff: 0.9,
            sigma_spectral: 2.0,
            sigma_spatial: 1.0,
            connectivity: 8,
            max_neighbors: 20,
        };
        cfg.train = TrainConfig {
            weights: LossWeights {
                lambda_superpixel: 0.15,
                lambda_graph: 1e5,
                lambda_variance: 2.0,
                lambda_entropy: 20.0,
            },
            n_iter: 500,
            hidden1: 196,
            hidden2: 160,
            ..TrainConfig::default()
        };
        cfg.split = Some(SplitSpec::PerClassCount(10));
        cfg
    }

    /// Hyperparameters tuned for the large heterogeneous forest scene.
    pub fn french_guiana() -> Self {
        let mut cfg = Self::base(Mode::Grnn);
        cfg.slic.n_superpixels = 5000;
        cfg.graph = GraphConfig {
            bandwidth: 15.0,
            spectral_tradeoff: 0.5,
            sigma_spectral: 5.0,
            sigma_spatial: 40.0,
            connectivity: 8,
            max_neighbors: 20,
        };
        cfg.train = TrainConfig {
            weights: LossWeights {
                lambda_superpixel: 0.1,
                lambda_graph: 0.2,
                lambda_variance: 0.1,
                lambda_entropy: 20.0,
            },
            n_iter: 400,
            hidden1: 448,
            hidden2: 384,
            ..TrainConfig::default()
        };
        cfg.split = Some(SplitSpec::Fraction(0.5));
        cfg
    }

    /// Desk-scale defaults matched to [`SynthConfig::desk`] scenes.
    pub fn synth_desk() -> Self {
        let mut cfg = Self::base(Mode::Grnn);
        cfg.slic = SlicConfig {
            n_superpixels: 400,
            ..SlicConfig::default()
        };
        cfg.graph = GraphConfig {
            bandwidth: 15.0,
            spectral_tradeoff: 0.5,
            sigma_spectral: 0.2,
            sigma_spatial: 12.0,
            connectivity: 8,
            max_neighbors: 20,
        };
        cfg.train = TrainConfig {
            weights: LossWeights {
                lambda_superpixel: 0.15,
                lambda_graph: 0.3,
                lambda_variance: 0.3,
                lambda_entropy: 5.0,
            },
            n_iter: 300,
            hidden1: 48,
            hidden2: 32,
            ..TrainConfig::default()
        };
        cfg.confidence_threshold = 0.6;
        cfg
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "indian-pines" => Some(Self::indian_pines()),
            "french-guiana" => Some(Self::french_guiana()),
            "synth-desk" => Some(Self::synth_desk()),
            _ => None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GrnnError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| GrnnError::BadHeader {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| {
            GrnnError::InvalidInput(format!("config serialization: {e}"))
        })?;
        text.push('\n');
        fs::write(path, text).map_err(|e| GrnnError::io(path, e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub stage_keys: std::collections::BTreeMap<String, String>,
    pub artifacts: std::collections::BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub report: EvalReport,
    pub report_path: PathBuf,
    pub map_path: PathBuf,
    pub manifest_path: PathBuf,
    pub warnings: Vec<String>,
}

fn bytes_of_f64(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bytes_of_u32(values: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn content_hash(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("serializable config")
}

/// Run the pipeline, writing artifacts into `out_dir`.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<PipelineOutcome> {
    let cache_dir = out_dir.join("cache");
    fs::create_dir_all(&cache_dir).map_err(|e| GrnnError::io(&cache_dir, e))?;
    let mut warnings = Vec::new();
    let mut stage_keys = std::collections::BTreeMap::new();
    let mut artifacts = std::collections::BTreeMap::new();

    // ---- load inputs ------------------------------------------------------
    let cube = load_cube(&config.cube).map_err(|e| e.in_stage("load_cube"))?;
    let labels_all = load_labels(&config.labels, cube.height, cube.width)
        .map_err(|e| e.in_stage("load_labels"))?;

    // ---- split ------------------------------------------------------------
    let (train_labels, mut test_labels) = match config.split {
        Some(spec) => split_labels(&labels_all, spec, config.seed)
            .map_err(|e| e.in_stage("split_labels"))?,
        None => (
            labels_all.clone(),
            LabelMap::empty(cube.height, cube.width, labels_all.num_classes),
        ),
    };
    if let Some(eval_path) = &config.eval_labels {
        let eval_all = load_labels(eval_path, cube.height, cube.width)
            .map_err(|e| e.in_stage("load_labels"))?;
        let entries: Vec<(usize, usize, usize)> = eval_all
            .entries()
            .iter()
            .filter(|&&(r, c, _)| train_labels.get(r, c).is_none())
            .cloned()
            .collect();
        test_labels = LabelMap::new(cube.height, cube.width, eval_all.num_classes, entries)
            .map_err(|e| e.in_stage("load_labels"))?;
    }
    let num_classes = config
        .num_classes
        .unwrap_or_else(|| train_labels.num_classes.max(test_labels.num_classes));

    // ---- PCA (cached) -----------------------------------------------------
    let cube_bytes = bytes_of_f64(&cube.data);
    let pca_key = content_hash(&[
        b"pca-v1",
        &cube_bytes,
        &json_bytes(&(cube.height, cube.width, cube.bands)),
        &config.variance_target.to_le_bytes(),
        &[config.standardize as u8],
    ]);
    stage_keys.insert("pca".into(), pca_key.clone());
    let model_path = cache_dir.join(format!("pca-{pca_key}.json"));
    let reduced_path = cache_dir.join(format!("reduced-{pca_key}.json"));
    let (model, reduced) = if model_path.exists() && reduced_path.exists() {
        (
            PcaModel::load(&model_path).map_err(|e| e.in_stage("pca"))?,
            load_cube(&reduced_path).map_err(|e| e.in_stage("pca"))?,
        )
    } else {
        let model = fit_pca(&cube, config.variance_target, config.standardize)
            .map_err(|e| e.in_stage("pca"))?;
        let reduced = apply_pca(&model, &cube).map_err(|e| e.in_stage("pca"))?;
        model.save(&model_path).map_err(|e| e.in_stage("pca"))?;
        save_cube(&reduced, &reduced_path).map_err(|e| e.in_stage("pca"))?;
        // read back so cache hits and misses see identical (f32) data
        (
            PcaModel::load(&model_path).map_err(|e| e.in_stage("pca"))?,
            load_cube(&reduced_path).map_err(|e| e.in_stage("pca"))?,
        )
    };
    if model.degenerate {
        warnings.push("input cube has zero spectral variance; proceeding with one component".into());
    }

    // ---- SLIC (cached) ----------------------------------------------------
    let intensity = first_component_image(&reduced);
    let slic_key = content_hash(&[
        b"slic-v1",
        &bytes_of_f64(&intensity),
        &json_bytes(&config.slic),
        &config.seed.to_le_bytes(),
    ]);
    stage_keys.insert("segment".into(), slic_key.clone());
    let seg_path = cache_dir.join(format!("seg-{slic_key}.json"));
    let seg = if seg_path.exists() {
        SuperpixelSegmentation::load(&seg_path).map_err(|e| e.in_stage("segment"))?
    } else {
        let seg = slic_segment(
            &intensity,
            reduced.height,
            reduced.width,
            &config.slic,
            config.seed,
        )
        .map_err(|e| e.in_stage("segment"))?;
        seg.save(&seg_path).map_err(|e| e.in_stage("segment"))?;
        SuperpixelSegmentation::load(&seg_path).map_err(|e| e.in_stage("segment"))?
    };

    // ---- graph (cached) ---------------------------------------------------
    let graph_key = content_hash(&[
        b"graph-v1",
        &bytes_of_f64(&reduced.data),
        &bytes_of_u32(&seg.assignment),
        &json_bytes(&config.graph),
    ]);
    stage_keys.insert("graph".into(), graph_key.clone());
    let graph_path = cache_dir.join(format!("graph-{graph_key}.json"));
    let graph = if graph_path.exists() {
        let text = fs::read_to_string(&graph_path).map_err(|e| GrnnError::io(&graph_path, e))?;
        let portable: PortableGraph = serde_json::from_str(&text).map_err(|e| {
            GrnnError::BadHeader {
                path: graph_path.clone(),
                reason: e.to_string(),
            }
        })?;
        SuperpixelGraph::from_portable(portable).map_err(|e| e.in_stage("graph"))?
    } else {
        let features = extract_features(&reduced, &seg).map_err(|e| e.in_stage("graph"))?;
        let graph =
            build_adjacency(&features, &seg, &config.graph).map_err(|e| e.in_stage("graph"))?;
        let text = serde_json::to_string(&graph.to_portable()).map_err(|e| {
            GrnnError::InvalidInput(format!("graph serialization: {e}"))
        })?;
        fs::write(&graph_path, text).map_err(|e| GrnnError::io(&graph_path, e))?;
        let text = fs::read_to_string(&graph_path).map_err(|e| GrnnError::io(&graph_path, e))?;
        let portable: PortableGraph =
            serde_json::from_str(&text).map_err(|e| GrnnError::BadHeader {
                path: graph_path.clone(),
                reason: e.to_string(),
            })?;
        SuperpixelGraph::from_portable(portable).map_err(|e| e.in_stage("graph"))?
    };

    // ---- superpixel labels --------------------------------------------------
    let sup = soft_labels(&train_labels, &seg, num_classes)
        .map_err(|e| e.in_stage("superpixel_labels"))?;

    // ---- classify per mode ---------------------------------------------------
    let mut effective_train = config.train.clone();
    effective_train.seed = config.seed;
    if config.mode == Mode::MlpOnly {
        effective_train.weights = LossWeights::zero();
    }

    let map = match config.mode {
        Mode::LabelpropOnly => {
            let t = hard_label_matrix(&train_labels, &seg, num_classes)
                .map_err(|e| e.in_stage("propagate"))?;
            let t_star =
                propagate(&graph, &t, config.alpha).map_err(|e| e.in_stage("propagate"))?;
            maybe_dump_scores(config, out_dir, &t_star, &mut artifacts)?;
            final_labels(&t_star, &seg).map_err(|e| e.in_stage("final_labels"))?
        }
        Mode::MlpOnly | Mode::Grnn => {
            let params = train_cached(
                &cache_dir,
                out_dir,
                &reduced,
                &seg,
                &graph,
                &sup,
                &train_labels,
                num_classes,
                &effective_train,
                &mut stage_keys,
                &mut artifacts,
            )?;
            if config.mode == Mode::MlpOnly {
                pixel_argmax_map(&params, &reduced)
            } else {
                let augmented = augment(
                    &params,
                    &reduced,
                    &train_labels,
                    config.confidence_threshold,
                )
                .map_err(|e| e.in_stage("augment"))?;
                let t = hard_label_matrix(&augmented.merged, &seg, num_classes)
                    .map_err(|e| e.in_stage("propagate"))?;
                let t_star =
                    propagate(&graph, &t, config.alpha).map_err(|e| e.in_stage("propagate"))?;
                maybe_dump_scores(config, out_dir, &t_star, &mut artifacts)?;
                final_labels(&t_star, &seg).map_err(|e| e.in_stage("final_labels"))?
            }
        }
    };
    let mut map = map;
    map.stamp_ground_truth(&train_labels);

    // ---- artifacts ----------------------------------------------------------
    let map_container = out_dir.join("map.json");
    map.save(&map_container).map_err(|e| e.in_stage("emit"))?;
    artifacts.insert("map".into(), "map.json".into());
    let map_ppm = out_dir.join("map.ppm");
    emit_map(&map, &default_palette(num_classes), &map_ppm).map_err(|e| e.in_stage("emit"))?;
    artifacts.insert("map_ppm".into(), "map.ppm".into());

    let train_csv = out_dir.join("train_labels.csv");
    save_labels(&train_labels, &train_csv).map_err(|e| e.in_stage("emit"))?;
    artifacts.insert("train_labels".into(), "train_labels.csv".into());

    // ---- evaluate -----------------------------------------------------------
    if test_labels.is_empty() {
        return Err(GrnnError::InvalidInput(
            "no test labels: configure `split` or `eval_labels`".into(),
        )
        .in_stage("evaluate"));
    }
    let report = evaluate(&map, &test_labels).map_err(|e| e.in_stage("evaluate"))?;
    let report_path = out_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| GrnnError::InvalidInput(format!("report serialization: {e}")))?;
    text.push('\n');
    fs::write(&report_path, text).map_err(|e| GrnnError::io(&report_path, e))?;
    artifacts.insert("report".into(), "report.json".into());
    let report_txt = out_dir.join("report.txt");
    fs::write(&report_txt, report.to_text()).map_err(|e| GrnnError::io(&report_txt, e))?;
    artifacts.insert("report_txt".into(), "report.txt".into());

    // ---- manifest -------------------------------------------------------------
    let manifest = Manifest {
        config_hash: content_hash(&[&json_bytes(config)]),
        seed: config.seed,
        config: config.clone(),
        stage_keys,
        artifacts,
    };
    let manifest_path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| GrnnError::InvalidInput(format!("manifest serialization: {e}")))?;
    text.push('\n');
    fs::write(&manifest_path, text).map_err(|e| GrnnError::io(&manifest_path, e))?;

    Ok(PipelineOutcome {
        report,
        report_path,
        map_path: map_ppm,
        manifest_path,
        warnings,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_cached(
    cache_dir: &Path,
    out_dir: &Path,
    reduced: &HsiCube,
    seg: &SuperpixelSegmentation,
    graph: &SuperpixelGraph,
    sup: &SuperpixelLabels,
    train_labels: &LabelMap,
    num_classes: usize,
    cfg: &TrainConfig,
    stage_keys: &mut std::collections::BTreeMap<String, String>,
    artifacts: &mut std::collections::BTreeMap<String, String>,
) -> Result<MlpParams> {
    let label_bytes = json_bytes(&train_labels.entries());
    let edge_bytes = json_bytes(&graph.to_portable().edges);
    let key = content_hash(&[
        b"train-v1",
        &bytes_of_f64(&reduced.data),
        &bytes_of_u32(&seg.assignment),
        &edge_bytes,
        &label_bytes,
        &json_bytes(cfg),
        &json_bytes(&num_classes),
    ]);
    stage_keys.insert("train".into(), key.clone());
    let ckpt_path = cache_dir.join(format!("model-{key}.json"));
    let hist_path = cache_dir.join(format!("history-{key}.csv"));

    let params = if ckpt_path.exists() && hist_path.exists() {
        MlpParams::load(&ckpt_path).map_err(|e| e.in_stage("train"))?
    } else {
        let set = TrainingSet::new(reduced, seg, graph, sup, train_labels, num_classes)
            .map_err(|e| e.in_stage("train"))?;
        let (params, history) = train(&set, cfg).map_err(|e| e.in_stage("train"))?;
        params.save(&ckpt_path).map_err(|e| e.in_stage("train"))?;
        write_history(&history, &hist_path).map_err(|e| e.in_stage("train"))?;
        MlpParams::load(&ckpt_path).map_err(|e| e.in_stage("train"))?
    };

    // surface checkpoint and history as run artifacts
    let out_ckpt = out_dir.join("model.json");
    params.save(&out_ckpt).map_err(|e| e.in_stage("train"))?;
    artifacts.insert("model".into(), "model.json".into());
    let hist_out = out_dir.join("history.csv");
    fs::copy(&hist_path, &hist_out).map_err(|e| GrnnError::io(&hist_out, e))?;
    artifacts.insert("history".into(), "history.csv".into());
    Ok(params)
}

fn pixel_argmax_map(params: &MlpParams, reduced: &HsiCube) -> ClassificationMap {
    let c = params.shape.classes;
    let mut map = ClassificationMap::unclassified(reduced.height, reduced.width, c);
    let mut trace = Trace::new(&params.shape);
    for p in 0..reduced.n_pixels() {
        params.forward_trace(reduced.pixel_flat(p), &mut trace);
        let mut best = 0usize;
        for q in 1..c {
            if trace.probs[q] > trace.probs[best] {
                best = q;
            }
        }
        map.labels[p] = (best + 1) as u32;
        map.provenance[p] = Provenance::Predicted;
    }
    map
}

fn maybe_dump_scores(
    config: &PipelineConfig,
    out_dir: &Path,
    t_star: &Mat,
    artifacts: &mut std::collections::BTreeMap<String, String>,
) -> Result<()> {
    if !config.dump_scores {
        return Ok(());
    }
    let mut out = String::from("superpixel");
    for q in 1..=t_star.cols {
        out.push_str(&format!(",class_{q}"));
    }
    out.push('\n');
    for k in 0..t_star.rows {
        out.push_str(&k.to_string());
        for &v in t_star.row(k) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let path = out_dir.join("scores.csv");
    fs::write(&path, out).map_err(|e| GrnnError::io(&path, e))?;
    artifacts.insert("scores".into(), "scores.csv".into());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub oa: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialsReport {
    pub n_trials: usize,
    pub base_seed: u64,
    pub oa_mean: f64,
    pub oa_sd: f64,
    pub kappa_mean: f64,
    pub kappa_sd: f64,
    pub trials: Vec<TrialResult>,
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

/// Repeat the pipeline over `n_trials` seeds (`base_seed + t`) and aggregate
/// mean and sample standard deviation of OA and kappa.
pub fn run_trials(
    config: &PipelineConfig,
    n_trials: usize,
    base_seed: u64,
    out_dir: &Path,
) -> Result<TrialsReport> {
    if n_trials == 0 {
        return Err(GrnnError::InvalidInput("n_trials must be >= 1".into()));
    }
    let mut trials = Vec::with_capacity(n_trials);
    for t in 0..n_trials {
        let mut cfg = config.clone();
        cfg.seed = base_seed + t as u64;
        let trial_dir = out_dir.join(format!("trial-{t}"));
        fs::create_dir_all(&trial_dir).map_err(|e| GrnnError::io(&trial_dir, e))?;
        let outcome = run_pipeline(&cfg, &trial_dir)?;
        trials.push(TrialResult {
            seed: cfg.seed,
            oa: outcome.report.oa,
            kappa: outcome.report.kappa,
        });
    }
    let (oa_mean, oa_sd) = mean_sd(&trials.iter().map(|t| t.oa).collect::<Vec<_>>());
    let (kappa_mean, kappa_sd) = mean_sd(&trials.iter().map(|t| t.kappa).collect::<Vec<_>>());
    let report = TrialsReport {
        n_trials,
        base_seed,
        oa_mean,
        oa_sd,
        kappa_mean,
        kappa_sd,
        trials,
    };
    let path = out_dir.join("trials.json");
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| GrnnError::InvalidInput(format!("trials serialization: {e}")))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| GrnnError::io(&path, e))?;
    Ok(report)
}

/// Write a synthetic scene to disk in the pipeline's container formats.
/// Returns (cube header, sparse labels CSV, full truth CSV) paths.
pub fn write_synth_scene(
    cfg: &SynthConfig,
    dir: &Path,
) -> Result<(PathBuf, PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| GrnnError::io(dir, e))?;
    let scene = generate(cfg)?;
    let cube_path = dir.join("cube.json");
    save_cube(&scene.cube, &cube_path)?;
    let sparse_path = dir.join("labels_sparse.csv");
    save_labels(&scene.sparse, &sparse_path)?;
    let truth_path = dir.join("labels_truth.csv");
    save_labels(&scene.truth, &truth_path)?;
    Ok((cube_path, sparse_path, truth_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_setup(dir: &Path) -> PipelineConfig {
        let mut synth = SynthConfig::desk();
        synth.height = 32;
        synth.width = 32;
        synth.bands = 12;
        synth.n_classes = 4;
        synth.label_fraction = 0.03;
        let (cube, sparse, truth) = write_synth_scene(&synth, dir).unwrap();
        let mut cfg = PipelineConfig::synth_desk();
        cfg.cube = cube;
        cfg.labels = sparse;
        cfg.eval_labels = Some(truth);
        cfg.slic.n_superpixels = 60;
        cfg.train.n_iter = 40;
        cfg.train.hidden1 = 16;
        cfg.train.hidden2 = 12;
        cfg
    }

    #[test]
    fn pipeline_runs_and_emits_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_setup(dir.path());
        let out = dir.path().join("run");
        fs::create_dir_all(&out).unwrap();
        let outcome = run_pipeline(&cfg, &out).unwrap();
        assert!(outcome.report.oa > 0.0);
        for name in ["map.ppm", "map.json", "report.json", "history.csv", "manifest.json"] {
            assert!(out.join(name).exists(), "{name} missing");
        }
        // PPM has one pixel per cube pixel
        let ppm = fs::read(out.join("map.ppm")).unwrap();
        let header = format!("P6\n{} {}\n255\n", 32, 32);
        assert_eq!(ppm.len(), header.len() + 3 * 32 * 32);
    }

    #[test]
    fn rerun_with_same_config_reproduces_report_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_setup(dir.path());
        let out1 = dir.path().join("a");
        let out2 = dir.path().join("b");
        fs::create_dir_all(&out1).unwrap();
        fs::create_dir_all(&out2).unwrap();
        let o1 = run_pipeline(&cfg, &out1).unwrap();
        let o2 = run_pipeline(&cfg, &out2).unwrap();
        let r1 = fs::read(&o1.report_path).unwrap();
        let r2 = fs::read(&o2.report_path).unwrap();
        assert_eq!(r1, r2);
        let m1 = fs::read(&o1.manifest_path).unwrap();
        let m2 = fs::read(&o2.manifest_path).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn cache_hit_reproduces_report_in_same_dir() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_setup(dir.path());
        let out = dir.path().join("run");
        fs::create_dir_all(&out).unwrap();
        let o1 = run_pipeline(&cfg, &out).unwrap();
        let r1 = fs::read(&o1.report_path).unwrap();
        let o2 = run_pipeline(&cfg, &out).unwrap();
        let r2 = fs::read(&o2.report_path).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn all_three_modes_produce_reports() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synth_setup(dir.path());
        for (i, mode) in [Mode::Grnn, Mode::MlpOnly, Mode::LabelpropOnly]
            .into_iter()
            .enumerate()
        {
            cfg.mode = mode;
            let out = dir.path().join(format!("mode-{i}"));
            fs::create_dir_all(&out).unwrap();
            let outcome = run_pipeline(&cfg, &out).unwrap();
            assert!(outcome.report.n_test > 0);
        }
    }

    #[test]
    fn trials_aggregate_mean_and_sd() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synth_setup(dir.path());
        cfg.train.n_iter = 15;
        let out = dir.path().join("trials");
        fs::create_dir_all(&out).unwrap();
        let report = run_trials(&cfg, 2, 100, &out).unwrap();
        assert_eq!(report.trials.len(), 2);
        assert!(report.oa_sd >= 0.0);

        // single trial has zero SD
        let out1 = dir.path().join("single");
        fs::create_dir_all(&out1).unwrap();
        let single = run_trials(&cfg, 1, 5, &out1).unwrap();
        assert_eq!(single.oa_sd, 0.0);

        // identical base seed reproduces the aggregate
        let out2 = dir.path().join("again");
        fs::create_dir_all(&out2).unwrap();
        let again = run_trials(&cfg, 2, 100, &out2).unwrap();
        assert_eq!(report.oa_mean, again.oa_mean);
        assert_eq!(report.kappa_mean, again.kappa_mean);
    }

    #[test]
    fn neutralized_grnn_approximates_mlp_only() {
        // with the regularizers off, the confidence gate open, and the
        // propagation strength at ~0, the grnn map is a per-superpixel
        // majority vote of the classifier, which tracks the pixel map
        // closely when predictions are spatially coherent
        let dir = tempfile::tempdir().unwrap();
        let mut diffs = Vec::new();
        for seed in 0..5u64 {
            let mut synth = SynthConfig::desk();
            synth.seed = seed;
            synth.noise_sigma = 0.05;
            let scene_dir = dir.path().join(format!("scene-{seed}"));
            let (cube, sparse, truth) = write_synth_scene(&synth, &scene_dir).unwrap();
            let mut cfg = PipelineConfig::synth_desk();
            cfg.cube = cube;
            cfg.labels = sparse;
            cfg.eval_labels = Some(truth);
            cfg.seed = seed;
            cfg.train.weights = LossWeights::zero();
            cfg.confidence_threshold = 0.01;
            cfg.alpha = 1e-9;

            let mut run_mode = |mode: Mode, name: &str| {
                let out = scene_dir.join(name);
                fs::create_dir_all(&out).unwrap();
                let mut c = cfg.clone();
                c.mode = mode;
                run_pipeline(&c, &out).unwrap().report.oa
            };
            let grnn_oa = run_mode(Mode::Grnn, "grnn");
            let mlp_oa = run_mode(Mode::MlpOnly, "mlp");
            diffs.push((grnn_oa - mlp_oa).abs());
        }
        let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
        assert!(mean_diff <= 0.005, "mean OA gap {mean_diff:.4} > 0.5%");
    }

    #[test]
    fn missing_test_labels_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synth_setup(dir.path());
        cfg.eval_labels = None;
        cfg.split = None;
        let out = dir.path().join("bad");
        fs::create_dir_all(&out).unwrap();
        let err = run_pipeline(&cfg, &out).unwrap_err();
        assert!(err.to_string().contains("evaluate"), "{err}");
    }
}
