//! Batch front end for the superpixel-graph classification pipeline.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use grnn::graph::PortableGraph;
use grnn::pipeline::{self, Manifest, Mode, PipelineConfig};
use grnn::train::TrainConfig;
use grnn::{
    apply_pca, build_adjacency, evaluate, extract_features, final_labels, first_component_image,
    fit_pca, load_cube, load_labels, propagate, save_cube, slic_segment, ClassificationMap,
    GraphConfig, LossWeights, MlpParams, SlicConfig, SuperpixelSegmentation,
    SynthConfig,
};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "grnn",
    about = "Semi-supervised hyperspectral classification over superpixel graphs",
    version
)]
struct Cli {
    /// Worker threads for intra-stage parallelism (1 = sequential, 0 = auto).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene (cube + sparse and full label CSVs).
    Synth(SynthArgs),
    /// Fit the spectral reduction and write the reduced cube.
    Preprocess(PreprocessArgs),
    /// Segment the first component of a reduced cube into superpixels.
    Segment(SegmentArgs),
    /// Build the superpixel graph from a reduced cube and a segmentation.
    Graph(GraphArgs),
    /// Train the pixelwise classifier under the regularized objective.
    Train(TrainArgs),
    /// Produce a classification map from a trained model.
    Classify(ClassifyArgs),
    /// Score a classification map against truth labels.
    Eval(EvalArgs),
    /// Run the full pipeline from a config file or preset.
    Run(RunArgs),
    /// Repeat the pipeline over several seeds and aggregate OA / kappa.
    Trials(TrialsArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 32)]
    bands: usize,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 3)]
    crowns_per_class: usize,
    #[arg(long, default_value_t = 0.22)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.01)]
    label_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Cube header path.
    #[arg(long)]
    cube: PathBuf,
    #[arg(long, default_value_t = 0.9990)]
    variance: f64,
    #[arg(long, default_value_t = false)]
    standardize: bool,
    /// Reduced cube header path to write.
    #[arg(long)]
    out: PathBuf,
    /// Also save the fitted model here.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Reduced cube header path.
    #[arg(long)]
    reduced: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_superpixels: usize,
    #[arg(long, default_value_t = 0.1)]
    compactness: f64,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    #[arg(long, default_value_t = 0.25)]
    min_size_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Segmentation header path to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional boundary-overlay PPM.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    reduced: PathBuf,
    #[arg(long)]
    seg: PathBuf,
    #[arg(long, default_value_t = 15.0)]
    bandwidth: f64,
    #[arg(long, default_value_t = 0.5)]
    spectral_tradeoff: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_spectral: f64,
    #[arg(long, default_value_t = 10.0)]
    sigma_spatial: f64,
    #[arg(long, default_value_t = 8)]
    connectivity: u8,
    #[arg(long, default_value_t = 20)]
    max_neighbors: usize,
    /// Graph JSON path to write (loadable by `train`).
    #[arg(long)]
    out: PathBuf,
    /// Optional `k,l,w` edge list dump.
    #[arg(long)]
    edges: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    reduced: PathBuf,
    #[arg(long)]
    seg: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// Training labels CSV.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    lambda_superpixel: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_graph: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_variance: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_entropy: f64,
    #[arg(long, default_value_t = 400)]
    n_iter: usize,
    #[arg(long, default_value_t = 196)]
    hidden1: usize,
    #[arg(long, default_value_t = 160)]
    hidden2: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = false)]
    unweighted_graph_term: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint header path to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV path.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    reduced: PathBuf,
    /// Required unless --pixel is set.
    #[arg(long)]
    seg: Option<PathBuf>,
    /// Graph JSON; required unless --pixel is set.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Ground-truth labels to augment; required unless --pixel is set.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Plain per-pixel argmax map (no augmentation or propagation).
    #[arg(long, default_value_t = false)]
    pixel: bool,
    #[arg(long, default_value_t = 0.4)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Map container path to write; a `.ppm` twin is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Map container path.
    #[arg(long)]
    map: PathBuf,
    /// Truth labels CSV.
    #[arg(long)]
    truth: PathBuf,
    /// Report JSON path (stdout gets the text table).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config JSON.
    #[arg(long, conflicts_with = "manifest")]
    config: Option<PathBuf>,
    /// Rerun from a previously written manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Preset: indian-pines, french-guiana, or synth-desk.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    eval_labels: Option<PathBuf>,
    /// grnn, mlp-only, or labelprop-only.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrialsArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 10)]
    n_trials: usize,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("rayon pool")?;
    }
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Segment(args) => cmd_segment(args),
        Command::Graph(args) => cmd_graph(args),
        Command::Train(args) => cmd_train(args),
        Command::Classify(args) => cmd_classify(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Run(args) => cmd_run(args),
        Command::Trials(args) => cmd_trials(args),
    }
}

/// `--out` flag, `GRNN_OUT_DIR`, or `./grnn-out`, in that order.
fn resolve_out_dir(flag: Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| std::env::var_os("GRNN_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("grnn-out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let out = resolve_out_dir(args.out)?;
    let cfg = SynthConfig {
        height: args.height,
        width: args.width,
        bands: args.bands,
        n_classes: args.classes,
        crowns_per_class: args.crowns_per_class,
        noise_sigma: args.noise_sigma,
        label_fraction: args.label_fraction,
        seed: args.seed,
        ..SynthConfig::desk()
    };
    let (cube, sparse, truth) = pipeline::write_synth_scene(&cfg, &out)?;
    println!("cube:   {}", cube.display());
    println!("labels: {} (sparse), {} (truth)", sparse.display(), truth.display());
    Ok(())
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let cube = load_cube(&args.cube)?;
    let model = fit_pca(&cube, args.variance, args.standardize)?;
    if model.degenerate {
        eprintln!("warning: zero spectral variance, keeping a single component");
    }
    let reduced = apply_pca(&model, &cube)?;
    save_cube(&reduced, &args.out)?;
    if let Some(model_path) = args.model {
        model.save(&model_path)?;
    }
    println!(
        "kept {} of {} bands ({} explained)",
        model.n_components(),
        cube.bands,
        if model.total_variance > 0.0 {
            format!(
                "{:.4}%",
                100.0 * model.explained_variance.iter().sum::<f64>() / model.total_variance
            )
        } else {
            "degenerate".into()
        }
    );
    Ok(())
}

fn cmd_segment(args: SegmentArgs) -> Result<()> {
    let reduced = load_cube(&args.reduced)?;
    let image = first_component_image(&reduced);
    let cfg = SlicConfig {
        n_superpixels: args.n_superpixels,
        compactness: args.compactness,
        max_iters: args.max_iters,
        min_size_fraction: args.min_size_fraction,
    };
    let seg = slic_segment(&image, reduced.height, reduced.width, &cfg, args.seed)?;
    seg.save(&args.out)?;
    if let Some(overlay) = args.overlay {
        fs::write(&overlay, seg.boundary_overlay(&image))
            .with_context(|| overlay.display().to_string())?;
    }
    println!("{} superpixels (target {})", seg.count, args.n_superpixels);
    Ok(())
}

fn cmd_graph(args: GraphArgs) -> Result<()> {
    let reduced = load_cube(&args.reduced)?;
    let seg = SuperpixelSegmentation::load(&args.seg)?;
    let cfg = GraphConfig {
        bandwidth: args.bandwidth,
        spectral_tradeoff: args.spectral_tradeoff,
        sigma_spectral: args.sigma_spectral,
        sigma_spatial: args.sigma_spatial,
        connectivity: args.connectivity,
        max_neighbors: args.max_neighbors,
    };
    let features = extract_features(&reduced, &seg)?;
    let graph = build_adjacency(&features, &seg, &cfg)?;
    let text = serde_json::to_string(&graph.to_portable())?;
    fs::write(&args.out, text).with_context(|| args.out.display().to_string())?;
    if let Some(edges) = args.edges {
        graph.write_edge_list(&edges)?;
    }
    println!("{} nodes, {} edges", graph.n, graph.n_edges());
    Ok(())
}

fn load_graph(path: &Path) -> Result<grnn::SuperpixelGraph> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let portable: PortableGraph = serde_json::from_str(&text)?;
    Ok(grnn::SuperpixelGraph::from_portable(portable)?)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let reduced = load_cube(&args.reduced)?;
    let seg = SuperpixelSegmentation::load(&args.seg)?;
    let graph = load_graph(&args.graph)?;
    let labels = load_labels(&args.labels, reduced.height, reduced.width)?;
    let c = labels.num_classes;
    let sup = grnn::soft_labels(&labels, &seg, c)?;
    let set = grnn::train::TrainingSet::new(&reduced, &seg, &graph, &sup, &labels, c)?;
    let cfg = TrainConfig {
        weights: LossWeights {
            lambda_superpixel: args.lambda_superpixel,
            lambda_graph: args.lambda_graph,
            lambda_variance: args.lambda_variance,
            lambda_entropy: args.lambda_entropy,
        },
        n_iter: args.n_iter,
        seed: args.seed,
        hidden1: args.hidden1,
        hidden2: args.hidden2,
        learning_rate: args.learning_rate,
        unweighted_graph_term: args.unweighted_graph_term,
        ..TrainConfig::default()
    };
    let (params, history) = grnn::train(&set, &cfg)?;
    params.save(&args.out)?;
    if let Some(history_path) = args.history {
        grnn::train::write_history(&history, &history_path)?;
    }
    let last = history.last().expect("n_iter >= 1");
    println!(
        "{} iterations, final loss {:.6} (pixel term {:.6})",
        history.len(),
        last.total,
        last.pixel_ce
    );
    Ok(())
}

fn cmd_classify(args: ClassifyArgs) -> Result<()> {
    let params = MlpParams::load(&args.model)?;
    let reduced = load_cube(&args.reduced)?;
    let map = if args.pixel {
        let c = params.shape.classes;
        let mut map = ClassificationMap::unclassified(reduced.height, reduced.width, c);
        for p in 0..reduced.n_pixels() {
            let probs = params.forward(reduced.pixel_flat(p));
            let best = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            map.labels[p] = (best + 1) as u32;
            map.provenance[p] = grnn::Provenance::Predicted;
        }
        map
    } else {
        let (Some(seg_path), Some(graph_path), Some(labels_path)) =
            (&args.seg, &args.graph, &args.labels)
        else {
            bail!("--seg, --graph, and --labels are required without --pixel");
        };
        let seg = SuperpixelSegmentation::load(seg_path)?;
        let graph = load_graph(graph_path)?;
        let labels = load_labels(labels_path, reduced.height, reduced.width)?;
        let augmented = grnn::propagate::augment(&params, &reduced, &labels, args.tau)?;
        let t = grnn::propagate::hard_label_matrix(
            &augmented.merged,
            &seg,
            params.shape.classes,
        )?;
        let t_star = propagate(&graph, &t, args.alpha)?;
        final_labels(&t_star, &seg)?
    };
    map.save(&args.out)?;
    let ppm = args.out.with_extension("ppm");
    grnn::emit_map(&map, &grnn::classmap::default_palette(map.num_classes), &ppm)?;
    println!("map: {} / {}", args.out.display(), ppm.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let map = ClassificationMap::load(&args.map)?;
    let truth = load_labels(&args.truth, map.height, map.width)?;
    let report = evaluate(&map, &truth)?;
    print!("{}", report.to_text());
    if let Some(out) = args.out {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(&out, text).with_context(|| out.display().to_string())?;
    }
    Ok(())
}

fn resolve_config(args: &RunArgs) -> Result<PipelineConfig> {
    let mut cfg = if let Some(manifest_path) = &args.manifest {
        let text = fs::read_to_string(manifest_path)
            .with_context(|| manifest_path.display().to_string())?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        manifest.config
    } else if let Some(config_path) = &args.config {
        PipelineConfig::load(config_path)?
    } else if let Some(preset) = &args.preset {
        PipelineConfig::preset(preset)
            .with_context(|| format!("unknown preset `{preset}`"))?
    } else {
        bail!("one of --config, --manifest, or --preset is required");
    };
    if let Some(cube) = &args.cube {
        cfg.cube = cube.clone();
    }
    if let Some(labels) = &args.labels {
        cfg.labels = labels.clone();
    }
    if let Some(eval_labels) = &args.eval_labels {
        cfg.eval_labels = Some(eval_labels.clone());
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.cube.as_os_str().is_empty() || cfg.labels.as_os_str().is_empty() {
        bail!("config must name a cube and a labels file (flags --cube / --labels)");
    }
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let out = resolve_out_dir(args.out.clone())?;
    let cfg = resolve_config(&args)?;
    let outcome = pipeline::run_pipeline(&cfg, &out)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "OA = {:.4}, kappa = {:.4} over {} test pixels",
        outcome.report.oa, outcome.report.kappa, outcome.report.n_test
    );
    println!("report:   {}", outcome.report_path.display());
    println!("map:      {}", outcome.map_path.display());
    println!("manifest: {}", outcome.manifest_path.display());
    Ok(())
}

fn cmd_trials(args: TrialsArgs) -> Result<()> {
    let out = resolve_out_dir(args.run.out.clone())?;
    let cfg = resolve_config(&args.run)?;
    let report = pipeline::run_trials(&cfg, args.n_trials, args.base_seed, &out)?;
    println!(
        "OA    = {:.4} +- {:.4} over {} trials",
        report.oa_mean, report.oa_sd, report.n_trials
    );
    println!("kappa = {:.4} +- {:.4}", report.kappa_mean, report.kappa_sd);
    println!("details: {}", out.join("trials.json").display());
    Ok(())
}
