//! Scratch benchmark over the desk-scale synthetic scene: runs the three
//! pipeline modes over several seeds and prints OA statistics.
//!
//! Usage: bench_synth [n_seeds] [key=value ...]
//! keys: noise cpc lf sep nsup ss sl lg lsp lv len niter h1 h2 tau alpha

use grnn::pipeline::{mean_sd, run_pipeline, write_synth_scene, Mode, PipelineConfig};
use grnn::SynthConfig;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n_seeds: usize = args
        .first()
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let mut synth = SynthConfig::desk();
    let mut cfg = PipelineConfig::synth_desk();
    for kv in args.iter().skip(1) {
        let (k, v) = kv.split_once('=').expect("key=value");
        let f: f64 = v.parse().expect("numeric value");
        match k {
            "noise" => synth.noise_sigma = f,
            "cpc" => synth.crowns_per_class = f as usize,
            "lf" => synth.label_fraction = f,
            "sep" => synth.spectral_separation = f,
            "nsup" => cfg.slic.n_superpixels = f as usize,
            "ss" => cfg.graph.sigma_spectral = f,
            "sl" => cfg.graph.sigma_spatial = f,
            "lg" => cfg.train.weights.lambda_graph = f,
            "lsp" => cfg.train.weights.lambda_superpixel = f,
            "lv" => cfg.train.weights.lambda_variance = f,
            "len" => cfg.train.weights.lambda_entropy = f,
            "niter" => cfg.train.n_iter = f as usize,
            "h1" => cfg.train.hidden1 = f as usize,
            "h2" => cfg.train.hidden2 = f as usize,
            "tau" => cfg.confidence_threshold = f,
            "alpha" => cfg.alpha = f,
            other => panic!("unknown key {other}"),
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let mut oa: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    for seed in 0..n_seeds as u64 {
        synth.seed = seed;
        let scene_dir = dir.path().join(format!("scene-{seed}"));
        let (cube, sparse, truth) = write_synth_scene(&synth, &scene_dir).unwrap();
        cfg.cube = cube;
        cfg.labels = sparse;
        cfg.eval_labels = Some(truth);
        cfg.seed = seed;

        for (name, mode) in [
            ("grnn", Mode::Grnn),
            ("mlp-only", Mode::MlpOnly),
            ("labelprop-only", Mode::LabelpropOnly),
        ] {
            let out = scene_dir.join(name);
            std::fs::create_dir_all(&out).unwrap();
            let mut c = cfg.clone();
            c.mode = mode;
            let outcome = run_pipeline(&c, &out).unwrap();
            if n_seeds <= 12 {
                println!(
                    "seed {seed:2} {name:15} OA {:.4} kappa {:.4}",
                    outcome.report.oa, outcome.report.kappa
                );
            }
            oa.entry(name).or_default().push(outcome.report.oa);
        }
    }
    println!("--- total {:.2?} ---", t0.elapsed());
    for (name, values) in &oa {
        let (mean, sd) = mean_sd(values);
        println!("{name:15} OA {mean:.4} +- {sd:.4}");
    }
}
