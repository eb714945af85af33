//! Semi-supervised hyperspectral image classification on superpixel graphs.
//!
//! The pipeline reduces a reflectance cube with PCA, over-segments the first
//! principal component into superpixels, builds a sparse similarity graph
//! over them, trains a pixelwise MLP under a graph-regularized objective,
//! augments the sparse ground truth with high-confidence predictions, and
//! propagates labels over the graph to produce a classification map that is
//! constant within each superpixel.
//!
//! See the `grnn-cli` crate for the batch front end.

pub mod classmap;
pub mod container;
pub mod cube;
pub mod error;
pub mod graph;
pub mod labelmap;
pub mod labels;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod pca;
pub mod pipeline;
pub mod propagate;
pub mod segmentation;
pub mod slic;
pub mod synth;
pub mod train;

pub use classmap::{emit_map, ClassificationMap, Provenance};
pub use cube::{load_cube, save_cube, HsiCube};
pub use error::{GrnnError, Result};
pub use graph::{build_adjacency, extract_features, GraphConfig, SuperpixelGraph};
pub use labelmap::{load_labels, save_labels, LabelMap};
pub use labels::{hard_labels, one_hot, soft_labels, SuperpixelLabels};
pub use metrics::{evaluate, split_labels, EvalReport, SplitSpec};
pub use mlp::{superpixel_prediction, MlpParams, MlpShape};
pub use pca::{apply_pca, first_component_image, fit_pca, PcaModel};
pub use pipeline::{run_pipeline, run_trials, Mode, PipelineConfig};
pub use propagate::{confident_set, final_labels, merge_labels, propagate};
pub use segmentation::SuperpixelSegmentation;
pub use slic::{enforce_connectivity, slic_segment, SlicConfig};
pub use synth::{generate, SynthConfig, SynthScene};
pub use train::{adam_step, loss, loss_and_gradient, train, AdamState, LossWeights, TrainConfig};
