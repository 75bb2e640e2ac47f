//! xaikit: a small, dependency-light toolkit for training a compact dropout
//! CNN and evaluating pixel-attribution explanations of it — saliency methods,
//! Monte-Carlo-dropout uncertainty, mask-based localisation metrics and
//! pixel-flipping faithfulness curves — with seedable, reproducible runs.

pub mod attribution;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod dataset;
pub mod error;
pub mod faithfulness;
pub mod fsio;
pub mod imageio;
pub mod kernels;
pub mod localisation;
pub mod mask;
pub mod model;
pub mod order;
pub mod raster;
pub mod report;
pub mod rng;
pub mod svg;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod uncertainty;

pub use checkpoint::{Checkpoint, TrainMeta};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use faithfulness::{
    curve_auc, flip_pixels, pf_curve, pf_mcd_experiment, pf_random_baseline, FillStrategy,
    FlipConfig, FlippingCurve, MCDExperimentConfig, PFBundle, RandomBaseline,
};
pub use localisation::{
    evaluate_localisation, LocMetric, LocalisationConfig, LocalisationResult,
};
pub use model::{evaluate, ConvBlockSpec, DropoutPlan, EvalReport, Model, ModelSpec};
pub use rng::{RngStream, StreamId};
pub use tape::{DropoutMode, Tape, Var};
pub use tensor::Tensor;
pub use train::{split_dataset, train, TrainConfig, TrainOutcome};
pub use uncertainty::{
    mcd_predict, mcd_saliency_stack, quantile_map, MCDConfig, PredictiveDistribution,
    QuantileMethod, QuantileSaliencyMap, SaliencyStack,
};
