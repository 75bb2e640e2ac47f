//! Command-line interface: seven subcommands (train, eval, explain, localise,
//! mcd, flip, synth) over one option-resolution scheme.
//!
//! Every option resolves as: command-line flag, else `XAIKIT_*` environment
//! variable, else the `--config` JSON file, else a built-in default. The fully
//! resolved configuration is embedded in every artifact (CSV comment line,
//! JSON `run_config` key) and written as `run_config.json` alongside them, so
//! outputs are self-describing. All primary outputs are byte-deterministic
//! for a fixed configuration and seed.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::attribution::{self, Aggregation, IGConfig, Method, SaliencyMap};
use crate::checkpoint::Checkpoint;
use crate::data::{self, RunManifest};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::faithfulness::{pf_mcd_experiment, FillStrategy, FlipConfig, MCDExperimentConfig};
use crate::localisation::{evaluate_localisation, LocMetric, LocalisationConfig};
use crate::model::{evaluate, Model, ModelSpec};
use crate::order::argmax_f32;
use crate::report::{fmt_f64, write_csv, write_json, write_run_config};
use crate::svg;
use crate::synth::{generate, SyntheticSpec};
use crate::tensor::Tensor;
use crate::train::{train, TrainConfig};
use crate::uncertainty::{
    mcd_predict, mcd_saliency_stack, quantile_map, MCDConfig, QuantileMethod,
};

const ALL_METHODS: [Method; 3] = [
    Method::Gradient,
    Method::GradientXInput,
    Method::IntegratedGradients,
];

#[derive(Parser)]
#[command(
    name = "xaikit",
    version,
    about = "Train a small dropout CNN and evaluate pixel-attribution explanations of it"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a dataset manifest
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a checkpoint
    Eval(EvalArgs),
    /// Saliency maps per image and method
    Explain(ExplainArgs),
    /// Table of localisation metrics against segmentation masks
    Localise(LocaliseArgs),
    /// Monte-Carlo-dropout distribution and quantile saliency maps
    Mcd(McdArgs),
    /// Pixel-flipping curves from MCD quantile rankings
    Flip(FlipArgs),
    /// Generate a synthetic dataset with exact masks
    Synth(SynthArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags and environment variables override its values
    #[arg(long, env = "XAIKIT_CONFIG")]
    config: Option<PathBuf>,
    /// Dataset manifest path
    #[arg(long, env = "XAIKIT_MANIFEST")]
    manifest: Option<PathBuf>,
    /// Model checkpoint path
    #[arg(long, env = "XAIKIT_CHECKPOINT")]
    checkpoint: Option<PathBuf>,
    /// Output directory
    #[arg(long, env = "XAIKIT_OUT")]
    out: Option<PathBuf>,
    /// Global seed
    #[arg(long, env = "XAIKIT_SEED")]
    seed: Option<u64>,
}

/// Optional keys of the `--config` JSON file. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    manifest: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    split: Option<String>,
    methods: Option<Vec<String>>,
    aggregation: Option<String>,
    ig_steps: Option<usize>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch: Option<usize>,
    dropout: Option<f32>,
    val_ratio: Option<f64>,
    early_stop: Option<f64>,
    limit: Option<usize>,
    k: Option<usize>,
    samples: Option<usize>,
    quantiles: Option<Vec<f64>>,
    rate: Option<f32>,
    index: Option<usize>,
    class: Option<String>,
    step: Option<f64>,
    max: Option<f64>,
    fill: Option<String>,
    baseline_seeds: Option<usize>,
    kind: Option<String>,
    train: Option<usize>,
    val: Option<usize>,
    test: Option<usize>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<ConfigFile> {
        match path {
            None => Ok(ConfigFile::default()),
            Some(p) => {
                let text = crate::fsio::read_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::format(p, e.to_string()))
            }
        }
    }
}

fn need<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    flag.or(file)
        .ok_or_else(|| Error::invalid_argument(format!("missing required --{name}")))
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn parse_method(s: &str) -> Result<Method> {
    ALL_METHODS
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| {
            Error::invalid_argument(format!(
                "unknown method '{s}' (expected gradient, gradient-x-input, or integrated-gradients)"
            ))
        })
}

fn parse_methods(list: &[String]) -> Result<Vec<Method>> {
    if list.is_empty() {
        return Err(Error::invalid_argument("method list is empty"));
    }
    list.iter().map(|s| parse_method(s)).collect()
}

fn parse_aggregation(s: &str) -> Result<Aggregation> {
    [Aggregation::RawSum, Aggregation::Positive, Aggregation::Absolute]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| {
            Error::invalid_argument(format!(
                "unknown aggregation '{s}' (expected raw-sum, positive, or absolute)"
            ))
        })
}

fn parse_fill(s: &str) -> Result<FillStrategy> {
    match s {
        "dataset-mean" => Ok(FillStrategy::DatasetMean),
        "per-image-mean" => Ok(FillStrategy::PerImageMean),
        other => match other.strip_prefix("constant:") {
            Some(v) => v
                .parse::<f32>()
                .map(FillStrategy::Constant)
                .map_err(|_| Error::invalid_argument(format!("bad constant fill '{v}'"))),
            None => Err(Error::invalid_argument(format!(
                "unknown fill '{other}' (expected dataset-mean, per-image-mean, or constant:VALUE)"
            ))),
        },
    }
}

fn method_names(methods: &[Method]) -> Vec<String> {
    methods.iter().map(|m| m.name().to_string()).collect()
}

fn default_method_names() -> Vec<String> {
    ALL_METHODS.iter().map(|m| m.name().to_string()).collect()
}

/// Indices of `man` that belong to `split` ("all" selects everything; a
/// manifest without split labels always selects everything).
fn select_split(man: &RunManifest, split: &str) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..man.len()).collect();
    if split == "all" || man.records.iter().all(|r| r.split.is_none()) {
        return Ok(all);
    }
    let idx: Vec<usize> = all
        .into_iter()
        .filter(|&i| man.records[i].split.as_deref() == Some(split))
        .collect();
    if idx.is_empty() {
        return Err(Error::invalid_argument(format!(
            "no records in split '{split}'"
        )));
    }
    Ok(idx)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Deterministic top-1 prediction (ties -> lowest class index).
fn predicted_label(model: &Model, image: &Tensor) -> Result<usize> {
    Ok(argmax_f32(&model.predict(image)?))
}

fn zero_ig(shape: (usize, usize, usize), steps: usize) -> IGConfig {
    IGConfig {
        baseline: Tensor::zeros(vec![shape.0, shape.1, shape.2]),
        steps,
    }
}

fn explain_one(
    model: &Model,
    image: &Tensor,
    label: usize,
    method: Method,
    ig: &IGConfig,
    agg: Aggregation,
) -> Result<SaliencyMap> {
    match method {
        Method::Gradient => attribution::gradient(model, image, label, agg, None),
        Method::GradientXInput => attribution::gradient_x_input(model, image, label, agg, None),
        Method::IntegratedGradients => {
            attribution::integrated_gradients(model, image, label, ig, agg, None)
        }
    }
}

pub fn run() -> Result<()> {
    dispatch(Cli::parse())
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Localise(a) => cmd_localise(a),
        Command::Mcd(a) => cmd_mcd(a),
        Command::Flip(a) => cmd_flip(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

// ---------------------------------------------------------------- train

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Maximum training epochs
    #[arg(long, env = "XAIKIT_EPOCHS")]
    epochs: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Mini-batch size
    #[arg(long)]
    batch: Option<usize>,
    /// Dropout rate before the classification head
    #[arg(long)]
    dropout: Option<f32>,
    /// Validation fraction when the manifest has no split labels
    #[arg(long)]
    val_ratio: Option<f64>,
    /// Stop once validation accuracy reaches this value
    #[arg(long)]
    early_stop: Option<f64>,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let manifest = need(a.common.manifest, file.manifest, "manifest")?;
    let out = need(a.common.out, file.out, "out")?;
    let seed = pick(a.common.seed, file.seed, 0);
    let epochs = pick(a.epochs, file.epochs, 20);
    let lr = pick(a.lr, file.lr, 1e-3);
    let batch = pick(a.batch, file.batch, 32);
    let dropout = pick(a.dropout, file.dropout, 0.5);
    let val_ratio = pick(a.val_ratio, file.val_ratio, 0.25);
    let early_stop = a.early_stop.or(file.early_stop);
    let run_config = json!({
        "command": "train",
        "manifest": manifest,
        "out": out,
        "seed": seed,
        "epochs": epochs,
        "lr": lr,
        "batch": batch,
        "dropout": dropout,
        "val_ratio": val_ratio,
        "early_stop": early_stop,
    });

    let man = data::load_manifest(&manifest)?;
    let labeled = man.records.iter().any(|r| r.split.is_some());
    let (train_man, val_man) = if labeled {
        (
            man.subset(&select_split(&man, "train")?),
            man.subset(&select_split(&man, "val")?),
        )
    } else {
        man.split_stratified(1.0 - val_ratio, seed)?
    };
    let train_ds = train_man.load_dataset()?;
    let val_ds = val_man.load_dataset()?;
    let (c, h, w) = train_ds.shape;
    let spec = ModelSpec {
        dropout,
        ..ModelSpec::desk((c, h, w), man.class_names.len())
    };
    let cfg = TrainConfig {
        lr,
        epochs,
        batch,
        seed,
        early_stop_val_acc: early_stop,
    };
    let outcome = train(&spec, &train_ds, &val_ds, &cfg)?;

    ensure_dir(&out)?;
    let ckpt = Checkpoint::from_outcome(outcome);
    ckpt.save(&out.join("model.ckpt"))?;
    let rows: Vec<Vec<String>> = ckpt
        .meta
        .history
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                fmt_f64(e.train_loss),
                fmt_f64(e.val_loss),
                fmt_f64(e.val_acc),
            ]
        })
        .collect();
    write_csv(
        &out.join("train_log.csv"),
        &run_config,
        &["epoch", "train_loss", "val_loss", "val_acc"],
        &rows,
    )?;
    write_run_config(&out, &run_config)?;
    let last = ckpt.meta.history.last();
    eprintln!(
        "trained {} epochs (train {} / val {}); final val_acc {}",
        ckpt.meta.epochs_run,
        train_ds.len(),
        val_ds.len(),
        last.map_or_else(|| "n/a".into(), |e| fmt_f64(e.val_acc)),
    );
    Ok(())
}

// ----------------------------------------------------------------- eval

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Manifest split to evaluate ("all" for every record)
    #[arg(long)]
    split: Option<String>,
}

fn load_model_and_subset(
    manifest: &Path,
    checkpoint: &Path,
    split: &str,
) -> Result<(Checkpoint, RunManifest, Dataset)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let man = data::load_manifest(manifest)?;
    let sub = man.subset(&select_split(&man, split)?);
    let ds = sub.load_dataset()?;
    if ds.shape != ckpt.model.spec.input {
        return Err(Error::shape_mismatch(
            "dataset vs model input",
            &[ds.shape.0, ds.shape.1, ds.shape.2],
            &[
                ckpt.model.spec.input.0,
                ckpt.model.spec.input.1,
                ckpt.model.spec.input.2,
            ],
        ));
    }
    Ok((ckpt, sub, ds))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let manifest = need(a.common.manifest, file.manifest, "manifest")?;
    let checkpoint = need(a.common.checkpoint, file.checkpoint, "checkpoint")?;
    let out = need(a.common.out, file.out, "out")?;
    let seed = pick(a.common.seed, file.seed, 0);
    let split = pick(a.split, file.split, "test".into());
    let run_config = json!({
        "command": "eval",
        "manifest": manifest,
        "checkpoint": checkpoint,
        "out": out,
        "seed": seed,
        "split": split,
    });

    let (ckpt, man, ds) = load_model_and_subset(&manifest, &checkpoint, &split)?;
    let rep = evaluate(&ckpt.model, &ds, &[1, 3])?;
    ensure_dir(&out)?;
    write_json(
        &out.join("eval.json"),
        &run_config,
        json!({
            "n": rep.n,
            "top1": rep.topk[0].1,
            "top3": rep.topk[1].1,
            "topk": rep.topk.iter().map(|&(k, acc)| json!({"k": k, "accuracy": acc})).collect::<Vec<_>>(),
            "classes": man.class_names,
            "split": split,
        }),
    )?;
    let mut header: Vec<&str> = vec!["true\\pred"];
    header.extend(man.class_names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = (0..rep.classes)
        .map(|t| {
            let mut row = vec![man.class_names[t].clone()];
            row.extend((0..rep.classes).map(|p| rep.at(t, p).to_string()));
            row
        })
        .collect();
    write_csv(&out.join("confusion.csv"), &run_config, &header, &rows)?;
    write_run_config(&out, &run_config)?;
    eprintln!(
        "evaluated {} images: top1 {} top3 {}",
        rep.n,
        fmt_f64(rep.topk[0].1),
        fmt_f64(rep.topk[1].1)
    );
    Ok(())
}

// -------------------------------------------------------------- explain

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    split: Option<String>,
    /// Comma-separated attribution methods
    #[arg(long, env = "XAIKIT_METHODS", value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Channel aggregation: raw-sum, positive, or absolute
    #[arg(long)]
    aggregation: Option<String>,
    /// Integrated-gradients path steps
    #[arg(long)]
    ig_steps: Option<usize>,
    /// Explain only the first N selected images
    #[arg(long)]
    limit: Option<usize>,
}

fn cmd_explain(a: ExplainArgs) -> Result<()> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let manifest = need(a.common.manifest, file.manifest, "manifest")?;
    let checkpoint = need(a.common.checkpoint, file.checkpoint, "checkpoint")?;
    let out = need(a.common.out, file.out, "out")?;
    let seed = pick(a.common.seed, file.seed, 0);
    let split = pick(a.split, file.split, "test".into());
    let methods = parse_methods(&pick(a.methods, file.methods, default_method_names()))?;
    let agg = parse_aggregation(&pick(a.aggregation, file.aggregation, "absolute".into()))?;
    let ig_steps = pick(a.ig_steps, file.ig_steps, 64);
    let limit = a.limit.or(file.limit);
    let run_config = json!({
        "command": "explain",
        "manifest": manifest,
        "checkpoint": checkpoint,
        "out": out,
        "seed": seed,
        "split": split,
        "methods": method_names(&methods),
        "aggregation": agg.name(),
        "ig_steps": ig_steps,
        "limit": limit,
        "target": "predicted-label",
    });

    let (ckpt, man, ds) = load_model_and_subset(&manifest, &checkpoint, &split)?;
    let n = limit.map_or(ds.len(), |l| l.min(ds.len()));
    if n == 0 {
        return Err(Error::invalid_argument("nothing to explain (limit 0?)"));
    }
    let ig = zero_ig(ds.shape, ig_steps);
    let maps_dir = out.join("maps");
    ensure_dir(&maps_dir)?;
    let mut entries = Vec::with_capacity(n * methods.len());
    for i in 0..n {
        let image = ds.image_tensor(i);
        let predicted = predicted_label(&ckpt.model, &image)?;
        for &method in &methods {
            let map = explain_one(&ckpt.model, &image, predicted, method, &ig, agg)?;
            let base = maps_dir.join(format!("{i:03}_{}", method.name()));
            map.save(&base, Some(seed), None)?;
            entries.push(json!({
                "index": i,
                "image": man.records[i].image_rel,
                "true_class": man.records[i].class_name,
                "predicted": man.class_names[predicted],
                "target_label": predicted,
                "method": method.name(),
                "base": format!("maps/{i:03}_{}", method.name()),
            }));
        }
    }
    write_json(
        &out.join("explain_index.json"),
        &run_config,
        json!({
            "target": "predicted-label",
            "count": entries.len(),
            "entries": entries,
        }),
    )?;
    write_run_config(&out, &run_config)?;
    eprintln!("wrote {} saliency maps to {}", n * methods.len(), maps_dir.display());
    Ok(())
}

// ------------------------------------------------------------- localise

#[derive(Args)]
struct LocaliseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    split: Option<String>,
    #[arg(long, env = "XAIKIT_METHODS", value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    aggregation: Option<String>,
    #[arg(long)]
    ig_steps: Option<usize>,
    /// Pixel budget for top-k intersection
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
}

fn cmd_localise(a: LocaliseArgs) -> Result<()> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let manifest = need(a.common.manifest, file.manifest, "manifest")?;
    let checkpoint = need(a.common.checkpoint, file.checkpoint, "checkpoint")?;
    let out = need(a.common.out, file.out, "out")?;
    let seed = pick(a.common.seed, file.seed, 0);
    let split = pick(a.split, file.split, "test".into());
    let methods = parse_methods(&pick(a.methods, file.methods, default_method_names()))?;
    let agg = parse_aggregation(&pick(a.aggregation, file.aggregation, "positive".into()))?;
    let ig_steps = pick(a.ig_steps, file.ig_steps, 64);
    let k = pick(a.k, file.k, crate::localisation::DEFAULT_TOP_K);
    let limit = a.limit.or(file.limit);
    let run_config = json!({
        "command": "localise",
        "manifest": manifest,
        "checkpoint": checkpoint,
        "out": out,
        "seed": seed,
        "split": split,
        "methods": method_names(&methods),
        "aggregation": agg.name(),
        "ig_steps": ig_steps,
        "k": k,
        "limit": limit,
        "target": "predicted-label",
        "mask": "part-union",
    });

    let (ckpt, man, ds) = load_model_and_subset(&manifest, &checkpoint, &split)?;
    let all_masks = man.load_masks()?;
    let masked: Vec<usize> = (0..ds.len()).filter(|&i| all_masks[i].is_some()).collect();
    if masked.is_empty() {
        return Err(Error::invalid_argument(
            "no records in this split carry a segmentation mask",
        ));
    }
    let take = limit.map_or(masked.len(), |l| l.min(masked.len()));
    let masked = &masked[..take];
    let masks: Vec<_> = masked
        .iter()
        .map(|&i| all_masks[i].clone().unwrap())
        .collect();
    let ig = zero_ig(ds.shape, ig_steps);
    let loc_cfg = LocalisationConfig { k };

    let mut per_method = Vec::with_capacity(methods.len());
    for &method in &methods {
        let mut maps = Vec::with_capacity(masked.len());
        for &i in masked {
            let image = ds.image_tensor(i);
            let predicted = predicted_label(&ckpt.model, &image)?;
            maps.push(explain_one(&ckpt.model, &image, predicted, method, &ig, agg)?);
        }
        per_method.push(evaluate_localisation(&maps, &masks, &loc_cfg)?);
    }

    ensure_dir(&out)?;
    let mut header: Vec<&str> = vec!["metric"];
    let names = method_names(&methods);
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = LocMetric::ALL
        .iter()
        .map(|metric| {
            let mut row = vec![metric.display_name().to_string()];
            for results in &per_method {
                let r = results.iter().find(|r| r.metric == *metric).unwrap();
                row.push(fmt_f64(r.mean));
            }
            row
        })
        .collect();
    write_csv(&out.join("localisation.csv"), &run_config, &header, &rows)?;
    let detail: Value = methods
        .iter()
        .zip(&per_method)
        .map(|(m, results)| {
            let metrics: Value = results
                .iter()
                .map(|r| {
                    (
                        r.metric.id().to_string(),
                        json!({
                            "mean": r.mean,
                            "samples": r.samples,
                            "skipped": r.skipped,
                            "scores": r.scores,
                        }),
                    )
                })
                .collect::<serde_json::Map<_, _>>()
                .into();
            (m.name().to_string(), metrics)
        })
        .collect::<serde_json::Map<_, _>>()
        .into();
    write_json(
        &out.join("localisation.json"),
        &run_config,
        json!({
            "methods": detail,
            "samples_with_masks": masked.len(),
        }),
    )?;
    write_run_config(&out, &run_config)?;
    eprintln!(
        "localisation over {} masked images x {} methods written to {}",
        masked.len(),
        methods.len(),
        out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ mcd

#[derive(Args)]
struct McdArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    split: Option<String>,
    /// Index of the image within the selected split
    #[arg(long)]
    index: Option<usize>,
    /// MCD sample count T
    #[arg(long, env = "XAIKIT_SAMPLES")]
    samples: Option<usize>,
    /// Dropout-rate override (e.g. 0.0 for a degenerate run)
    #[arg(long)]
    rate: Option<f32>,
    #[arg(long, env = "XAIKIT_METHODS", value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Comma-separated quantiles for the saliency maps
    #[arg(long, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
    #[arg(long)]
    aggregation: Option<String>,
    #[arg(long)]
    ig_steps: Option<usize>,
}

fn cmd_mcd(a: McdArgs) -> Result<()> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let manifest = need(a.common.manifest, file.manifest, "manifest")?;
    let checkpoint = need(a.common.checkpoint, file.checkpoint, "checkpoint")?;
    let out = need(a.common.out, file.out, "out")?;
    let seed = pick(a.common.seed, file.seed, 0);
    let split = pick(a.split, file.split, "test".into());
    let index = pick(a.index, file.index, 0);
    let samples = pick(a.samples, file.samples, 500);
    let rate = a.rate.or(file.rate);
    let methods = parse_methods(&pick(a.methods, file.methods, default_method_names()))?;
    let quantiles = pick(a.quantiles, file.quantiles, vec![0.25, 0.5, 0.75]);
    let agg = parse_aggregation(&pick(a.aggregation, file.aggregation, "absolute".into()))?;
    let ig_steps = pick(a.ig_steps, file.ig_steps, 64);
    let run_config = json!({
        "command": "mcd",
        "manifest": manifest,
        "checkpoint": checkpoint,
        "out": out,
        "seed": seed,
        "split": split,
        "index": index,
        "samples": samples,
        "rate": rate,
        "methods": method_names(&methods),
        "quantiles": quantiles,
        "aggregation": agg.name(),
        "ig_steps": ig_steps,
        "quantile_method": QuantileMethod::Linear.name(),
        "target": "true-label",
    });

    let (ckpt, man, ds) = load_model_and_subset(&manifest, &checkpoint, &split)?;
    if index >= ds.len() {
        return Err(Error::invalid_argument(format!(
            "index {index} out of range for {} images in split '{split}'",
            ds.len()
        )));
    }
    let image = ds.image_tensor(index);
    let label = ds.labels[index];
    let mcd_cfg = MCDConfig {
        samples,
        rate_override: rate,
        seed,
    };
    let dist = mcd_predict(&ckpt.model, &image, &mcd_cfg)?;
    let det = ckpt.model.predict(&image)?;

    ensure_dir(&out)?;
    let mut header: Vec<String> = vec!["sample".into()];
    header.extend(man.class_names.iter().map(|c| format!("p_{c}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..dist.samples)
        .map(|t| {
            let mut row = vec![t.to_string()];
            row.extend(dist.row(t).iter().map(|&p| fmt_f64(p as f64)));
            row
        })
        .collect();
    write_csv(&out.join("distribution.csv"), &run_config, &header_refs, &rows)?;

    let true_probs: Vec<f64> = (0..dist.samples)
        .map(|t| dist.row(t)[label] as f64)
        .collect();
    let hist = svg::histogram(
        &format!(
            "p({}) over {} MCD samples",
            man.class_names[label], dist.samples
        ),
        "true-class probability",
        &true_probs,
        30,
        Some((0.0, 1.0)),
    );
    crate::fsio::atomic_write(&out.join("histogram.svg"), hist.as_bytes())?;

    let summary: Vec<Value> = man
        .class_names
        .iter()
        .zip(&dist.summary)
        .map(|(name, s)| {
            json!({
                "class": name,
                "mean": s.mean,
                "std": s.std,
                "q25": s.q25,
                "q50": s.q50,
                "q75": s.q75,
            })
        })
        .collect();
    write_json(
        &out.join("mcd.json"),
        &run_config,
        json!({
            "image": man.records[index].image_rel,
            "true_class": man.class_names[label],
            "predicted_deterministic": man.class_names[argmax_f32(&det)],
            "samples": dist.samples,
            "summary": summary,
        }),
    )?;

    let ig = zero_ig(ds.shape, ig_steps);
    let maps_dir = out.join("maps");
    ensure_dir(&maps_dir)?;
    for &method in &methods {
        let ig_ref = (method == Method::IntegratedGradients).then_some(&ig);
        let stack =
            mcd_saliency_stack(&ckpt.model, &image, label, method, ig_ref, agg, &mcd_cfg)?;
        for &q in &quantiles {
            let qmap = quantile_map(&stack, q, QuantileMethod::Linear)?;
            // no dots in the stem: with_extension would truncate at them
            let stem = format!("q{}_{}", fmt_f64(q).replace('.', "p"), method.name());
            qmap.save(&maps_dir.join(stem), label)?;
        }
    }
    write_run_config(&out, &run_config)?;
    eprintln!(
        "MCD (T = {}) distribution and {} quantile maps written to {}",
        dist.samples,
        methods.len() * quantiles.len(),
        out.display()
    );
    Ok(())
}

// ----------------------------------------------------------------- flip

#[derive(Args)]
struct FlipArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    split: Option<String>,
    /// Class name whose samples are flipped
    #[arg(long)]
    class: Option<String>,
    /// MCD sample count T behind the quantile rankings
    #[arg(long, env = "XAIKIT_SAMPLES")]
    samples: Option<usize>,
    #[arg(long, env = "XAIKIT_METHODS", value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
    /// Fraction of pixels flipped per step
    #[arg(long)]
    step: Option<f64>,
    /// Largest flipped fraction
    #[arg(long)]
    max: Option<f64>,
    /// Fill: dataset-mean, per-image-mean, or constant:VALUE
    #[arg(long)]
    fill: Option<String>,
    /// Number of random-baseline seeds
    #[arg(long)]
    baseline_seeds: Option<usize>,
    #[arg(long)]
    aggregation: Option<String>,
    #[arg(long)]
    ig_steps: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
}

fn cmd_flip(a: FlipArgs) -> Result<()> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let manifest = need(a.common.manifest, file.manifest, "manifest")?;
    let checkpoint = need(a.common.checkpoint, file.checkpoint, "checkpoint")?;
    let out = need(a.common.out, file.out, "out")?;
    let seed = pick(a.common.seed, file.seed, 0);
    let split = pick(a.split, file.split, "test".into());
    let class = need(a.class, file.class, "class")?;
    let samples = pick(a.samples, file.samples, 100);
    let methods = parse_methods(&pick(a.methods, file.methods, default_method_names()))?;
    let quantiles = pick(a.quantiles, file.quantiles, vec![0.25, 0.5, 0.75]);
    let step = pick(a.step, file.step, 0.01);
    let max = pick(a.max, file.max, 0.5);
    let fill_name = pick(a.fill, file.fill, "dataset-mean".into());
    let fill = parse_fill(&fill_name)?;
    let n_seeds = pick(a.baseline_seeds, file.baseline_seeds, 20);
    let agg = parse_aggregation(&pick(a.aggregation, file.aggregation, "absolute".into()))?;
    let ig_steps = pick(a.ig_steps, file.ig_steps, 64);
    let limit = a.limit.or(file.limit);
    let run_config = json!({
        "command": "flip",
        "manifest": manifest,
        "checkpoint": checkpoint,
        "out": out,
        "seed": seed,
        "split": split,
        "class": class,
        "samples": samples,
        "methods": method_names(&methods),
        "quantiles": quantiles,
        "step": step,
        "max": max,
        "fill": fill_name,
        "baseline_seeds": n_seeds,
        "aggregation": agg.name(),
        "ig_steps": ig_steps,
        "limit": limit,
        "quantile_method": QuantileMethod::Linear.name(),
        "dropout_during_eval": false,
    });

    let (ckpt, man, ds) = load_model_and_subset(&manifest, &checkpoint, &split)?;
    let class_idx = man
        .class_names
        .iter()
        .position(|c| *c == class)
        .ok_or_else(|| {
            Error::invalid_argument(format!(
                "unknown class '{class}' (have: {})",
                man.class_names.join(", ")
            ))
        })?;
    let mut of_class: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class_idx).collect();
    if let Some(l) = limit {
        of_class.truncate(l);
    }
    if of_class.is_empty() {
        return Err(Error::invalid_argument(format!(
            "split '{split}' has no samples of class '{class}'"
        )));
    }
    let class_ds = ds.subset(&of_class);
    let cfg = MCDExperimentConfig {
        methods: methods.clone(),
        quantiles: quantiles.clone(),
        mcd: MCDConfig::new(samples, seed),
        ig_steps,
        aggregation: agg,
        quantile_method: QuantileMethod::Linear,
        flip: FlipConfig { fill, step, max },
        baseline_seeds: (0..n_seeds as u64).collect(),
    };
    let bundle = pf_mcd_experiment(&ckpt.model, &class_ds, &cfg)?;

    ensure_dir(&out)?;
    let mut header: Vec<String> = vec!["fraction".into()];
    for c in &bundle.curves {
        header.push(format!("{}_score", c.curve.source));
        header.push(format!("{}_accuracy", c.curve.source));
    }
    header.extend([
        "random_mean_score".into(),
        "random_mean_accuracy".into(),
        "random_stderr_score".into(),
        "random_stderr_accuracy".into(),
    ]);
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let steps = bundle.random.mean.points.len();
    let rows: Vec<Vec<String>> = (0..steps)
        .map(|i| {
            let mut row = vec![fmt_f64(bundle.random.mean.points[i].fraction)];
            for c in &bundle.curves {
                row.push(fmt_f64(c.curve.points[i].mean_score));
                row.push(fmt_f64(c.curve.points[i].accuracy));
            }
            row.push(fmt_f64(bundle.random.mean.points[i].mean_score));
            row.push(fmt_f64(bundle.random.mean.points[i].accuracy));
            row.push(fmt_f64(bundle.random.stderr_score[i]));
            row.push(fmt_f64(bundle.random.stderr_accuracy[i]));
            row
        })
        .collect();
    write_csv(&out.join("curves.csv"), &run_config, &header_refs, &rows)?;

    let mut series: Vec<svg::Series> = bundle
        .curves
        .iter()
        .map(|c| svg::Series {
            label: c.curve.source.clone(),
            points: c.curve.points.iter().map(|p| (p.fraction, p.mean_score)).collect(),
        })
        .collect();
    series.push(svg::Series {
        label: bundle.random.mean.source.clone(),
        points: bundle
            .random
            .mean
            .points
            .iter()
            .map(|p| (p.fraction, p.mean_score))
            .collect(),
    });
    let plot = svg::line_plot(
        &format!("Pixel flipping: {class}"),
        "fraction of pixels flipped",
        "mean correct-class score",
        &series,
    );
    crate::fsio::atomic_write(&out.join("curves.svg"), plot.as_bytes())?;

    let curves_meta: Vec<Value> = bundle
        .curves
        .iter()
        .map(|c| {
            json!({
                "source": c.curve.source,
                "method": c.method.name(),
                "q": c.q,
                "below_random_fraction": c.below_random_fraction,
                "auc": crate::faithfulness::curve_auc(&c.curve),
            })
        })
        .collect();
    write_json(
        &out.join("flip.json"),
        &run_config,
        json!({
            "class": class,
            "samples": bundle.samples,
            "curves": curves_meta,
            "random_auc": crate::faithfulness::curve_auc(&bundle.random.mean),
            "dropout_during_eval": bundle.dropout_during_eval,
        }),
    )?;
    write_run_config(&out, &run_config)?;
    eprintln!(
        "{} curves + random baseline over {} samples written to {}",
        bundle.curves.len(),
        bundle.samples,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- synth

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Generator kind: shapes3 or patch-pair
    #[arg(long)]
    kind: Option<String>,
    /// Training images per class
    #[arg(long)]
    train: Option<usize>,
    /// Validation images per class
    #[arg(long)]
    val: Option<usize>,
    /// Test images per class
    #[arg(long)]
    test: Option<usize>,
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let out = need(a.common.out, file.out, "out")?;
    let seed = pick(a.common.seed, file.seed, 0);
    let kind = pick(a.kind, file.kind, "shapes3".into());
    let n_train = pick(a.train, file.train, 100);
    let n_val = pick(a.val, file.val, 30);
    let n_test = pick(a.test, file.test, 30);
    let per_class = n_train + n_val + n_test;
    if per_class == 0 {
        return Err(Error::invalid_argument("train + val + test must be positive"));
    }
    let run_config = json!({
        "command": "synth",
        "out": out,
        "seed": seed,
        "kind": kind,
        "train": n_train,
        "val": n_val,
        "test": n_test,
    });

    let spec = match kind.as_str() {
        "shapes3" => SyntheticSpec::shapes3(per_class, seed),
        "patch-pair" => SyntheticSpec::patch_pair(per_class, seed),
        other => {
            return Err(Error::invalid_argument(format!(
                "unknown kind '{other}' (expected shapes3 or patch-pair)"
            )))
        }
    };
    let set = generate(&spec)?;
    let splits: Vec<String> = (0..set.dataset.len())
        .map(|i| {
            let within = i % per_class;
            if within < n_train {
                "train"
            } else if within < n_train + n_val {
                "val"
            } else {
                "test"
            }
            .to_string()
        })
        .collect();
    ensure_dir(&out)?;
    let manifest_path = data::materialize_with_splits(&set, &out, Some(&splits))?;
    write_run_config(&out, &run_config)?;
    eprintln!(
        "wrote {} images ({} classes) and manifest {}",
        set.dataset.len(),
        set.dataset.classes(),
        manifest_path.display()
    );
    Ok(())
}
