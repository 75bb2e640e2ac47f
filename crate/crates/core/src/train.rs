//! Training loop, optimizer, and stratified splitting.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{evaluate, DropoutPlan, Model, ModelSpec};
use crate::rng::{RngStream, StreamId};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Stop after the first epoch whose validation top-1 reaches this value.
    pub early_stop_val_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 20,
            batch: 32,
            seed: 0,
            early_stop_val_acc: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Model plus the training record that goes into its checkpoint.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub epochs_run: usize,
    pub seed: u64,
}

/// Adam with the standard moment defaults (0.9 / 0.999, eps 1e-8) and bias
/// correction. Moments are stored f32 like the weights; the per-element
/// update runs in f64.
struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    fn new(model: &Model, lr: f64) -> Self {
        let sizes: Vec<usize> = model.params().iter().map(|p| p.numel()).collect();
        Adam {
            lr,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    fn step(&mut self, model: &mut Model, grads: &[Vec<f32>]) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for ((param, grad), (m, v)) in model
            .params_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for ((p, &g), (m, v)) in param
                .data_mut()
                .iter_mut()
                .zip(grad)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = g as f64;
                let mn = BETA1 * *m as f64 + (1.0 - BETA1) * g;
                let vn = BETA2 * *v as f64 + (1.0 - BETA2) * g * g;
                *m = mn as f32;
                *v = vn as f32;
                let update = self.lr * (mn / bc1) / ((vn / bc2).sqrt() + EPS);
                *p = (*p as f64 - update) as f32;
            }
        }
    }
}

/// Mean cross-entropy computed straight from logits (no tape), f64 logsumexp.
pub fn cross_entropy_from_logits(logits: &Tensor, labels: &[usize]) -> f64 {
    let classes = logits.shape()[1];
    let mut total = 0f64;
    for (row, &t) in logits.data().chunks_exact(classes).zip(labels) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = max
            + row
                .iter()
                .map(|&v| (v as f64 - max).exp())
                .sum::<f64>()
                .ln();
        total += lse - row[t] as f64;
    }
    total / labels.len() as f64
}

/// Train a freshly initialized model. One seed pins initialization, batch
/// order, and every dropout mask, so equal configs give bit-identical
/// outcomes. Dropout is active on training batches only; validation runs
/// with it off.
pub fn train(spec: &ModelSpec, train_ds: &Dataset, val_ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    spec.validate()?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::invalid_argument("training and validation sets must be non-empty"));
    }
    if cfg.batch == 0 {
        return Err(Error::invalid_argument("batch size must be >= 1"));
    }
    for ds in [train_ds, val_ds] {
        if ds.classes() > spec.classes {
            return Err(Error::invalid_argument(format!(
                "dataset names {} classes but the model has {}",
                ds.classes(),
                spec.classes
            )));
        }
    }
    let mut model = Model::init(spec.clone(), cfg.seed)?;
    let mut adam = Adam::new(&model, cfg.lr);
    let mut shuffle = RngStream::new(cfg.seed, StreamId::Shuffle);
    let mut dropout = RngStream::new(cfg.seed, StreamId::Dropout);
    let mut history = Vec::new();
    let mut epochs_run = 0;

    for epoch in 0..cfg.epochs {
        let perm = shuffle.permutation(train_ds.len());
        let mut loss_sum = 0f64;
        for chunk in perm.chunks(cfg.batch) {
            let x = train_ds.batch(chunk);
            let labels = train_ds.gather_labels(chunk);
            let mut tape = Tape::new();
            let pass = model.forward(&mut tape, x, DropoutPlan::Train { stream: &mut dropout }, true)?;
            let loss = tape.cross_entropy_mean(pass.logits, &labels)?;
            let loss_val = tape.value(loss).data()[0] as f64;
            if !loss_val.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss_val * chunk.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<Vec<f32>> = pass
                .params
                .iter()
                .map(|&v| {
                    tape.grad(v)
                        .map(<[f32]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; tape.value(v).numel()])
                })
                .collect();
            adam.step(&mut model, &grads);
        }
        let train_loss = loss_sum / train_ds.len() as f64;

        let (val_loss, val_acc) = validation_stats(&model, val_ds)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });
        epochs_run = epoch + 1;
        if let Some(target) = cfg.early_stop_val_acc {
            if val_acc >= target {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model,
        history,
        epochs_run,
        seed: cfg.seed,
    })
}

fn validation_stats(model: &Model, val_ds: &Dataset) -> Result<(f64, f64)> {
    let mut loss_sum = 0f64;
    let batch = 32;
    let mut start = 0;
    while start < val_ds.len() {
        let end = (start + batch).min(val_ds.len());
        let idx: Vec<usize> = (start..end).collect();
        let logits = model.logits_batch(val_ds.batch(&idx))?;
        let labels = val_ds.gather_labels(&idx);
        loss_sum += cross_entropy_from_logits(&logits, &labels) * idx.len() as f64;
        start = end;
    }
    let report = evaluate(model, val_ds, &[1])?;
    Ok((loss_sum / val_ds.len() as f64, report.topk[0].1))
}

/// Split indices per class at `ratio` (train fraction). Each class is
/// shuffled with the Split stream, then cut at the nearest integer to
/// n*ratio, clamped so both sides keep at least one sample. Outputs are
/// sorted ascending; membership, not order, carries the randomness.
pub fn stratified_split_indices(
    labels: &[usize],
    class_names: &[String],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid_argument(format!(
            "split ratio must be strictly between 0 and 1 (got {ratio}); \
             ratio 1 would leave the validation set empty"
        )));
    }
    let classes = class_names.len();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    for (c, members) in per_class.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::ClassTooSmall {
                name: class_names[c].clone(),
                count: members.len(),
            });
        }
    }
    let mut rng = RngStream::new(seed, StreamId::Split);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for members in per_class.iter_mut() {
        rng.shuffle(members);
        let n = members.len();
        let want = (n as f64 * ratio + 0.5).floor() as usize;
        let cut = want.clamp(1, n - 1);
        train.extend_from_slice(&members[..cut]);
        val.extend_from_slice(&members[cut..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Stratified split of an in-memory dataset.
pub fn split_dataset(ds: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = stratified_split_indices(&ds.labels, &ds.class_names, ratio, seed)?;
    Ok((ds.subset(&train), ds.subset(&val)))
}
