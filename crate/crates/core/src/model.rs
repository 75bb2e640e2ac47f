//! A small dropout-equipped CNN classifier.
//!
//! Architecture: a stack of conv(3x3, stride 1, same padding) -> relu ->
//! maxpool blocks, then flatten, inverted dropout, and one dense layer to
//! class logits. Dropout sits directly before the classifier head, which is
//! where Monte-Carlo dropout needs it at inference time.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::order::{argmax_f32, argsort_desc_f32};
use crate::rng::{RngStream, StreamId};
use crate::tape::{DropoutMode, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub channels: usize,
    /// Square kernel edge; odd kernels preserve spatial size (stride 1,
    /// padding (k-1)/2).
    pub kernel: usize,
    /// Non-overlapping max-pool window after the activation.
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Input image shape (channels, height, width).
    pub input: (usize, usize, usize),
    pub blocks: Vec<ConvBlockSpec>,
    /// Dropout rate before the classifier head, in [0, 1).
    pub dropout: f32,
    pub classes: usize,
}

impl ModelSpec {
    /// The default desk-scale architecture: three 3x3 conv blocks with
    /// 16/32/64 channels and 2x2 pooling, dropout 0.5 ahead of the head.
    pub fn desk(input: (usize, usize, usize), classes: usize) -> Self {
        let block = |channels| ConvBlockSpec {
            channels,
            kernel: 3,
            pool: 2,
        };
        ModelSpec {
            input,
            blocks: vec![block(16), block(32), block(64)],
            dropout: 0.5,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid_argument(format!(
                "model needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid_argument(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout
            )));
        }
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::invalid_argument("input shape dims must be positive"));
        }
        let mut dims = self.input;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.channels == 0 || b.kernel == 0 || b.pool == 0 {
                return Err(Error::invalid_argument(format!(
                    "conv block {i} has a zero field"
                )));
            }
            let pad = (b.kernel - 1) / 2;
            if dims.1 + 2 * pad < b.kernel || dims.2 + 2 * pad < b.kernel {
                return Err(Error::invalid_argument(format!(
                    "conv block {i} kernel {} exceeds feature map {}x{}",
                    b.kernel, dims.1, dims.2
                )));
            }
            let h = (dims.1 + 2 * pad - b.kernel + 1) / b.pool;
            let w = (dims.2 + 2 * pad - b.kernel + 1) / b.pool;
            if h == 0 || w == 0 {
                return Err(Error::invalid_argument(format!(
                    "conv block {i} pools the feature map away ({h}x{w})"
                )));
            }
            dims = (b.channels, h, w);
        }
        Ok(())
    }

    /// Feature map shape after the conv stack.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let mut dims = self.input;
        for b in &self.blocks {
            let pad = (b.kernel - 1) / 2;
            let h = (dims.1 + 2 * pad - b.kernel + 1) / b.pool;
            let w = (dims.2 + 2 * pad - b.kernel + 1) / b.pool;
            dims = (b.channels, h, w);
        }
        dims
    }

    /// Flattened feature count feeding the classifier head.
    pub fn feature_len(&self) -> usize {
        let (c, h, w) = self.feature_shape();
        c * h * w
    }
}

/// How a forward pass treats the dropout layer.
pub enum DropoutPlan<'a> {
    /// Identity (plain inference).
    Off,
    /// Fresh Bernoulli mask at the spec rate (training, or one MCD sample).
    Train { stream: &'a mut RngStream },
    /// Reuse one feature-length mask, tiled over every batch row. This is
    /// what keeps an MCD sample's prediction and its attribution path on the
    /// same thinned network.
    Fixed { row_mask: &'a [f32] },
}

/// Handles into the tape for one forward pass.
pub struct ForwardPass {
    pub input: Var,
    pub logits: Var,
    /// Weight leaf per parameter, in checkpoint order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    /// Conv weights per block, shape [co, ci, k, k].
    pub conv_w: Vec<Tensor>,
    /// Conv biases per block, shape [co].
    pub conv_b: Vec<Tensor>,
    /// Head weights, shape [features, classes].
    pub fc_w: Tensor,
    /// Head bias, shape [classes].
    pub fc_b: Tensor,
}

impl Model {
    /// Fan-in-scaled uniform initialization: every parameter of a layer is
    /// drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) off the Init stream, in
    /// checkpoint order, so a seed pins the full weight state.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = RngStream::new(seed, StreamId::Init);
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        let mut ci = spec.input.0;
        for b in &spec.blocks {
            let fan_in = ci * b.kernel * b.kernel;
            let bound = (1.0 / fan_in as f64).sqrt() as f32;
            let mut w = Tensor::zeros(vec![b.channels, ci, b.kernel, b.kernel]);
            w.fill_uniform(bound, &mut rng);
            let mut bias = Tensor::zeros(vec![b.channels]);
            bias.fill_uniform(bound, &mut rng);
            conv_w.push(w);
            conv_b.push(bias);
            ci = b.channels;
        }
        let features = spec.feature_len();
        let bound = (1.0 / features as f64).sqrt() as f32;
        let mut fc_w = Tensor::zeros(vec![features, spec.classes]);
        fc_w.fill_uniform(bound, &mut rng);
        let mut fc_b = Tensor::zeros(vec![spec.classes]);
        fc_b.fill_uniform(bound, &mut rng);
        Ok(Model {
            spec,
            conv_w,
            conv_b,
            fc_w,
            fc_b,
        })
    }

    /// Parameters in checkpoint order: conv0 weight, conv0 bias, conv1 ...,
    /// head weight, head bias.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(self.conv_w.len() * 2 + 2);
        for (w, b) in self.conv_w.iter().zip(&self.conv_b) {
            out.push(w);
            out.push(b);
        }
        out.push(&self.fc_w);
        out.push(&self.fc_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(self.conv_w.len() * 2 + 2);
        for (w, b) in self.conv_w.iter_mut().zip(self.conv_b.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.fc_w);
        out.push(&mut self.fc_b);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.conv_w.len() {
            out.push(format!("conv{i}.weight"));
            out.push(format!("conv{i}.bias"));
        }
        out.push("head.weight".into());
        out.push("head.bias".into());
        out
    }

    /// Build the forward graph for a [n, c, h, w] batch. `train_params`
    /// decides whether weight leaves participate in backward; the input leaf
    /// keeps whatever `requires_grad` the caller set on `x`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Tensor,
        dropout: DropoutPlan,
        train_params: bool,
    ) -> Result<ForwardPass> {
        let shape = x.shape();
        if shape.len() != 4 || (shape[1], shape[2], shape[3]) != self.spec.input {
            return Err(Error::shape_mismatch(
                "model forward",
                shape,
                &[self.spec.input.0, self.spec.input.1, self.spec.input.2],
            ));
        }
        let n = shape[0];
        let input = tape.leaf(x);
        let mut params = Vec::new();
        let mut cur = input;
        for (block, (w, b)) in self.spec.blocks.iter().zip(self.conv_w.iter().zip(&self.conv_b)) {
            let wv = tape.leaf(w.clone().with_requires_grad(train_params));
            let bv = tape.leaf(b.clone().with_requires_grad(train_params));
            params.push(wv);
            params.push(bv);
            let pad = (block.kernel - 1) / 2;
            cur = tape.conv2d(cur, wv, Some(bv), 1, pad)?;
            cur = tape.relu(cur)?;
            cur = tape.maxpool2d(cur, block.pool)?;
        }
        cur = tape.flatten(cur)?;
        let features = self.spec.feature_len();
        match dropout {
            DropoutPlan::Off => {}
            DropoutPlan::Train { stream } => {
                cur = tape.dropout(
                    cur,
                    DropoutMode::Sample {
                        rate: self.spec.dropout,
                        stream,
                    },
                )?;
            }
            DropoutPlan::Fixed { row_mask } => {
                if row_mask.len() != features {
                    return Err(Error::shape_mismatch(
                        "dropout row mask",
                        &[features],
                        &[row_mask.len()],
                    ));
                }
                let mut tiled = Vec::with_capacity(n * features);
                for _ in 0..n {
                    tiled.extend_from_slice(row_mask);
                }
                cur = tape.dropout(cur, DropoutMode::Fixed { mask: &tiled })?;
            }
        }
        let wv = tape.leaf(self.fc_w.clone().with_requires_grad(train_params));
        let bv = tape.leaf(self.fc_b.clone().with_requires_grad(train_params));
        params.push(wv);
        params.push(bv);
        let logits = tape.dense(cur, wv, bv)?;
        Ok(ForwardPass {
            input,
            logits,
            params,
        })
    }

    /// Class logits for a batch with dropout off.
    pub fn logits_batch(&self, x: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, x, DropoutPlan::Off, false)?;
        Ok(tape.take(pass.logits))
    }

    fn lift_single(&self, image: &Tensor) -> Result<Tensor> {
        let (c, h, w) = self.spec.input;
        let want = [c, h, w];
        let ok = image.shape() == want || image.shape() == [1, c, h, w];
        if !ok {
            return Err(Error::shape_mismatch("predict", image.shape(), &want));
        }
        Tensor::new(vec![1, c, h, w], image.data().to_vec())
    }

    /// Class-probability vector for one [c, h, w] image (dropout off).
    pub fn predict(&self, image: &Tensor) -> Result<Vec<f32>> {
        let logits = self.logits_batch(self.lift_single(image)?)?;
        let mut tape = Tape::new();
        let l = tape.leaf(logits);
        let p = tape.softmax(l)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Top-k class indices by descending probability, ties to the lower
    /// class index.
    pub fn predict_topk(&self, image: &Tensor, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.spec.classes {
            return Err(Error::invalid_argument(format!(
                "top-k needs 1 <= k <= {}, got {k}",
                self.spec.classes
            )));
        }
        let probs = self.predict(image)?;
        Ok(argsort_desc_f32(&probs)[..k].to_vec())
    }
}

/// Accuracy and confusion summary from [`evaluate`].
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub classes: usize,
    /// (k, top-k accuracy) pairs in the requested order.
    pub topk: Vec<(usize, f64)>,
    /// Row-major counts: confusion[true * classes + predicted].
    pub confusion: Vec<usize>,
}

impl EvalReport {
    pub fn at(&self, truth: usize, predicted: usize) -> usize {
        self.confusion[truth * self.classes + predicted]
    }

    pub fn top1(&self) -> f64 {
        let trace: usize = (0..self.classes).map(|i| self.at(i, i)).sum();
        trace as f64 / self.n as f64
    }
}

/// Run the model over a whole dataset (dropout off) and tally top-k hits and
/// the confusion matrix. Images are processed in fixed-size batches in
/// dataset order.
pub fn evaluate(model: &Model, ds: &Dataset, ks: &[usize]) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::invalid_argument("evaluate on an empty dataset"));
    }
    let classes = model.spec.classes;
    if ds.classes() > classes {
        return Err(Error::invalid_argument(format!(
            "dataset has {} classes but model predicts {}",
            ds.classes(),
            classes
        )));
    }
    for &k in ks {
        if k == 0 || k > classes {
            return Err(Error::invalid_argument(format!(
                "top-k needs 1 <= k <= {classes}, got {k}"
            )));
        }
    }
    let mut confusion = vec![0usize; classes * classes];
    let mut hits = vec![0usize; ks.len()];
    let batch = 32;
    let mut start = 0;
    while start < ds.len() {
        let end = (start + batch).min(ds.len());
        let idx: Vec<usize> = (start..end).collect();
        let logits = model.logits_batch(ds.batch(&idx))?;
        for (row, &i) in logits.data().chunks_exact(classes).zip(&idx) {
            let truth = ds.labels[i];
            let order = argsort_desc_f32(row);
            confusion[truth * classes + order[0]] += 1;
            for (slot, &k) in ks.iter().enumerate() {
                if order[..k].contains(&truth) {
                    hits[slot] += 1;
                }
            }
        }
        start = end;
    }
    let n = ds.len();
    let topk = ks
        .iter()
        .zip(&hits)
        .map(|(&k, &h)| (k, h as f64 / n as f64))
        .collect();
    Ok(EvalReport {
        n,
        classes,
        topk,
        confusion,
    })
}

/// Argmax over one probability row with the shared tie rule.
pub fn predicted_class(probs: &[f32]) -> usize {
    argmax_f32(probs)
}
