//! Post-hoc feature attribution: Gradient, Gradient x Input, and Integrated
//! Gradients, all w.r.t. the pre-softmax logit of a target label.
//!
//! Raw attributions are per-channel [c, h, w] tensors; a `SaliencyMap` is the
//! channel-aggregated [h, w] view used by the metrics. The dropout state is
//! always explicit: `None` means the deterministic network, `Some(mask)` a
//! fixed thinned network (one MCD sample) shared by the forward and backward
//! pass — and, for IG, by every path step.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::imageio::encode_gray_png;
use crate::model::{DropoutPlan, Model};
use crate::raster;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gradient,
    GradientXInput,
    IntegratedGradients,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gradient => "gradient",
            Method::GradientXInput => "gradient-x-input",
            Method::IntegratedGradients => "integrated-gradients",
        }
    }
}

/// How per-channel attributions collapse into one value per pixel:
/// channel-sum, then identity / positive part / absolute value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    RawSum,
    Positive,
    Absolute,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::RawSum => "raw-sum",
            Aggregation::Positive => "positive",
            Aggregation::Absolute => "absolute",
        }
    }

    fn apply(self, v: f64) -> f32 {
        let v = match self {
            Aggregation::RawSum => v,
            Aggregation::Positive => v.max(0.0),
            Aggregation::Absolute => v.abs(),
        };
        v as f32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, height * width values, all finite.
    pub values: Vec<f32>,
    pub method: Method,
    pub label: usize,
    pub aggregation: Aggregation,
}

/// Sidecar metadata written next to the raster (`seed` / `sample` carry the
/// MCD lineage when the map came from a stochastic pass).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaliencySidecar {
    pub width: usize,
    pub height: usize,
    pub method: String,
    pub label: usize,
    pub aggregation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<usize>,
}

impl SaliencyMap {
    fn from_raw(raw: &Tensor, method: Method, label: usize, agg: Aggregation) -> Result<Self> {
        let (c, h, w) = (raw.shape()[0], raw.shape()[1], raw.shape()[2]);
        let mut values = Vec::with_capacity(h * w);
        let data = raw.data();
        for p in 0..h * w {
            let mut sum = 0f64;
            for ch in 0..c {
                sum += data[ch * h * w + p] as f64;
            }
            values.push(agg.apply(sum));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!(
                "saliency map contains non-finite value {bad}"
            )));
        }
        Ok(SaliencyMap {
            width: w,
            height: h,
            values,
            method,
            label,
            aggregation: agg,
        })
    }

    /// Bilinear-resize the map (e.g. up to a native mask resolution).
    pub fn resized(&self, height: usize, width: usize) -> SaliencyMap {
        let values = crate::imageio::bilinear_resize(
            &self.values,
            (1, self.height, self.width),
            (height, width),
        );
        SaliencyMap {
            width,
            height,
            values,
            ..*self
        }
    }

    /// Write `<base>.raster`, `<base>.json`, and `<base>.png` (min-max
    /// normalized heatmap).
    pub fn save(&self, base: &Path, seed: Option<u64>, sample: Option<usize>) -> Result<()> {
        raster::save_raster(
            &base.with_extension("raster"),
            &[self.height, self.width],
            &self.values,
        )?;
        let sidecar = SaliencySidecar {
            width: self.width,
            height: self.height,
            method: self.method.name().into(),
            label: self.label,
            aggregation: self.aggregation.name().into(),
            seed,
            sample,
        };
        let mut json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::format(base, e.to_string()))?;
        json.push('\n');
        fsio::atomic_write(&base.with_extension("json"), json.as_bytes())?;
        let png = encode_gray_png(
            &raster::minmax_normalize(&self.values),
            self.height,
            self.width,
        )?;
        fsio::atomic_write(&base.with_extension("png"), &png)
    }
}

#[derive(Debug, Clone)]
pub struct IGConfig {
    /// Same shape as the input image, in normalized pixel space.
    pub baseline: Tensor,
    /// Riemann-midpoint step count, >= 1.
    pub steps: usize,
}

impl IGConfig {
    /// All-zeros baseline with the given image shape, default 64 steps.
    pub fn zero_baseline(shape: &[usize]) -> Self {
        IGConfig {
            baseline: Tensor::zeros(shape.to_vec()),
            steps: 64,
        }
    }

    fn validate(&self, image: &Tensor) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid_argument("integrated gradients needs steps >= 1"));
        }
        if self.baseline.shape() != image.shape() {
            return Err(Error::shape_mismatch(
                "ig baseline",
                self.baseline.shape(),
                image.shape(),
            ));
        }
        if self.baseline.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_argument("ig baseline must be finite"));
        }
        Ok(())
    }
}

fn check_label(model: &Model, label: usize) -> Result<()> {
    if label >= model.spec.classes {
        return Err(Error::InvalidLabel {
            label,
            classes: model.spec.classes,
        });
    }
    Ok(())
}

fn check_image(model: &Model, image: &Tensor) -> Result<()> {
    let (c, h, w) = model.spec.input;
    if image.shape() != [c, h, w] {
        return Err(Error::shape_mismatch("attribution input", image.shape(), &[c, h, w]));
    }
    Ok(())
}

fn plan_for<'a>(mask: Option<&'a [f32]>) -> DropoutPlan<'a> {
    match mask {
        None => DropoutPlan::Off,
        Some(m) => DropoutPlan::Fixed { row_mask: m },
    }
}

/// Pre-softmax logit of `label` under the given dropout state.
pub fn logit(model: &Model, image: &Tensor, label: usize, dropout: Option<&[f32]>) -> Result<f32> {
    check_label(model, label)?;
    check_image(model, image)?;
    let (c, h, w) = model.spec.input;
    let batch = Tensor::new(vec![1, c, h, w], image.data().to_vec())?;
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, batch, plan_for(dropout), false)?;
    Ok(tape.value(pass.logits).data()[label])
}

/// d logit(label) / d input, per channel: a [c, h, w] tensor.
pub fn gradient_raw(
    model: &Model,
    image: &Tensor,
    label: usize,
    dropout: Option<&[f32]>,
) -> Result<Tensor> {
    check_label(model, label)?;
    check_image(model, image)?;
    let (c, h, w) = model.spec.input;
    let batch = Tensor::new(vec![1, c, h, w], image.data().to_vec())?.with_grad();
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, batch, plan_for(dropout), false)?;
    let score = tape.pick_column_sum(pass.logits, label)?;
    tape.backward(score)?;
    let grad = tape
        .grad(pass.input)
        .expect("input requires_grad was set")
        .to_vec();
    Tensor::new(vec![c, h, w], grad)
}

pub fn gradient(
    model: &Model,
    image: &Tensor,
    label: usize,
    agg: Aggregation,
    dropout: Option<&[f32]>,
) -> Result<SaliencyMap> {
    let raw = gradient_raw(model, image, label, dropout)?;
    SaliencyMap::from_raw(&raw, Method::Gradient, label, agg)
}

/// Gradient elementwise-times input, per channel.
pub fn gradient_x_input_raw(
    model: &Model,
    image: &Tensor,
    label: usize,
    dropout: Option<&[f32]>,
) -> Result<Tensor> {
    let mut raw = gradient_raw(model, image, label, dropout)?;
    for (g, &x) in raw.data_mut().iter_mut().zip(image.data()) {
        *g *= x;
    }
    Ok(raw)
}

pub fn gradient_x_input(
    model: &Model,
    image: &Tensor,
    label: usize,
    agg: Aggregation,
    dropout: Option<&[f32]>,
) -> Result<SaliencyMap> {
    let raw = gradient_x_input_raw(model, image, label, dropout)?;
    SaliencyMap::from_raw(&raw, Method::GradientXInput, label, agg)
}

/// How many path points share one batched forward/backward pass.
const IG_CHUNK: usize = 64;

/// Riemann-midpoint Integrated Gradients, per channel:
/// (x - b) * mean over k of grad at b + (k+0.5)/m * (x - b).
pub fn integrated_gradients_raw(
    model: &Model,
    image: &Tensor,
    label: usize,
    cfg: &IGConfig,
    dropout: Option<&[f32]>,
) -> Result<Tensor> {
    check_label(model, label)?;
    check_image(model, image)?;
    cfg.validate(image)?;
    let (c, h, w) = model.spec.input;
    let pix = c * h * w;
    let delta: Vec<f32> = image
        .data()
        .iter()
        .zip(cfg.baseline.data())
        .map(|(&x, &b)| x - b)
        .collect();

    let mut grad_sum = vec![0f64; pix];
    let mut k = 0;
    while k < cfg.steps {
        let chunk = (cfg.steps - k).min(IG_CHUNK);
        let mut batch = Vec::with_capacity(chunk * pix);
        for j in 0..chunk {
            let alpha = (k + j) as f64 + 0.5;
            let alpha = (alpha / cfg.steps as f64) as f32;
            for (b, d) in cfg.baseline.data().iter().zip(&delta) {
                batch.push(b + alpha * d);
            }
        }
        let x = Tensor::new(vec![chunk, c, h, w], batch)?.with_grad();
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, x, plan_for(dropout), false)?;
        // the column sum over the batch backprops each row's own gradient
        let score = tape.pick_column_sum(pass.logits, label)?;
        tape.backward(score)?;
        let grads = tape.grad(pass.input).expect("input requires_grad was set");
        for row in grads.chunks_exact(pix) {
            for (s, &g) in grad_sum.iter_mut().zip(row) {
                *s += g as f64;
            }
        }
        k += chunk;
    }

    let inv_m = 1.0 / cfg.steps as f64;
    let data: Vec<f32> = delta
        .iter()
        .zip(&grad_sum)
        .map(|(&d, &g)| (d as f64 * g * inv_m) as f32)
        .collect();
    Tensor::new(vec![c, h, w], data)
}

pub fn integrated_gradients(
    model: &Model,
    image: &Tensor,
    label: usize,
    cfg: &IGConfig,
    agg: Aggregation,
    dropout: Option<&[f32]>,
) -> Result<SaliencyMap> {
    let raw = integrated_gradients_raw(model, image, label, cfg, dropout)?;
    SaliencyMap::from_raw(&raw, Method::IntegratedGradients, label, agg)
}

/// Completeness ledger for one IG run: the raw attribution total and the
/// score difference it should match.
pub fn ig_completeness(
    model: &Model,
    image: &Tensor,
    label: usize,
    cfg: &IGConfig,
    dropout: Option<&[f32]>,
) -> Result<(f64, f64)> {
    let raw = integrated_gradients_raw(model, image, label, cfg, dropout)?;
    let total = raw.sum_f64();
    let fx = logit(model, image, label, dropout)? as f64;
    let fb = logit(model, &cfg.baseline, label, dropout)? as f64;
    Ok((total, fx - fb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    /// 2-feature linear model: logit_k = w[:,k] . x
    fn linear_model(w: Vec<f32>) -> Model {
        let spec = ModelSpec {
            input: (1, 2, 2),
            blocks: vec![],
            dropout: 0.0,
            classes: 2,
        };
        let mut m = Model::init(spec, 0).unwrap();
        m.fc_w = Tensor::new(vec![4, 2], w).unwrap();
        m.fc_b = Tensor::new(vec![2], vec![0.5, -0.25]).unwrap();
        m
    }

    #[test]
    fn gradient_of_linear_model_is_weight_column() {
        let m = linear_model(vec![1.0, 5.0, 2.0, 6.0, 3.0, 7.0, 4.0, 8.0]);
        let img = Tensor::new(vec![1, 2, 2], vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        let map = gradient(&m, &img, 0, Aggregation::RawSum, None).unwrap();
        assert_eq!(map.values, vec![1.0, 2.0, 3.0, 4.0]);
        let map = gradient(&m, &img, 1, Aggregation::RawSum, None).unwrap();
        assert_eq!(map.values, vec![5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn gradient_x_input_matches_composition() {
        let m = linear_model(vec![1.0, 0.0, -2.0, 0.0, 3.0, 0.0, -4.0, 0.0]);
        let img = Tensor::new(vec![1, 2, 2], vec![0.5, 0.5, -1.0, 2.0]).unwrap();
        let gxi = gradient_x_input(&m, &img, 0, Aggregation::RawSum, None).unwrap();
        let g = gradient_raw(&m, &img, 0, None).unwrap();
        let expect: Vec<f32> = g.data().iter().zip(img.data()).map(|(a, b)| a * b).collect();
        assert_eq!(gxi.values, expect);
        assert_eq!(gxi.values, vec![0.5, -1.0, -3.0, -8.0]);
    }

    #[test]
    fn zero_image_zeroes_gradient_x_input() {
        let m = Model::init(ModelSpec::desk((1, 16, 16), 3), 2).unwrap();
        let img = Tensor::zeros(vec![1, 16, 16]);
        let map = gradient_x_input(&m, &img, 1, Aggregation::RawSum, None).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn absolute_aggregation_is_nonnegative() {
        let m = Model::init(ModelSpec::desk((1, 16, 16), 3), 4).unwrap();
        let mut img = Tensor::zeros(vec![1, 16, 16]);
        img.fill_uniform(1.0, &mut crate::rng::RngStream::new(9, crate::rng::StreamId::Probe));
        let map = gradient(&m, &img, 0, Aggregation::Absolute, None).unwrap();
        assert!(map.values.iter().all(|&v| v >= 0.0));
        let pos = gradient(&m, &img, 0, Aggregation::Positive, None).unwrap();
        assert!(pos.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn ig_zero_path_is_zero() {
        let m = Model::init(ModelSpec::desk((1, 16, 16), 3), 5).unwrap();
        let img = Tensor::full(vec![1, 16, 16], 0.4);
        let cfg = IGConfig {
            baseline: img.clone(),
            steps: 7,
        };
        let map = integrated_gradients(&m, &img, 0, &cfg, Aggregation::RawSum, None).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ig_linear_closed_form_any_steps() {
        let m = linear_model(vec![1.0, 0.0, 2.0, 0.0, -3.0, 0.0, 0.5, 0.0]);
        let img = Tensor::new(vec![1, 2, 2], vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let base = Tensor::new(vec![1, 2, 2], vec![0.25, 0.0, -0.5, 1.0]).unwrap();
        let expect: Vec<f32> = [1.0f32, 2.0, -3.0, 0.5]
            .iter()
            .zip(img.data().iter().zip(base.data()))
            .map(|(&w, (&x, &b))| w * (x - b))
            .collect();
        for steps in [1usize, 4, 64] {
            let cfg = IGConfig {
                baseline: base.clone(),
                steps,
            };
            let map = integrated_gradients(&m, &img, 0, &cfg, Aggregation::RawSum, None).unwrap();
            for (got, want) in map.values.iter().zip(&expect) {
                assert!((got - want).abs() < 1e-5, "steps {steps}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn ig_rejects_zero_steps_and_bad_baseline() {
        let m = Model::init(ModelSpec::desk((1, 16, 16), 3), 1).unwrap();
        let img = Tensor::full(vec![1, 16, 16], 0.2);
        let cfg = IGConfig {
            baseline: Tensor::zeros(vec![1, 16, 16]),
            steps: 0,
        };
        assert!(integrated_gradients(&m, &img, 0, &cfg, Aggregation::RawSum, None).is_err());
        let cfg = IGConfig {
            baseline: Tensor::zeros(vec![1, 8, 8]),
            steps: 4,
        };
        assert!(integrated_gradients(&m, &img, 0, &cfg, Aggregation::RawSum, None).is_err());
    }

    #[test]
    fn invalid_label_is_rejected() {
        let m = Model::init(ModelSpec::desk((1, 16, 16), 3), 1).unwrap();
        let img = Tensor::zeros(vec![1, 16, 16]);
        assert!(gradient(&m, &img, 3, Aggregation::RawSum, None).is_err());
    }

    #[test]
    fn logit_bias_shift_leaves_gradient_unchanged() {
        let mut m = Model::init(ModelSpec::desk((1, 16, 16), 3), 6).unwrap();
        let mut img = Tensor::zeros(vec![1, 16, 16]);
        img.fill_uniform(1.0, &mut crate::rng::RngStream::new(2, crate::rng::StreamId::Probe));
        let before = gradient(&m, &img, 1, Aggregation::RawSum, None).unwrap();
        m.fc_b.data_mut()[1] += 123.0;
        let after = gradient(&m, &img, 1, Aggregation::RawSum, None).unwrap();
        assert_eq!(before.values, after.values);
    }

    #[test]
    fn repeated_calls_are_identical_without_dropout() {
        let m = Model::init(ModelSpec::desk((1, 16, 16), 3), 7).unwrap();
        let mut img = Tensor::zeros(vec![1, 16, 16]);
        img.fill_uniform(1.0, &mut crate::rng::RngStream::new(3, crate::rng::StreamId::Probe));
        let cfg = IGConfig::zero_baseline(img.shape());
        for _ in 0..2 {
            assert_eq!(
                gradient(&m, &img, 0, Aggregation::RawSum, None).unwrap(),
                gradient(&m, &img, 0, Aggregation::RawSum, None).unwrap()
            );
            assert_eq!(
                integrated_gradients(&m, &img, 0, &cfg, Aggregation::RawSum, None).unwrap(),
                integrated_gradients(&m, &img, 0, &cfg, Aggregation::RawSum, None).unwrap()
            );
        }
    }

    #[test]
    fn saliency_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = linear_model(vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 0.0]);
        let img = Tensor::full(vec![1, 2, 2], 1.0);
        let map = gradient(&m, &img, 0, Aggregation::RawSum, None).unwrap();
        let base = dir.path().join("map");
        map.save(&base, Some(17), Some(3)).unwrap();
        let (shape, values) = raster::load_raster(&base.with_extension("raster")).unwrap();
        assert_eq!(shape, vec![2, 2]);
        assert_eq!(values, map.values);
        let sidecar: SaliencySidecar =
            serde_json::from_str(&std::fs::read_to_string(base.with_extension("json")).unwrap())
                .unwrap();
        assert_eq!(sidecar.method, "gradient");
        assert_eq!(sidecar.seed, Some(17));
        assert!(base.with_extension("png").exists());
    }
}
