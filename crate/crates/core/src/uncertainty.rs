//! Monte-Carlo Dropout: predictive distributions and per-pixel quantile
//! saliency maps.
//!
//! Sample `t` of a run draws its dropout mask from a stream seeded
//! `base + t`, so any single sample can be recomputed in isolation and
//! reproduces its row of the full run bit for bit. The same mask drives the
//! sample's forward pass, its backward pass, and (for Integrated Gradients)
//! every step along the path: each explanation describes exactly the thinned
//! network that made its prediction.

use serde::{Deserialize, Serialize};

use crate::attribution::{self, Aggregation, IGConfig, Method, SaliencyMap};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::{RngStream, StreamId};
use crate::tape::softmax_rows;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MCDConfig {
    /// Sample count T.
    pub samples: usize,
    /// Override of the model's dropout rate (e.g. 0.0 for a degenerate run).
    pub rate_override: Option<f32>,
    /// Base seed; sample t uses seed base + t.
    pub seed: u64,
}

impl MCDConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        MCDConfig {
            samples,
            rate_override: None,
            seed,
        }
    }
}

fn effective_rate(model: &Model, cfg: &MCDConfig) -> Result<f32> {
    if cfg.samples == 0 {
        return Err(Error::invalid_argument("MCD needs at least 1 sample"));
    }
    let rate = match cfg.rate_override {
        Some(r) => r,
        None => {
            if model.spec.dropout == 0.0 {
                return Err(Error::invalid_argument(
                    "model has no dropout (rate 0); MCD needs a dropout layer or a rate override",
                ));
            }
            model.spec.dropout
        }
    };
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid_argument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    Ok(rate)
}

/// Inverted-dropout mask for sample `t`: same per-element draw the training
/// path uses, off a stream seeded base + t.
pub fn sample_mask(features: usize, rate: f32, base_seed: u64, t: usize) -> Vec<f32> {
    let mut stream = RngStream::new(base_seed.wrapping_add(t as u64), StreamId::Dropout);
    if rate == 0.0 {
        return vec![1.0; features];
    }
    let scale = 1.0 / (1.0 - rate);
    (0..features)
        .map(|_| if stream.next_f32() < rate { 0.0 } else { scale })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassSummary {
    pub mean: f64,
    /// Sample standard deviation (n - 1); zero for T = 1.
    pub std: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

#[derive(Debug, Clone)]
pub struct PredictiveDistribution {
    pub samples: usize,
    pub classes: usize,
    /// T x classes softmax rows, row-major.
    pub probs: Vec<f32>,
    pub summary: Vec<ClassSummary>,
}

impl PredictiveDistribution {
    pub fn row(&self, t: usize) -> &[f32] {
        &self.probs[t * self.classes..][..self.classes]
    }

    pub fn means(&self) -> Vec<f64> {
        self.summary.iter().map(|s| s.mean).collect()
    }
}

/// T stochastic forward passes; row t is the softmax under mask t.
pub fn mcd_predict(model: &Model, image: &Tensor, cfg: &MCDConfig) -> Result<PredictiveDistribution> {
    let rate = effective_rate(model, cfg)?;
    let features = model.spec.feature_len();
    let classes = model.spec.classes;
    let (c, h, w) = model.spec.input;
    if image.shape() != [c, h, w] {
        return Err(Error::shape_mismatch("mcd input", image.shape(), &[c, h, w]));
    }
    let mut probs = Vec::with_capacity(cfg.samples * classes);
    for t in 0..cfg.samples {
        let mask = sample_mask(features, rate, cfg.seed, t);
        let batch = Tensor::new(vec![1, c, h, w], image.data().to_vec())?;
        let mut tape = crate::tape::Tape::new();
        let pass = model.forward(
            &mut tape,
            batch,
            crate::model::DropoutPlan::Fixed { row_mask: &mask },
            false,
        )?;
        let logits = tape.value(pass.logits).data();
        let mut row = vec![0.0f32; classes];
        softmax_rows(logits, classes, &mut row);
        probs.extend_from_slice(&row);
    }
    let summary = summarize(&probs, cfg.samples, classes);
    Ok(PredictiveDistribution {
        samples: cfg.samples,
        classes,
        probs,
        summary,
    })
}

fn summarize(probs: &[f32], t: usize, classes: usize) -> Vec<ClassSummary> {
    let mut out = Vec::with_capacity(classes);
    for class in 0..classes {
        let mut column: Vec<f64> = (0..t).map(|r| probs[r * classes + class] as f64).collect();
        let mean = column.iter().sum::<f64>() / t as f64;
        let std = if t > 1 {
            let ss: f64 = column.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (t - 1) as f64).sqrt()
        } else {
            0.0
        };
        column.sort_by(f64::total_cmp);
        out.push(ClassSummary {
            mean,
            std,
            q25: quantile_sorted(&column, 0.25, QuantileMethod::Linear),
            q50: quantile_sorted(&column, 0.5, QuantileMethod::Linear),
            q75: quantile_sorted(&column, 0.75, QuantileMethod::Linear),
        });
    }
    out
}

/// A stack of T saliency maps of one image under successive MCD masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyStack {
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    /// T x height x width, sample-major.
    pub values: Vec<f32>,
    pub method: Method,
    pub label: usize,
    pub aggregation: Aggregation,
}

impl SaliencyStack {
    pub fn map(&self, t: usize) -> &[f32] {
        &self.values[t * self.height * self.width..][..self.height * self.width]
    }
}

/// One explanation per MCD sample, each under that sample's mask.
#[allow(clippy::too_many_arguments)]
pub fn mcd_saliency_stack(
    model: &Model,
    image: &Tensor,
    label: usize,
    method: Method,
    ig: Option<&IGConfig>,
    agg: Aggregation,
    cfg: &MCDConfig,
) -> Result<SaliencyStack> {
    let rate = effective_rate(model, cfg)?;
    let features = model.spec.feature_len();
    let mut values = Vec::new();
    let (mut height, mut width) = (0, 0);
    for t in 0..cfg.samples {
        let mask = sample_mask(features, rate, cfg.seed, t);
        let map = explain_with_mask(model, image, label, method, ig, agg, Some(&mask))?;
        height = map.height;
        width = map.width;
        values.extend_from_slice(&map.values);
    }
    Ok(SaliencyStack {
        samples: cfg.samples,
        height,
        width,
        values,
        method,
        label,
        aggregation: agg,
    })
}

/// Dispatch one attribution call under an explicit dropout mask.
pub fn explain_with_mask(
    model: &Model,
    image: &Tensor,
    label: usize,
    method: Method,
    ig: Option<&IGConfig>,
    agg: Aggregation,
    mask: Option<&[f32]>,
) -> Result<SaliencyMap> {
    match method {
        Method::Gradient => attribution::gradient(model, image, label, agg, mask),
        Method::GradientXInput => attribution::gradient_x_input(model, image, label, agg, mask),
        Method::IntegratedGradients => {
            let cfg = ig.ok_or_else(|| {
                Error::invalid_argument("integrated-gradients needs an IGConfig")
            })?;
            attribution::integrated_gradients(model, image, label, cfg, agg, mask)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileMethod {
    /// Linear interpolation between adjacent order statistics at rank
    /// (T - 1) * q.
    Linear,
    /// Classic nearest-rank: the ceil(q * T)-th order statistic.
    NearestRank,
}

impl QuantileMethod {
    pub fn name(self) -> &'static str {
        match self {
            QuantileMethod::Linear => "linear",
            QuantileMethod::NearestRank => "nearest-rank",
        }
    }
}

/// Quantile of an ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64, method: QuantileMethod) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    match method {
        QuantileMethod::Linear => {
            let h = (n - 1) as f64 * q;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = h - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        }
        QuantileMethod::NearestRank => {
            let idx = if q <= 0.0 {
                0
            } else {
                ((q * n as f64).ceil() as usize).saturating_sub(1).min(n - 1)
            };
            sorted[idx]
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuantileSaliencyMap {
    pub q: f64,
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub method: Method,
    pub estimator: QuantileMethod,
}

/// JSON sidecar written next to a quantile-map raster.
#[derive(Debug, Serialize, Deserialize)]
pub struct QuantileSidecar {
    pub width: usize,
    pub height: usize,
    pub method: String,
    pub q: f64,
    pub samples: usize,
    pub estimator: String,
    pub label: usize,
}

impl QuantileSaliencyMap {
    /// Write `<base>.raster`, `<base>.json`, and `<base>.png` (min-max
    /// heatmap), like [`SaliencyMap::save`].
    pub fn save(&self, base: &std::path::Path, label: usize) -> Result<()> {
        crate::raster::save_raster(
            &base.with_extension("raster"),
            &[self.height, self.width],
            &self.values,
        )?;
        let sidecar = QuantileSidecar {
            width: self.width,
            height: self.height,
            method: self.method.name().into(),
            q: self.q,
            samples: self.samples,
            estimator: self.estimator.name().into(),
            label,
        };
        let mut json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::format(base, e.to_string()))?;
        json.push('\n');
        crate::fsio::atomic_write(&base.with_extension("json"), json.as_bytes())?;
        let png = crate::imageio::encode_gray_png(
            &crate::raster::minmax_normalize(&self.values),
            self.height,
            self.width,
        )?;
        crate::fsio::atomic_write(&base.with_extension("png"), &png)
    }
}

/// Per-pixel q-th quantile over the stack.
pub fn quantile_map(
    stack: &SaliencyStack,
    q: f64,
    method: QuantileMethod,
) -> Result<QuantileSaliencyMap> {
    if stack.samples == 0 {
        return Err(Error::invalid_argument("quantile of an empty stack"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid_argument(format!(
            "quantile must be in [0, 1], got {q}"
        )));
    }
    let pix = stack.height * stack.width;
    let t = stack.samples;
    let mut values = Vec::with_capacity(pix);
    let mut column = vec![0f64; t];
    for p in 0..pix {
        for (s, slot) in column.iter_mut().enumerate() {
            *slot = stack.values[s * pix + p] as f64;
        }
        column.sort_by(f64::total_cmp);
        values.push(quantile_sorted(&column, q, method) as f32);
    }
    Ok(QuantileSaliencyMap {
        q,
        samples: t,
        height: stack.height,
        width: stack.width,
        values,
        method: stack.method,
        estimator: method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::rng::StreamId;

    fn small_model(seed: u64) -> Model {
        Model::init(ModelSpec::desk((1, 16, 16), 3), seed).unwrap()
    }

    fn probe_image(seed: u64) -> Tensor {
        let mut img = Tensor::zeros(vec![1, 16, 16]);
        img.fill_uniform(1.0, &mut RngStream::new(seed, StreamId::Probe));
        img
    }

    #[test]
    fn rate_zero_override_matches_deterministic_prediction() {
        let m = small_model(1);
        let img = probe_image(1);
        let cfg = MCDConfig {
            samples: 4,
            rate_override: Some(0.0),
            seed: 9,
        };
        let dist = mcd_predict(&m, &img, &cfg).unwrap();
        let det = m.predict(&img).unwrap();
        for t in 0..4 {
            assert_eq!(dist.row(t), &det[..]);
        }
    }

    #[test]
    fn model_without_dropout_is_rejected() {
        let spec = ModelSpec {
            dropout: 0.0,
            ..ModelSpec::desk((1, 16, 16), 3)
        };
        let m = Model::init(spec, 0).unwrap();
        let img = probe_image(2);
        assert!(mcd_predict(&m, &img, &MCDConfig::new(2, 0)).is_err());
        // but an explicit override opts in
        let cfg = MCDConfig {
            samples: 2,
            rate_override: Some(0.5),
            seed: 0,
        };
        assert!(mcd_predict(&m, &img, &cfg).is_ok());
    }

    #[test]
    fn rows_normalize_and_vary() {
        let m = small_model(2);
        let img = probe_image(3);
        let dist = mcd_predict(&m, &img, &MCDConfig::new(16, 5)).unwrap();
        for t in 0..16 {
            let sum: f64 = dist.row(t).iter().map(|&v| v as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {t} sums to {sum}");
        }
        // with rate 0.5 the rows should not all be identical
        assert!((0..16).any(|t| dist.row(t) != dist.row(0)));
    }

    #[test]
    fn sample_isolation_reproduces_rows() {
        let m = small_model(3);
        let img = probe_image(4);
        let full = mcd_predict(&m, &img, &MCDConfig::new(5, 100)).unwrap();
        for t in 0..5 {
            let solo = mcd_predict(&m, &img, &MCDConfig::new(1, 100 + t as u64)).unwrap();
            assert_eq!(solo.row(0), full.row(t), "row {t}");
        }
    }

    #[test]
    fn stack_shape_and_determinism() {
        let m = small_model(4);
        let img = probe_image(5);
        let cfg = MCDConfig::new(3, 11);
        let a = mcd_saliency_stack(&m, &img, 0, Method::Gradient, None, Aggregation::Absolute, &cfg)
            .unwrap();
        assert_eq!((a.samples, a.height, a.width), (3, 16, 16));
        assert_eq!(a.values.len(), 3 * 256);
        let b = mcd_saliency_stack(&m, &img, 0, Method::Gradient, None, Aggregation::Absolute, &cfg)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stack_with_rate_zero_equals_deterministic_map() {
        let m = small_model(5);
        let img = probe_image(6);
        let cfg = MCDConfig {
            samples: 3,
            rate_override: Some(0.0),
            seed: 0,
        };
        let stack =
            mcd_saliency_stack(&m, &img, 1, Method::Gradient, None, Aggregation::RawSum, &cfg)
                .unwrap();
        let det = attribution::gradient(&m, &img, 1, Aggregation::RawSum, None).unwrap();
        for t in 0..3 {
            assert_eq!(stack.map(t), &det.values[..]);
        }
    }

    #[test]
    fn ig_method_requires_config() {
        let m = small_model(6);
        let img = probe_image(7);
        let cfg = MCDConfig::new(1, 0);
        assert!(mcd_saliency_stack(
            &m,
            &img,
            0,
            Method::IntegratedGradients,
            None,
            Aggregation::RawSum,
            &cfg
        )
        .is_err());
    }

    fn stack_from(maps: Vec<Vec<f32>>, h: usize, w: usize) -> SaliencyStack {
        let samples = maps.len();
        SaliencyStack {
            samples,
            height: h,
            width: w,
            values: maps.concat(),
            method: Method::Gradient,
            label: 0,
            aggregation: Aggregation::RawSum,
        }
    }

    #[test]
    fn quantiles_of_identical_maps() {
        let m = vec![1.0f32, -2.0, 0.5, 3.0];
        let stack = stack_from(vec![m.clone(); 5], 2, 2);
        for q in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let qm = quantile_map(&stack, q, QuantileMethod::Linear).unwrap();
            assert_eq!(qm.values, m);
        }
    }

    #[test]
    fn quantile_extremes_are_min_and_max() {
        let stack = stack_from(
            vec![vec![1.0, 5.0], vec![3.0, 2.0], vec![2.0, 8.0]],
            1,
            2,
        );
        let lo = quantile_map(&stack, 0.0, QuantileMethod::Linear).unwrap();
        let hi = quantile_map(&stack, 1.0, QuantileMethod::Linear).unwrap();
        assert_eq!(lo.values, vec![1.0, 2.0]);
        assert_eq!(hi.values, vec![3.0, 8.0]);
        let lo = quantile_map(&stack, 0.0, QuantileMethod::NearestRank).unwrap();
        assert_eq!(lo.values, vec![1.0, 2.0]);
    }

    #[test]
    fn median_matches_full_sort_oracle() {
        let mut rng = RngStream::new(8, StreamId::Probe);
        let maps: Vec<Vec<f32>> = (0..7)
            .map(|_| (0..6).map(|_| rng.uniform_f32(-2.0, 2.0)).collect())
            .collect();
        let stack = stack_from(maps.clone(), 2, 3);
        let med = quantile_map(&stack, 0.5, QuantileMethod::Linear).unwrap();
        for p in 0..6 {
            let mut col: Vec<f32> = (0..7).map(|t| maps[t][p]).collect();
            col.sort_by(f32::total_cmp);
            assert!((med.values[p] - col[3]).abs() < 1e-6);
        }
    }

    #[test]
    fn quantile_maps_are_monotone_in_q() {
        let m = small_model(7);
        let img = probe_image(8);
        let cfg = MCDConfig::new(9, 33);
        let stack =
            mcd_saliency_stack(&m, &img, 2, Method::Gradient, None, Aggregation::RawSum, &cfg)
                .unwrap();
        let qs = [0.0, 0.25, 0.5, 0.75, 1.0];
        for pair in qs.windows(2) {
            for method in [QuantileMethod::Linear, QuantileMethod::NearestRank] {
                let a = quantile_map(&stack, pair[0], method).unwrap();
                let b = quantile_map(&stack, pair[1], method).unwrap();
                for (x, y) in a.values.iter().zip(&b.values) {
                    assert!(x <= y, "q {} -> {} broke monotonicity: {x} > {y}", pair[0], pair[1]);
                }
            }
        }
    }

    #[test]
    fn summary_quantiles_are_ordered() {
        let m = small_model(8);
        let img = probe_image(9);
        let dist = mcd_predict(&m, &img, &MCDConfig::new(32, 2)).unwrap();
        for s in &dist.summary {
            assert!(s.q25 <= s.q50 && s.q50 <= s.q75);
            assert!(s.std >= 0.0);
            assert!((0.0..=1.0).contains(&s.mean));
        }
    }
}
