//! Pixel Flipping: remove the pixels an explanation calls most relevant, in
//! relevance order, and watch the model's confidence in the correct class
//! decay. A faithful explanation produces a curve that drops faster than
//! flipping random pixels.
//!
//! Evaluation is always deterministic (dropout inactive); Monte-Carlo dropout
//! enters only through quantile-saliency rankings.

use serde::{Deserialize, Serialize};

use crate::attribution::{Aggregation, IGConfig, Method};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::order::{argmax_f32, argsort_desc_f32};
use crate::rng::{RngStream, StreamId};
use crate::tape::softmax_rows;
use crate::tensor::Tensor;
use crate::uncertainty::{mcd_saliency_stack, quantile_map, MCDConfig, QuantileMethod};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillStrategy {
    /// Every flipped pixel (all channels) becomes this value.
    Constant(f32),
    /// Per-channel mean over the evaluated sample set.
    DatasetMean,
    /// Per-channel mean of the image being flipped.
    PerImageMean,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlipConfig {
    pub fill: FillStrategy,
    /// Fraction of pixels flipped per iteration.
    pub step: f64,
    /// Largest flipped fraction on the grid.
    pub max: f64,
}

impl Default for FlipConfig {
    fn default() -> Self {
        FlipConfig {
            fill: FillStrategy::DatasetMean,
            step: 0.01,
            max: 0.5,
        }
    }
}

impl FlipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= self.max && self.max <= 1.0) {
            return Err(Error::invalid_argument(format!(
                "flip grid needs 0 < step <= max <= 1, got step {} max {}",
                self.step, self.max
            )));
        }
        Ok(())
    }

    /// The step grid: 0, step, 2*step, ..., floor(max/step)*step.
    pub fn fractions(&self) -> Vec<f64> {
        let n = (self.max / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    /// Fraction of pixels flipped.
    pub fraction: f64,
    /// Mean correct-class softmax score over the sample set.
    pub mean_score: f64,
    /// Top-1 accuracy over the sample set.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlippingCurve {
    /// Ranking-source id, e.g. "gradient:q0.50" or "random:seed7".
    pub source: String,
    pub points: Vec<CurvePoint>,
    pub samples: usize,
}

/// Trapezoidal area under the mean-score curve over the fraction axis.
pub fn curve_auc(curve: &FlippingCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|p| (p[1].fraction - p[0].fraction) * (p[0].mean_score + p[1].mean_score) / 2.0)
        .sum()
}

fn check_prefix(ranking: &[usize], n: usize, pixels: usize) -> Result<()> {
    if n > pixels {
        return Err(Error::invalid_argument(format!(
            "cannot flip {n} of {pixels} pixels"
        )));
    }
    if ranking.len() < n {
        return Err(Error::invalid_argument(format!(
            "ranking covers {} pixels, need {n}",
            ranking.len()
        )));
    }
    let mut seen = vec![false; pixels];
    for &p in &ranking[..n] {
        if p >= pixels {
            return Err(Error::invalid_argument(format!(
                "ranking entry {p} out of range for {pixels} pixels"
            )));
        }
        if seen[p] {
            return Err(Error::invalid_argument(format!(
                "ranking repeats pixel {p}; need a permutation prefix"
            )));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Overwrite pixels `ranking[range]` (all channels) with per-channel fill.
fn flip_range(
    data: &mut [f32],
    ranking: &[usize],
    range: std::ops::Range<usize>,
    fill: &[f32],
    pixels: usize,
) {
    for &p in &ranking[range] {
        for (ch, &v) in fill.iter().enumerate() {
            data[ch * pixels + p] = v;
        }
    }
}

fn per_image_fill(strategy: FillStrategy, image: &[f32], c: usize, dataset_mean: &[f32]) -> Vec<f32> {
    let pixels = image.len() / c;
    match strategy {
        FillStrategy::Constant(v) => vec![v; c],
        FillStrategy::DatasetMean => dataset_mean.to_vec(),
        FillStrategy::PerImageMean => (0..c)
            .map(|ch| {
                let plane = &image[ch * pixels..][..pixels];
                (plane.iter().map(|&v| v as f64).sum::<f64>() / pixels as f64) as f32
            })
            .collect(),
    }
}

fn dataset_channel_means(ds: &Dataset) -> Vec<f32> {
    let (c, h, w) = ds.shape;
    let pixels = h * w;
    let mut sums = vec![0.0f64; c];
    for i in 0..ds.len() {
        let img = ds.image(i);
        for (ch, sum) in sums.iter_mut().enumerate() {
            *sum += img[ch * pixels..][..pixels].iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    let count = (ds.len() * pixels) as f64;
    sums.into_iter().map(|s| (s / count) as f32).collect()
}

/// The first `n` ranked pixels of `image` replaced by the fill value.
pub fn flip_pixels(image: &Tensor, ranking: &[usize], n: usize, fill: &[f32]) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != fill.len() {
        return Err(Error::shape_mismatch("flip fill", shape, &[fill.len()]));
    }
    let pixels = shape[1] * shape[2];
    check_prefix(ranking, n, pixels)?;
    let mut out = image.clone();
    flip_range(out.data_mut(), ranking, 0..n, fill, pixels);
    Ok(out)
}

const EVAL_BATCH: usize = 32;

/// Correct-class mean softmax score and top-1 accuracy of `model` on a set of
/// already-perturbed images.
fn score_set(
    model: &Model,
    images: &[Vec<f32>],
    labels: &[usize],
    shape: (usize, usize, usize),
) -> Result<(f64, f64)> {
    let (c, h, w) = shape;
    let classes = model.spec.classes;
    let mut score_sum = 0.0f64;
    let mut correct = 0usize;
    let mut start = 0;
    while start < images.len() {
        let end = (start + EVAL_BATCH).min(images.len());
        let mut buf = Vec::with_capacity((end - start) * c * h * w);
        for img in &images[start..end] {
            buf.extend_from_slice(img);
        }
        let logits = model.logits_batch(Tensor::new(vec![end - start, c, h, w], buf)?)?;
        let mut probs = vec![0.0f32; (end - start) * classes];
        softmax_rows(logits.data(), classes, &mut probs);
        for (row, &label) in probs.chunks_exact(classes).zip(&labels[start..end]) {
            score_sum += row[label] as f64;
            if argmax_f32(row) == label {
                correct += 1;
            }
        }
        start = end;
    }
    let n = images.len() as f64;
    Ok((score_sum / n, correct as f64 / n))
}

/// One flipping curve: at each grid fraction, flip that prefix of every
/// sample's ranking and re-evaluate the whole set.
pub fn pf_curve(
    model: &Model,
    ds: &Dataset,
    rankings: &[Vec<usize>],
    cfg: &FlipConfig,
    source: impl Into<String>,
) -> Result<FlippingCurve> {
    cfg.validate()?;
    if ds.len() == 0 {
        return Err(Error::invalid_argument("pixel flipping on an empty sample set"));
    }
    if rankings.len() != ds.len() {
        return Err(Error::shape_mismatch("rankings", &[rankings.len()], &[ds.len()]));
    }
    let (c, h, w) = ds.shape;
    if model.spec.input != (c, h, w) {
        return Err(Error::shape_mismatch(
            "flip input",
            &[c, h, w],
            &[model.spec.input.0, model.spec.input.1, model.spec.input.2],
        ));
    }
    let pixels = h * w;
    let fractions = cfg.fractions();
    let counts: Vec<usize> = fractions
        .iter()
        .map(|f| ((f * pixels as f64).round() as usize).min(pixels))
        .collect();
    let n_max = *counts.last().unwrap();
    for ranking in rankings {
        check_prefix(ranking, n_max, pixels)?;
    }
    let dataset_mean = match cfg.fill {
        FillStrategy::DatasetMean => dataset_channel_means(ds),
        _ => vec![0.0; c],
    };
    let mut work: Vec<Vec<f32>> = (0..ds.len()).map(|i| ds.image(i).to_vec()).collect();
    let fills: Vec<Vec<f32>> = work
        .iter()
        .map(|img| per_image_fill(cfg.fill, img, c, &dataset_mean))
        .collect();
    let mut points = Vec::with_capacity(fractions.len());
    let mut prev_n = 0;
    for (&fraction, &n) in fractions.iter().zip(&counts) {
        for ((img, ranking), fill) in work.iter_mut().zip(rankings).zip(&fills) {
            flip_range(img, ranking, prev_n..n, fill, pixels);
        }
        prev_n = n;
        let (mean_score, accuracy) = score_set(model, &work, &ds.labels, ds.shape)?;
        points.push(CurvePoint {
            fraction,
            mean_score,
            accuracy,
        });
    }
    Ok(FlippingCurve {
        source: source.into(),
        points,
        samples: ds.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RandomBaseline {
    /// Pointwise mean over the per-seed curves.
    pub mean: FlippingCurve,
    pub per_seed: Vec<FlippingCurve>,
    /// Pointwise standard error of mean_score across seeds.
    pub stderr_score: Vec<f64>,
    /// Pointwise standard error of accuracy across seeds.
    pub stderr_accuracy: Vec<f64>,
}

fn stderr(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
}

/// Per-sample random pixel permutations from each seed's RandomRanking
/// stream, averaged pointwise.
pub fn pf_random_baseline(
    model: &Model,
    ds: &Dataset,
    cfg: &FlipConfig,
    seeds: &[u64],
) -> Result<RandomBaseline> {
    if seeds.is_empty() {
        return Err(Error::invalid_argument("random baseline needs at least 1 seed"));
    }
    let (_, h, w) = ds.shape;
    let pixels = h * w;
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = RngStream::new(seed, StreamId::RandomRanking);
        let rankings: Vec<Vec<usize>> = (0..ds.len()).map(|_| rng.permutation(pixels)).collect();
        per_seed.push(pf_curve(model, ds, &rankings, cfg, format!("random:seed{seed}"))?);
    }
    let steps = per_seed[0].points.len();
    let mut points = Vec::with_capacity(steps);
    let mut stderr_score = Vec::with_capacity(steps);
    let mut stderr_accuracy = Vec::with_capacity(steps);
    for i in 0..steps {
        let scores: Vec<f64> = per_seed.iter().map(|c| c.points[i].mean_score).collect();
        let accs: Vec<f64> = per_seed.iter().map(|c| c.points[i].accuracy).collect();
        points.push(CurvePoint {
            fraction: per_seed[0].points[i].fraction,
            mean_score: scores.iter().sum::<f64>() / scores.len() as f64,
            accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
        });
        stderr_score.push(stderr(&scores));
        stderr_accuracy.push(stderr(&accs));
    }
    Ok(RandomBaseline {
        mean: FlippingCurve {
            source: format!("random:mean-of-{}", seeds.len()),
            points,
            samples: ds.len(),
        },
        per_seed,
        stderr_score,
        stderr_accuracy,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MCDExperimentConfig {
    pub methods: Vec<Method>,
    pub quantiles: Vec<f64>,
    pub mcd: MCDConfig,
    /// Path steps for integrated gradients (zero baseline).
    pub ig_steps: usize,
    pub aggregation: Aggregation,
    pub quantile_method: QuantileMethod,
    pub flip: FlipConfig,
    pub baseline_seeds: Vec<u64>,
}

impl MCDExperimentConfig {
    /// Fig.-6 defaults: three methods, quantiles {0.25, 0.5, 0.75}, T = 100,
    /// 20-seed random baseline.
    pub fn standard(seed: u64) -> Self {
        MCDExperimentConfig {
            methods: vec![
                Method::Gradient,
                Method::GradientXInput,
                Method::IntegratedGradients,
            ],
            quantiles: vec![0.25, 0.5, 0.75],
            mcd: MCDConfig::new(100, seed),
            ig_steps: 64,
            aggregation: Aggregation::Absolute,
            quantile_method: QuantileMethod::Linear,
            flip: FlipConfig::default(),
            baseline_seeds: (0..20).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BundleCurve {
    pub method: Method,
    pub q: f64,
    pub curve: FlippingCurve,
    /// Fraction of nonzero steps where this curve's mean score is below the
    /// random baseline's.
    pub below_random_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PFBundle {
    pub curves: Vec<BundleCurve>,
    pub random: RandomBaseline,
    pub samples: usize,
    /// Always false: curves are evaluated with dropout inactive.
    pub dropout_during_eval: bool,
}

/// Fraction of nonzero-flip steps where `curve` lies strictly below `baseline`.
pub fn below_fraction(curve: &FlippingCurve, baseline: &FlippingCurve) -> f64 {
    let steps: Vec<_> = curve.points.iter().zip(&baseline.points).skip(1).collect();
    if steps.is_empty() {
        return 0.0;
    }
    let below = steps
        .iter()
        .filter(|(c, b)| c.mean_score < b.mean_score)
        .count();
    below as f64 / steps.len() as f64
}

/// The Fig.-6 experiment on one class: per (method, quantile) a flipping
/// curve driven by the MCD quantile-saliency ranking, plus a random baseline.
pub fn pf_mcd_experiment(
    model: &Model,
    ds: &Dataset,
    cfg: &MCDExperimentConfig,
) -> Result<PFBundle> {
    if ds.len() == 0 {
        return Err(Error::invalid_argument("experiment needs at least 1 sample"));
    }
    let label = ds.labels[0];
    if ds.labels.iter().any(|&l| l != label) {
        return Err(Error::invalid_argument(
            "experiment samples must share one class",
        ));
    }
    if cfg.methods.is_empty() || cfg.quantiles.is_empty() {
        return Err(Error::invalid_argument("need at least one method and quantile"));
    }
    let (c, h, w) = ds.shape;
    let ig = IGConfig {
        baseline: Tensor::zeros(vec![c, h, w]),
        steps: cfg.ig_steps,
    };
    let random = pf_random_baseline(model, ds, &cfg.flip, &cfg.baseline_seeds)?;
    let mut curves = Vec::with_capacity(cfg.methods.len() * cfg.quantiles.len());
    for &method in &cfg.methods {
        let ig_ref = (method == Method::IntegratedGradients).then_some(&ig);
        // one stack per sample, shared by all quantiles of this method
        let mut rankings_per_q: Vec<Vec<Vec<usize>>> =
            vec![Vec::with_capacity(ds.len()); cfg.quantiles.len()];
        for i in 0..ds.len() {
            let image = ds.image_tensor(i);
            let stack = mcd_saliency_stack(
                model,
                &image,
                label,
                method,
                ig_ref,
                cfg.aggregation,
                &cfg.mcd,
            )?;
            for (slot, &q) in rankings_per_q.iter_mut().zip(&cfg.quantiles) {
                let qmap = quantile_map(&stack, q, cfg.quantile_method)?;
                slot.push(argsort_desc_f32(&qmap.values));
            }
        }
        for (rankings, &q) in rankings_per_q.iter().zip(&cfg.quantiles) {
            let curve = pf_curve(
                model,
                ds,
                rankings,
                &cfg.flip,
                format!("{}:q{q:.2}", method.name()),
            )?;
            let below_random_fraction = below_fraction(&curve, &random.mean);
            curves.push(BundleCurve {
                method,
                q,
                curve,
                below_random_fraction,
            });
        }
    }
    Ok(PFBundle {
        curves,
        random,
        samples: ds.len(),
        dropout_during_eval: false,
    })
}
