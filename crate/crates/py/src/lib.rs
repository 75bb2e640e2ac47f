//! Python bindings for the xaikit core crate.
//!
//! The module mirrors the library's main types and operations with plain
//! Python data (lists, tuples, dicts) so it works without numpy:
//!
//! - `Dataset` — synthetic sets from `shapes3` / `patch_pair`, with images,
//!   labels and exact segmentation masks
//! - `Model` — desk-CNN training, checkpoint save/load, softmax prediction
//! - `explain` / `Saliency` — gradient, gradient-x-input and integrated
//!   gradients attribution maps
//! - `localisation_metrics` — the five mask-based localisation metrics
//! - `mcd_predict` / `mcd_quantile_map` — MC-dropout predictive
//!   distributions and quantile saliency maps
//! - `pf_curve` / `pf_random_baseline` — pixel-flipping faithfulness curves
//! - `argsort_desc`, `decode_mask_png` — ranking and mask-codec helpers

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use xaikit::attribution::{Aggregation, IGConfig, Method, SaliencyMap};
use xaikit::checkpoint::{Checkpoint, TrainMeta};
use xaikit::dataset::Dataset;
use xaikit::error::Error;
use xaikit::faithfulness::{self, FillStrategy, FlipConfig, FlippingCurve};
use xaikit::localisation as loc;
use xaikit::mask::{SegMask, MASK_TOLERANCE};
use xaikit::model::{predicted_class, Model, ModelSpec};
use xaikit::synth::{generate, SyntheticSpec};
use xaikit::tensor::Tensor;
use xaikit::train::{train, TrainConfig};
use xaikit::uncertainty::{self, MCDConfig, QuantileMethod};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::MissingFile { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_method(s: &str) -> PyResult<Method> {
    [Method::Gradient, Method::GradientXInput, Method::IntegratedGradients]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| {
            PyValueError::new_err(format!(
                "unknown method '{s}' (expected gradient, gradient-x-input, or \
                 integrated-gradients)"
            ))
        })
}

fn parse_aggregation(s: &str) -> PyResult<Aggregation> {
    [Aggregation::RawSum, Aggregation::Positive, Aggregation::Absolute]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| {
            PyValueError::new_err(format!(
                "unknown aggregation '{s}' (expected raw-sum, positive, or absolute)"
            ))
        })
}

fn parse_estimator(s: &str) -> PyResult<QuantileMethod> {
    [QuantileMethod::Linear, QuantileMethod::NearestRank]
        .into_iter()
        .find(|q| q.name() == s)
        .ok_or_else(|| {
            PyValueError::new_err(format!(
                "unknown estimator '{s}' (expected linear or nearest-rank)"
            ))
        })
}

fn parse_fill(s: &str) -> PyResult<FillStrategy> {
    match s {
        "dataset-mean" => Ok(FillStrategy::DatasetMean),
        "per-image-mean" => Ok(FillStrategy::PerImageMean),
        _ => match s.strip_prefix("constant:").and_then(|v| v.parse::<f32>().ok()) {
            Some(v) => Ok(FillStrategy::Constant(v)),
            None => Err(PyValueError::new_err(format!(
                "unknown fill '{s}' (expected dataset-mean, per-image-mean, or constant:VALUE)"
            ))),
        },
    }
}

fn image_tensor(model: &Model, image: Vec<f32>) -> PyResult<Tensor> {
    let (c, h, w) = model.spec.input;
    if image.len() != c * h * w {
        return Err(PyValueError::new_err(format!(
            "image has {} values, model expects {}x{}x{} = {}",
            image.len(),
            c,
            h,
            w,
            c * h * w
        )));
    }
    Tensor::new(vec![c, h, w], image).map_err(err)
}

/// Map a metric result to Python: degenerate inputs become None, real
/// failures raise.
fn metric_opt(r: Result<f64, Error>) -> PyResult<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(err(e)),
    }
}

fn curve_points(curve: &FlippingCurve) -> Vec<(f64, f64, f64)> {
    curve
        .points
        .iter()
        .map(|p| (p.fraction, p.mean_score, p.accuracy))
        .collect()
}

/// An image classification dataset, optionally with one exact segmentation
/// mask per image.
#[pyclass(name = "Dataset")]
struct PyDataset {
    ds: Dataset,
    masks: Vec<SegMask>,
}

impl PyDataset {
    fn check_index(&self, i: usize) -> PyResult<()> {
        if i >= self.ds.len() {
            return Err(PyValueError::new_err(format!(
                "index {i} out of range for {} images",
                self.ds.len()
            )));
        }
        Ok(())
    }
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.ds.len()
    }

    fn __repr__(&self) -> String {
        let (c, h, w) = self.ds.shape;
        format!(
            "Dataset({} images, {c}x{h}x{w}, classes={:?})",
            self.ds.len(),
            self.ds.class_names
        )
    }

    /// (channels, height, width) of every image.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.ds.shape
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.ds.class_names.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.ds.labels.clone()
    }

    /// Flat channel-major pixel values of image `i`.
    fn image(&self, i: usize) -> PyResult<Vec<f32>> {
        self.check_index(i)?;
        Ok(self.ds.image(i).to_vec())
    }

    fn label(&self, i: usize) -> PyResult<usize> {
        self.check_index(i)?;
        Ok(self.ds.labels[i])
    }

    /// Boolean object mask (any body part) of image `i`.
    fn mask_union(&self, i: usize) -> PyResult<Vec<bool>> {
        self.check_index(i)?;
        if self.masks.is_empty() {
            return Err(PyValueError::new_err("dataset has no masks"));
        }
        Ok(self.masks[i].union())
    }

    /// Row-major part codes (0 background, 1 head, 2 thorax, 3 abdomen).
    fn mask_codes(&self, i: usize) -> PyResult<Vec<u8>> {
        self.check_index(i)?;
        if self.masks.is_empty() {
            return Err(PyValueError::new_err("dataset has no masks"));
        }
        Ok(self.masks[i].codes().to_vec())
    }

    /// New dataset holding the given images (masks follow along).
    fn subset(&self, indices: Vec<usize>) -> PyResult<PyDataset> {
        for &i in &indices {
            self.check_index(i)?;
        }
        let masks = if self.masks.is_empty() {
            Vec::new()
        } else {
            indices.iter().map(|&i| self.masks[i].clone()).collect()
        };
        Ok(PyDataset {
            ds: self.ds.subset(&indices),
            masks,
        })
    }
}

/// The dropout CNN plus its training record.
#[pyclass(name = "Model")]
struct PyModel {
    model: Model,
    meta: TrainMeta,
}

#[pymethods]
impl PyModel {
    /// Train the desk CNN on a dataset with a per-class train/validation
    /// split (`train_frac` of each class trains, the rest validates).
    #[staticmethod]
    #[pyo3(signature = (ds, *, epochs=10, lr=1e-3, batch=32, seed=0, dropout=0.5, train_frac=0.75, early_stop=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        ds: &PyDataset,
        epochs: usize,
        lr: f64,
        batch: usize,
        seed: u64,
        dropout: f32,
        train_frac: f64,
        early_stop: Option<f64>,
    ) -> PyResult<PyModel> {
        if !(0.0 < train_frac && train_frac < 1.0) {
            return Err(PyValueError::new_err("train_frac must be in (0, 1)"));
        }
        let classes = ds.ds.class_names.len();
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for (i, &l) in ds.ds.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        let (mut tr, mut va) = (Vec::new(), Vec::new());
        for (label, idxs) in by_class.iter().enumerate() {
            if idxs.len() < 2 {
                return Err(PyValueError::new_err(format!(
                    "class {label} has {} image(s); the split needs at least 2",
                    idxs.len()
                )));
            }
            let cut = ((idxs.len() as f64) * train_frac)
                .round()
                .clamp(1.0, (idxs.len() - 1) as f64) as usize;
            tr.extend_from_slice(&idxs[..cut]);
            va.extend_from_slice(&idxs[cut..]);
        }
        tr.sort_unstable();
        va.sort_unstable();
        let spec = ModelSpec {
            dropout,
            ..ModelSpec::desk(ds.ds.shape, classes)
        };
        let cfg = TrainConfig {
            lr,
            epochs,
            batch,
            seed,
            early_stop_val_acc: early_stop,
        };
        let out = train(&spec, &ds.ds.subset(&tr), &ds.ds.subset(&va), &cfg).map_err(err)?;
        Ok(PyModel {
            meta: TrainMeta {
                epochs_run: out.epochs_run,
                seed: out.seed,
                history: out.history,
            },
            model: out.model,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<PyModel> {
        let ckpt = Checkpoint::load(&path).map_err(err)?;
        Ok(PyModel {
            model: ckpt.model,
            meta: ckpt.meta,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint {
            model: self.model.clone(),
            meta: self.meta.clone(),
        }
        .save(&path)
        .map_err(err)
    }

    fn __repr__(&self) -> String {
        let (c, h, w) = self.model.spec.input;
        format!(
            "Model(input={c}x{h}x{w}, classes={}, epochs_run={})",
            self.model.spec.classes, self.meta.epochs_run
        )
    }

    #[getter]
    fn classes(&self) -> usize {
        self.model.spec.classes
    }

    /// (channels, height, width) the model expects.
    #[getter]
    fn input(&self) -> (usize, usize, usize) {
        self.model.spec.input
    }

    #[getter]
    fn epochs_run(&self) -> usize {
        self.meta.epochs_run
    }

    /// Validation accuracy of the last trained epoch, if any.
    #[getter]
    fn val_acc(&self) -> Option<f64> {
        self.meta.history.last().map(|h| h.val_acc)
    }

    /// (epoch, train_loss, val_loss, val_acc) per epoch.
    #[getter]
    fn history(&self) -> Vec<(usize, f64, f64, f64)> {
        self.meta
            .history
            .iter()
            .map(|h| (h.epoch, h.train_loss, h.val_loss, h.val_acc))
            .collect()
    }

    /// Softmax class probabilities for one image (dropout inactive).
    fn predict(&self, image: Vec<f32>) -> PyResult<Vec<f32>> {
        let img = image_tensor(&self.model, image)?;
        self.model.predict(&img).map_err(err)
    }

    fn predict_label(&self, image: Vec<f32>) -> PyResult<usize> {
        Ok(predicted_class(&self.predict(image)?))
    }
}

/// One saliency map: `values` is row-major height x width.
#[pyclass(name = "Saliency")]
struct PySaliency {
    #[pyo3(get)]
    values: Vec<f32>,
    #[pyo3(get)]
    width: usize,
    #[pyo3(get)]
    height: usize,
    #[pyo3(get)]
    method: String,
    #[pyo3(get)]
    label: usize,
    #[pyo3(get)]
    aggregation: String,
    /// Quantile level for MCD quantile maps, None for deterministic maps.
    #[pyo3(get)]
    q: Option<f64>,
}

impl PySaliency {
    fn from_map(map: SaliencyMap, q: Option<f64>) -> PySaliency {
        PySaliency {
            values: map.values,
            width: map.width,
            height: map.height,
            method: map.method.name().to_string(),
            label: map.label,
            aggregation: map.aggregation.name().to_string(),
            q,
        }
    }
}

#[pymethods]
impl PySaliency {
    fn __repr__(&self) -> String {
        format!(
            "Saliency({}x{}, method={}, aggregation={}, label={})",
            self.width, self.height, self.method, self.aggregation, self.label
        )
    }
}

/// Three solid shapes at distinct intensities; the standard training set.
#[pyfunction]
fn shapes3(per_class: usize, seed: u64) -> PyResult<PyDataset> {
    let set = generate(&SyntheticSpec::shapes3(per_class, seed)).map_err(err)?;
    Ok(PyDataset {
        ds: set.dataset,
        masks: set.masks,
    })
}

/// Two classes whose only salient difference is a small bright checker patch.
#[pyfunction]
fn patch_pair(per_class: usize, seed: u64) -> PyResult<PyDataset> {
    let set = generate(&SyntheticSpec::patch_pair(per_class, seed)).map_err(err)?;
    Ok(PyDataset {
        ds: set.dataset,
        masks: set.masks,
    })
}

/// Attribution map of `label` for one image.
#[pyfunction]
#[pyo3(signature = (model, image, label, *, method="gradient", aggregation="absolute", ig_steps=64))]
fn explain(
    model: &PyModel,
    image: Vec<f32>,
    label: usize,
    method: &str,
    aggregation: &str,
    ig_steps: usize,
) -> PyResult<PySaliency> {
    let m = parse_method(method)?;
    let agg = parse_aggregation(aggregation)?;
    let img = image_tensor(&model.model, image)?;
    let ig = IGConfig {
        baseline: Tensor::zeros(img.shape().to_vec()),
        steps: ig_steps,
    };
    let map = uncertainty::explain_with_mask(&model.model, &img, label, m, Some(&ig), agg, None)
        .map_err(err)?;
    Ok(PySaliency::from_map(map, None))
}

/// All five localisation metrics of one map against one boolean mask.
/// Metrics that are undefined for the input (empty mask, no positive
/// attribution) come back as None.
#[pyfunction]
#[pyo3(signature = (map, mask, *, k=1000))]
fn localisation_metrics(
    py: Python<'_>,
    map: Vec<f32>,
    mask: Vec<bool>,
    k: usize,
) -> PyResult<Py<PyDict>> {
    if map.len() != mask.len() {
        return Err(PyValueError::new_err(format!(
            "map has {} values but mask has {}",
            map.len(),
            mask.len()
        )));
    }
    if map.is_empty() {
        return Err(PyValueError::new_err("map is empty"));
    }
    let k = k.min(map.len());
    let d = PyDict::new(py);
    d.set_item("pointing-game", metric_opt(loc::pointing_game(&map, &mask))?)?;
    d.set_item(
        "attribution-localisation",
        metric_opt(loc::attribution_localisation(&map, &mask))?,
    )?;
    d.set_item(
        "top-k-intersection",
        metric_opt(loc::top_k_intersection(&map, &mask, k))?,
    )?;
    d.set_item(
        "relevance-rank-accuracy",
        metric_opt(loc::relevance_rank_accuracy(&map, &mask))?,
    )?;
    d.set_item("auc", metric_opt(loc::localisation_auc(&map, &mask))?)?;
    Ok(d.into())
}

/// MC-dropout predictive distribution: T softmax rows plus per-class
/// summary statistics.
#[pyfunction]
#[pyo3(signature = (model, image, *, samples=50, seed=0, rate=None))]
fn mcd_predict(
    py: Python<'_>,
    model: &PyModel,
    image: Vec<f32>,
    samples: usize,
    seed: u64,
    rate: Option<f32>,
) -> PyResult<Py<PyDict>> {
    let img = image_tensor(&model.model, image)?;
    let cfg = MCDConfig {
        samples,
        rate_override: rate,
        seed,
    };
    let dist = uncertainty::mcd_predict(&model.model, &img, &cfg).map_err(err)?;
    let rows: Vec<Vec<f32>> = (0..dist.samples).map(|t| dist.row(t).to_vec()).collect();
    let d = PyDict::new(py);
    d.set_item("rows", rows)?;
    d.set_item(
        "mean",
        dist.summary.iter().map(|s| s.mean).collect::<Vec<_>>(),
    )?;
    d.set_item("std", dist.summary.iter().map(|s| s.std).collect::<Vec<_>>())?;
    d.set_item("q25", dist.summary.iter().map(|s| s.q25).collect::<Vec<_>>())?;
    d.set_item("q50", dist.summary.iter().map(|s| s.q50).collect::<Vec<_>>())?;
    d.set_item("q75", dist.summary.iter().map(|s| s.q75).collect::<Vec<_>>())?;
    Ok(d.into())
}

/// Pixelwise q-th quantile over T MC-dropout saliency samples.
#[pyfunction]
#[pyo3(signature = (model, image, label, *, q=0.5, method="gradient", aggregation="absolute", samples=50, seed=0, rate=None, ig_steps=64, estimator="linear"))]
#[allow(clippy::too_many_arguments)]
fn mcd_quantile_map(
    model: &PyModel,
    image: Vec<f32>,
    label: usize,
    q: f64,
    method: &str,
    aggregation: &str,
    samples: usize,
    seed: u64,
    rate: Option<f32>,
    ig_steps: usize,
    estimator: &str,
) -> PyResult<PySaliency> {
    let m = parse_method(method)?;
    let agg = parse_aggregation(aggregation)?;
    let est = parse_estimator(estimator)?;
    let img = image_tensor(&model.model, image)?;
    let ig = IGConfig {
        baseline: Tensor::zeros(img.shape().to_vec()),
        steps: ig_steps,
    };
    let cfg = MCDConfig {
        samples,
        rate_override: rate,
        seed,
    };
    let stack =
        uncertainty::mcd_saliency_stack(&model.model, &img, label, m, Some(&ig), agg, &cfg)
            .map_err(err)?;
    let qm = uncertainty::quantile_map(&stack, q, est).map_err(err)?;
    Ok(PySaliency {
        values: qm.values,
        width: qm.width,
        height: qm.height,
        method: m.name().to_string(),
        label,
        aggregation: agg.name().to_string(),
        q: Some(q),
    })
}

/// Pixel-flipping curve for per-image rankings: a list of
/// (fraction, mean_score, accuracy) points.
#[pyfunction]
#[pyo3(signature = (model, ds, rankings, *, step=0.05, max_frac=0.5, fill="dataset-mean"))]
fn pf_curve(
    model: &PyModel,
    ds: &PyDataset,
    rankings: Vec<Vec<usize>>,
    step: f64,
    max_frac: f64,
    fill: &str,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let cfg = FlipConfig {
        fill: parse_fill(fill)?,
        step,
        max: max_frac,
    };
    let curve =
        faithfulness::pf_curve(&model.model, &ds.ds, &rankings, &cfg, "python").map_err(err)?;
    Ok(curve_points(&curve))
}

/// Mean random-order flipping curve over the given number of seeds, with
/// the pointwise standard error and the trapezoid AUC.
#[pyfunction]
#[pyo3(signature = (model, ds, *, seeds=20, step=0.05, max_frac=0.5, fill="dataset-mean"))]
fn pf_random_baseline(
    py: Python<'_>,
    model: &PyModel,
    ds: &PyDataset,
    seeds: u64,
    step: f64,
    max_frac: f64,
    fill: &str,
) -> PyResult<Py<PyDict>> {
    let cfg = FlipConfig {
        fill: parse_fill(fill)?,
        step,
        max: max_frac,
    };
    let seed_list: Vec<u64> = (0..seeds).collect();
    let base = faithfulness::pf_random_baseline(&model.model, &ds.ds, &cfg, &seed_list)
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("mean", curve_points(&base.mean))?;
    d.set_item("stderr_score", base.stderr_score.clone())?;
    d.set_item("auc", faithfulness::curve_auc(&base.mean))?;
    Ok(d.into())
}

/// Indices of `values` sorted by value descending; ties keep the lower index.
#[pyfunction]
fn argsort_desc(values: Vec<f32>) -> Vec<usize> {
    xaikit::order::argsort_desc_f32(&values)
}

/// Decode a color-coded mask PNG into part codes.
#[pyfunction]
#[pyo3(signature = (path, *, tolerance=MASK_TOLERANCE))]
fn decode_mask_png(
    py: Python<'_>,
    path: PathBuf,
    tolerance: u8,
) -> PyResult<Py<PyDict>> {
    let mask = SegMask::decode_file(&path, tolerance).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("width", mask.width)?;
    d.set_item("height", mask.height)?;
    d.set_item("codes", mask.codes().to_vec())?;
    Ok(d.into())
}

#[pymodule]
fn xaikit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PySaliency>()?;
    m.add_function(wrap_pyfunction!(shapes3, m)?)?;
    m.add_function(wrap_pyfunction!(patch_pair, m)?)?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(localisation_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(mcd_predict, m)?)?;
    m.add_function(wrap_pyfunction!(mcd_quantile_map, m)?)?;
    m.add_function(wrap_pyfunction!(pf_curve, m)?)?;
    m.add_function(wrap_pyfunction!(pf_random_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(argsort_desc, m)?)?;
    m.add_function(wrap_pyfunction!(decode_mask_png, m)?)?;
    m.add("MASK_TOLERANCE", MASK_TOLERANCE)?;
    m.add("METHODS", vec!["gradient", "gradient-x-input", "integrated-gradients"])?;
    m.add("AGGREGATIONS", vec!["raw-sum", "positive", "absolute"])?;
    Ok(())
}
