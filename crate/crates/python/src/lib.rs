//! Python bindings: IERFH reduction, the data generator, the pre-training
//! losses, pre-training / fine-tuning, metrics and the full pipeline.

use std::collections::HashMap;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use shmssl::datagen::{case_counts, gen_dataset_with, gen_segment as core_gen_segment, sample_spec, Case, GenOptions, LabeledSample, Pattern};
use shmssl::finetune::{finetune as core_finetune, predict, FinetuneConfig};
use shmssl::harness::{run_experiment as core_run, ExperimentConfig};
use shmssl::metrics::{confusion as core_confusion, default_class_names, overall, per_class_metrics, ConfusionMatrix};
use shmssl::models::{load_checkpoint as core_load, save_checkpoint, Encoder as CoreEncoder, Method, ModelBundle};
use shmssl::nn::{Module, Tensor};
use shmssl::reduction::{ierfh as core_ierfh, FeatureVector, TimeSeriesSegment};
use shmssl::ssl::{self, PretrainConfig};
use shmssl::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Divergence { .. } | Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        Error::Stage { ref source, .. } if matches!(**source, Error::Io(_)) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged rows"));
    }
    Tensor::new(vec![rows.len(), cols], data).map_err(py_err)
}

fn batch(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Tensor::batch_1d(&refs).map_err(py_err)
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.rows().map(<[f64]>::to_vec).collect()
}

fn labeled(x: Vec<Vec<f64>>, y: Vec<usize>) -> PyResult<Vec<LabeledSample>> {
    if x.len() != y.len() {
        return Err(PyValueError::new_err(format!("{} rows but {} labels", x.len(), y.len())));
    }
    x.into_iter()
        .zip(y)
        .map(|(v, label)| {
            Ok(LabeledSample {
                feature: FeatureVector::new(v, 0, 0).map_err(py_err)?,
                label,
            })
        })
        .collect()
}

fn parse_method(s: &str) -> PyResult<Method> {
    s.parse().map_err(py_err)
}

/// IERFH feature (512 values in [0, 1]) of one segment.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate_hz, range_min, range_max, duration_s = 3600.0))]
fn ierfh(samples: Vec<f64>, sample_rate_hz: f64, range_min: f64, range_max: f64, duration_s: f64) -> PyResult<Vec<f64>> {
    let seg = TimeSeriesSegment::with_duration(samples, sample_rate_hz, duration_s, range_min, range_max).map_err(py_err)?;
    Ok(core_ierfh(&seg).map_err(py_err)?.values)
}

/// One synthetic raw segment of `pattern` ("normal", "outlier", ...).
#[pyfunction]
#[pyo3(signature = (pattern, case = 1, seed = 0, index = 0, sample_rate_hz = 1.0, duration_s = 3600.0))]
fn gen_segment(pattern: &str, case: u32, seed: u64, index: u64, sample_rate_hz: f64, duration_s: f64) -> PyResult<Vec<f64>> {
    let pattern: Pattern = pattern.parse().map_err(py_err)?;
    let case = Case::from_number(case).map_err(py_err)?;
    let opts = GenOptions {
        sample_rate_hz,
        duration_s,
    };
    Ok(core_gen_segment(&sample_spec(case, pattern, seed, index, &opts)).map_err(py_err)?.samples)
}

/// `(features, labels)` of the synthetic dataset at `scale` of full size.
#[pyfunction]
#[pyo3(signature = (case = 1, scale = 0.1, seed = 0))]
fn gen_dataset(py: Python<'_>, case: u32, scale: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let case = Case::from_number(case).map_err(py_err)?;
    let counts = case_counts(case, &case.scaled_counts(scale)).map_err(py_err)?;
    let samples = py
        .detach(|| gen_dataset_with(case, &counts, seed, &GenOptions::default()))
        .map_err(py_err)?;
    Ok(samples.into_iter().map(|s| (s.feature.values, s.label)).unzip())
}

#[pyfunction]
fn class_names(case: u32) -> PyResult<Vec<String>> {
    Ok(Case::from_number(case).map_err(py_err)?.class_names())
}

#[pyfunction]
fn cosine_sim(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    ssl::cosine_sim(&u, &v).map_err(py_err)
}

#[pyfunction]
fn simclr_loss(z1: Vec<Vec<f64>>, z2: Vec<Vec<f64>>, tau: f64) -> PyResult<f64> {
    Ok(ssl::simclr_loss(&matrix(&z1)?, &matrix(&z2)?, tau).map_err(py_err)?.loss)
}

#[pyfunction]
fn mixup_loss(z1: Vec<Vec<f64>>, mixed: Vec<Vec<f64>>, z2: Vec<Vec<f64>>, lambdas: Vec<f64>, tau: f64) -> PyResult<f64> {
    Ok(ssl::mixup_loss(&matrix(&z1)?, &matrix(&mixed)?, &matrix(&z2)?, &lambdas, tau)
        .map_err(py_err)?
        .loss)
}

/// `(discriminator loss, generator loss)` from probabilities in (0, 1).
#[pyfunction]
fn gan_loss(d_real: Vec<f64>, d_fake: Vec<f64>) -> PyResult<(f64, f64)> {
    ssl::gan_loss(&d_real, &d_fake).map_err(py_err)
}

/// Confusion counts `[true][predicted]`.
#[pyfunction]
fn confusion(predictions: Vec<usize>, labels: Vec<usize>, k: usize) -> PyResult<Vec<Vec<u64>>> {
    Ok(core_confusion(&predictions, &labels, default_class_names(k)).map_err(py_err)?.counts)
}

/// `{"accuracy", "macro_f1", "precision": [...], "recall": [...], "f1": [...]}`.
#[pyfunction]
fn metrics(counts: Vec<Vec<u64>>) -> PyResult<HashMap<String, Py<PyAny>>> {
    let k = counts.len();
    let cm = ConfusionMatrix::from_counts(counts, default_class_names(k)).map_err(py_err)?;
    let per = per_class_metrics(&cm);
    let o = overall(&cm);
    Python::attach(|py| {
        let mut out = HashMap::new();
        out.insert("accuracy".into(), o.accuracy.into_pyobject(py)?.into_any().unbind());
        out.insert("macro_f1".into(), o.macro_f1.into_pyobject(py)?.into_any().unbind());
        let col = |f: fn(&shmssl::metrics::ClassMetrics) -> f64| per.iter().map(f).collect::<Vec<f64>>();
        out.insert("precision".into(), col(|m| m.precision).into_pyobject(py)?.into_any().unbind());
        out.insert("recall".into(), col(|m| m.recall).into_pyobject(py)?.into_any().unbind());
        out.insert("f1".into(), col(|m| m.f1).into_pyobject(py)?.into_any().unbind());
        Ok(out)
    })
}

/// Freshly initialized encoder (B x 512 -> B x 256).
#[pyclass]
struct Encoder {
    inner: CoreEncoder,
}

#[pymethods]
impl Encoder {
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> Self {
        Encoder {
            inner: CoreEncoder::new(seed),
        }
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Evaluation-mode forward pass.
    fn forward(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.infer(&batch(&x)?).map_err(py_err)?))
    }
}

/// A trained model bundle (pre-trained networks or a classifier).
#[pyclass]
struct Model {
    inner: ModelBundle,
    #[pyo3(get)]
    losses: Vec<f64>,
    #[pyo3(get)]
    best_epoch: Option<usize>,
}

#[pymethods]
impl Model {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.inner, path).map_err(py_err)
    }

    /// Latent codes of the pre-trained (or fine-tuned) encoder.
    fn encode(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let enc = self
            .inner
            .pretrained_encoder()
            .ok_or_else(|| PyValueError::new_err("model has no encoder"))?;
        Ok(to_rows(&enc.infer(&batch(&x)?).map_err(py_err)?))
    }

    fn predict(&self, py: Python<'_>, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let c = self
            .inner
            .classifier
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("model has no classifier"))?;
        let samples = labeled(x.clone(), vec![0; x.len()])?;
        py.detach(|| predict(c, &samples)).map_err(py_err)
    }
}

#[pyfunction]
fn load_checkpoint(path: &str) -> PyResult<Model> {
    Ok(Model {
        inner: core_load(path).map_err(py_err)?,
        losses: Vec::new(),
        best_epoch: None,
    })
}

/// Pre-trains `method` ("ae", "simclr", "mixup", "gan") on feature rows.
#[pyfunction]
#[pyo3(signature = (features, method, epochs = 200, batch_size = 64, lr = 1e-3, seed = 0, temperature = None))]
fn pretrain(
    py: Python<'_>,
    features: Vec<Vec<f64>>,
    method: &str,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
    temperature: Option<f64>,
) -> PyResult<Model> {
    let mut cfg = PretrainConfig::new(parse_method(method)?, seed);
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.lr = lr;
    if let Some(t) = temperature {
        cfg.temperature = t;
    }
    let data: Vec<FeatureVector> = features
        .into_iter()
        .map(|v| FeatureVector::new(v, 0, 0))
        .collect::<shmssl::Result<_>>()
        .map_err(py_err)?;
    let (bundle, trace) = py.detach(|| ssl::pretrain(&data, &cfg)).map_err(py_err)?;
    Ok(Model {
        inner: bundle,
        losses: trace.losses,
        best_epoch: None,
    })
}

/// Fine-tunes `pretrained` (or trains from scratch when `None`) and returns
/// the best-validation classifier.
#[pyfunction]
#[pyo3(signature = (pretrained, train_x, train_y, val_x, val_y, k, epochs = 50, batch_size = 64, lr = 1e-3, seed = 0))]
fn finetune(
    py: Python<'_>,
    pretrained: Option<PyRef<'_, Model>>,
    train_x: Vec<Vec<f64>>,
    train_y: Vec<usize>,
    val_x: Vec<Vec<f64>>,
    val_y: Vec<usize>,
    k: usize,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> PyResult<Model> {
    let train = labeled(train_x, train_y)?;
    let val = labeled(val_x, val_y)?;
    let cfg = FinetuneConfig {
        epochs,
        batch_size,
        lr,
        seed,
    };
    let base = pretrained.as_ref().map(|m| m.inner.clone());
    let method = base.as_ref().map_or(Method::Sup, |b| b.method);
    let res = py
        .detach(|| core_finetune(base.as_ref(), &train, &val, k, &cfg))
        .map_err(py_err)?;
    let mut bundle = ModelBundle::empty(method, seed);
    bundle.classifier = Some(res.classifier);
    Ok(Model {
        inner: bundle,
        losses: res.trace.iter().map(|s| s.val_macro_f1).collect(),
        best_epoch: Some(res.best_epoch),
    })
}

/// Runs the full pipeline with `key=value` settings (the config-file keys)
/// and returns `(method, low_shot, mean_f1, std_f1, repeats)` rows.
#[pyfunction]
#[pyo3(signature = (settings = None))]
fn run_experiment(py: Python<'_>, settings: Option<HashMap<String, String>>) -> PyResult<Vec<(String, String, f64, f64, usize)>> {
    let mut pairs: Vec<(String, String)> = settings.unwrap_or_default().into_iter().collect();
    pairs.sort();
    let cfg = ExperimentConfig::from_pairs(&pairs).map_err(py_err)?;
    let out = py.detach(|| core_run(&cfg)).map_err(py_err)?;
    Ok(out
        .table
        .summaries()
        .into_iter()
        .map(|c| (c.method.to_string(), c.low_shot, c.mean_f1, c.std_f1, c.repeats))
        .collect())
}

#[pymodule]
#[pyo3(name = "shmssl")]
fn shmssl_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(ierfh, m)?)?;
    m.add_function(wrap_pyfunction!(gen_segment, m)?)?;
    m.add_function(wrap_pyfunction!(gen_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(class_names, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_sim, m)?)?;
    m.add_function(wrap_pyfunction!(simclr_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mixup_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gan_loss, m)?)?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(load_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(finetune, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<Encoder>()?;
    m.add_class::<Model>()?;
    Ok(())
}
