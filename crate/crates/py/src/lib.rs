//! Python bindings: in-memory fitting, saved-model scoring and the CLI
//! commands.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use amlsvm::cli::commands::{build_report, cmd_predict, cmd_train, fit_multilevel, DumpOptions};
use amlsvm::cli::config::RunConfig;
use amlsvm::cli::persist::{sha256_hex, Evaluation, ModelFile, Provenance, FORMAT_VERSION};
use amlsvm::data_io::{infer_label_map, NormalizationStats};
use amlsvm::model_eval::{evaluate, QualityMetrics};
use amlsvm::{Error, LabeledDataset, Points};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Training(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_config(config: Option<&str>) -> PyResult<RunConfig> {
    let cfg = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("config: {e}")))?,
        None => RunConfig::default(),
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn points_from_rows(rows: Vec<Vec<f64>>) -> PyResult<Points> {
    Points::from_rows(&rows).map_err(to_py)
}

/// A trained model with its normalization and label mapping.
#[pyclass(name = "Model", frozen, module = "amlsvm")]
pub struct PyModel {
    inner: ModelFile,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ModelFile::load(&path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ModelFile::from_json(text, std::path::Path::new("<string>")).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    /// Decision values for raw (unnormalized) feature rows.
    fn decision_function(&self, py: Python<'_>, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let pts = self.inner.normalization.apply(&points_from_rows(rows)?).map_err(to_py)?;
        let model = &self.inner.model;
        py.detach(|| model.predict(&pts)).map(|(_, v)| v).map_err(to_py)
    }

    /// Original class labels for raw feature rows.
    fn predict(&self, py: Python<'_>, rows: Vec<Vec<f64>>) -> PyResult<Vec<String>> {
        let pts = self.inner.normalization.apply(&points_from_rows(rows)?).map_err(to_py)?;
        let model = &self.inner.model;
        let (labels, _) = py.detach(|| model.predict(&pts)).map_err(to_py)?;
        Ok(labels.iter().map(|&l| self.inner.labels.original(l).to_string()).collect())
    }

    #[getter]
    fn n_sv(&self) -> usize {
        self.inner.model.n_sv()
    }

    #[getter]
    fn c(&self) -> f64 {
        self.inner.model.params.c
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.model.params.gamma
    }

    #[getter]
    fn level(&self) -> usize {
        self.inner.model.level
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.model.dim()
    }

    #[getter]
    fn positive_label(&self) -> String {
        self.inner.labels.positive.clone()
    }

    #[getter]
    fn negative_label(&self) -> String {
        self.inner.labels.negative.clone()
    }

    /// Validation metrics of the selected model and its evaluations.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(
            py,
            &serde_json::json!({
                "validation": self.inner.model.quality,
                "test": self.inner.evaluation.test,
                "dataset": self.inner.evaluation.dataset,
            }),
        )
    }

    fn __repr__(&self) -> String {
        let m = &self.inner.model;
        format!(
            "Model(level={}, n_sv={}, C={}, gamma={})",
            m.level,
            m.n_sv(),
            m.params.c,
            m.params.gamma
        )
    }
}

/// Fit on every row: z-score the features, hold out the validation sample and
/// run the multilevel pipeline.
#[pyfunction]
#[pyo3(signature = (rows, labels, config=None))]
fn fit(py: Python<'_>, rows: Vec<Vec<f64>>, labels: Vec<Bound<'_, PyAny>>, config: Option<&str>) -> PyResult<PyModel> {
    let cfg = parse_config(config)?;
    if rows.len() != labels.len() {
        return Err(PyValueError::new_err(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    let raw: Vec<String> = labels.iter().map(|l| l.str().map(|s| s.to_string())).collect::<PyResult<_>>()?;
    let hash = sha256_hex(serde_json::to_string(&(&rows, &raw)).expect("serializable").as_bytes());
    let points = points_from_rows(rows)?;
    let file = py
        .detach(move || -> amlsvm::Result<ModelFile> {
            let map = infer_label_map(&raw)?;
            let y = raw.iter().map(|l| map.map(l).expect("label in map")).collect();
            let ds = LabeledDataset::from_finest(points, y)?;
            let stats = NormalizationStats::fit(ds.points())?;
            let normalized = ds.with_points(stats.apply(ds.points())?)?;
            let fitted = fit_multilevel(&normalized, &cfg, cfg.seed, DumpOptions::default())?;
            let model = fitted.outcome.model;
            let dataset = evaluate(&model, &normalized)?;
            Ok(ModelFile {
                format_version: FORMAT_VERSION,
                config: cfg,
                normalization: stats,
                labels: map,
                provenance: Provenance {
                    level: model.level,
                    fold: None,
                    dataset_sha256: hash,
                },
                evaluation: Evaluation { test: None, dataset },
                model,
            })
        })
        .map_err(to_py)?;
    Ok(PyModel { inner: file })
}

/// k-fold training on a dataset file; returns the run summary.
#[pyfunction]
#[pyo3(signature = (dataset, out_dir, config=None))]
fn train<'py>(py: Python<'py>, dataset: PathBuf, out_dir: PathBuf, config: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse_config(config)?;
    let out = py
        .detach(|| cmd_train(&dataset, &cfg, &out_dir, DumpOptions::default()))
        .map_err(to_py)?;
    json_to_py(py, &out.summary)
}

/// Score a dataset file with a saved model; returns predictions and, when the
/// file is labeled, metrics.
#[pyfunction]
#[pyo3(signature = (model, dataset, out=None))]
fn predict_file<'py>(py: Python<'py>, model: PathBuf, dataset: PathBuf, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let res = py
        .detach(|| cmd_predict(&model, &dataset, None, None, out.as_deref()))
        .map_err(to_py)?;
    json_to_py(
        py,
        &serde_json::json!({ "predictions": res.predictions, "metrics": res.metrics }),
    )
}

/// Per-level rows and per-level aggregates from trace files.
#[pyfunction]
fn report<'py>(py: Python<'py>, traces: Vec<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let res = build_report(&traces).map_err(to_py)?;
    json_to_py(py, &serde_json::json!({ "rows": res.rows, "levels": res.aggregate }))
}

/// Default configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&RunConfig::default()).expect("serializable")
}

/// G-mean and friends from ±1 label vectors.
#[pyfunction]
fn quality<'py>(py: Python<'py>, truth: Vec<i8>, predicted: Vec<i8>) -> PyResult<Bound<'py, PyAny>> {
    if truth.len() != predicted.len() {
        return Err(PyValueError::new_err("label vectors differ in length"));
    }
    json_to_py(py, &QualityMetrics::from_predictions(&truth, &predicted))
}

#[pymodule]
#[pyo3(name = "amlsvm")]
fn amlsvm_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(predict_file, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(quality, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
