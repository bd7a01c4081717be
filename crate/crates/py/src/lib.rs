//! Python bindings: images, the degradation space, QC-Loss, the encoder,
//! pretraining and the linear probe.

use std::path::Path;

use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use qaware::degradation::{self, DegradationPlan};
use qaware::eval::{self, SyntheticBenchSpec};
use qaware::imgproc;
use qaware::loss::{self as qloss, LossConfig, MomentumQueue};
use qaware::model::{Encoder as _, EncoderConfig, EncoderParams};
use qaware::train::{self, ProbeConfig, TrainConfig};
use qaware::{Error, ImageBuffer, RngStream};

pub fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        return PyArithmeticError::new_err(e.to_string());
    }
    match e {
        Error::InvalidArgument(_) | Error::Format(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// RGB image with channel values in `[0, 1]`, stored row-major, interleaved.
#[pyclass(name = "Image", module = "qaware", from_py_object)]
#[derive(Clone)]
pub struct PyImage {
    pub inner: ImageBuffer,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, data: Vec<f64>) -> PyResult<Self> {
        ImageBuffer::new(height, width, data).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        imgproc::load_image(Path::new(path)).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        imgproc::save_image(&self.inner, Path::new(path)).map_err(to_py)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn mse(&self, other: &PyImage) -> PyResult<f64> {
        self.inner.mse(&other.inner).map_err(to_py)
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.height(), self.inner.width())
    }
}

/// Seeded synthetic texture.
#[pyfunction]
#[pyo3(signature = (seed, height=64, width=64))]
fn texture(seed: u64, height: usize, width: usize) -> PyImage {
    PyImage {
        inner: eval::base_texture(&RngStream::new(seed), height, width),
    }
}

/// Samples a composition with the default space and applies it. Returns the
/// degraded image and the plan as JSON.
#[pyfunction]
#[pyo3(signature = (image, seed, index=0))]
fn degrade(image: &PyImage, seed: u64, index: u64) -> PyResult<(PyImage, String)> {
    let space = TrainConfig::default().effective_space();
    let plan = degradation::sample_plan(&RngStream::new(seed).derive_index(index), &space).map_err(to_py)?;
    let out = degradation::apply_plan(&plan, &image.inner).map_err(to_py)?;
    let json = serde_json::to_string(&plan).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((PyImage { inner: out }, json))
}

#[pyfunction]
fn apply_plan(image: &PyImage, plan_json: &str) -> PyResult<PyImage> {
    let plan: DegradationPlan = serde_json::from_str(plan_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    degradation::apply_plan(&plan, &image.inner).map(|inner| PyImage { inner }).map_err(to_py)
}

#[pyfunction]
fn count_space(num_ops: u32, max_order: u32) -> PyResult<u64> {
    degradation::count_space(num_ops, max_order).map_err(to_py)
}

#[pyfunction]
fn srcc(pred: Vec<f64>, gt: Vec<f64>) -> PyResult<f64> {
    eval::srcc(&pred, &gt).map_err(to_py)
}

#[pyfunction]
fn plcc(pred: Vec<f64>, gt: Vec<f64>) -> PyResult<f64> {
    eval::plcc(&pred, &gt).map_err(to_py)
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("ragged feature rows"));
    }
    Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// QC-Loss of unit-norm features. Rows `n * views + k` hold view `k` of
/// image `n`. Returns `(loss, term1, term2)`.
#[allow(clippy::too_many_arguments)]
#[pyfunction]
#[pyo3(signature = (queries, keys, image_ids, views, queue_keys, queue_ids, beta=0.4, temperature=0.2))]
pub fn qc_loss(
    queries: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    image_ids: Vec<u64>,
    views: usize,
    queue_keys: Vec<Vec<f64>>,
    queue_ids: Vec<u64>,
    beta: f64,
    temperature: f64,
) -> PyResult<(f64, f64, f64)> {
    if queue_keys.len() != queue_ids.len() {
        return Err(PyValueError::new_err("queue_keys and queue_ids differ in length"));
    }
    let q = matrix(&queries)?;
    let k = matrix(&keys)?;
    let mut queue = MomentumQueue::new(queue_keys.len().max(1), q.ncols()).map_err(to_py)?;
    let entries: Vec<(&[f64], u64)> = queue_keys.iter().map(Vec::as_slice).zip(queue_ids.iter().copied()).collect();
    queue.push(&entries).map_err(to_py)?;
    let cfg = LossConfig {
        beta,
        temperature,
        ..LossConfig::default()
    };
    let out = qloss::qc_loss(q.view(), k.view(), &image_ids, views, &queue, &cfg).map_err(to_py)?;
    Ok((out.loss, out.term1, out.term2))
}

/// Patch encoder parameters.
#[pyclass(name = "Encoder", module = "qaware")]
pub struct PyEncoder {
    pub params: EncoderParams,
}

#[pymethods]
impl PyEncoder {
    /// Randomly initialized encoder with the default architecture.
    #[new]
    #[pyo3(signature = (seed=0))]
    fn new(seed: u64) -> PyResult<Self> {
        EncoderParams::init(EncoderConfig::default(), &RngStream::new(seed))
            .map(|params| Self { params })
            .map_err(to_py)
    }

    /// Query encoder of a pretraining checkpoint.
    #[staticmethod]
    fn from_checkpoint(path: &str) -> PyResult<Self> {
        let state = train::load_checkpoint(Path::new(path)).map_err(to_py)?;
        Ok(Self {
            params: state.encoder.query,
        })
    }

    #[getter]
    fn input_size(&self) -> usize {
        self.params.config().input_size
    }

    fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Projection-head output for one patch.
    fn forward(&self, patch: &PyImage) -> PyResult<Vec<f64>> {
        self.params.forward(&patch.inner).map_err(to_py)
    }

    /// Pooled backbone features for one patch.
    fn embed(&self, patch: &PyImage) -> PyResult<Vec<f64>> {
        self.params.embed(&patch.inner).map_err(to_py)
    }

    /// Median SRCC and PLCC of a ridge probe on the synthetic benchmark.
    #[pyo3(signature = (n_base=13, levels=5, seeds=20))]
    fn linear_probe(&self, py: Python<'_>, n_base: usize, levels: usize, seeds: usize) -> PyResult<(f64, f64)> {
        let params = &self.params;
        py.detach(|| {
            let set = eval::gen_synthetic_bench(&SyntheticBenchSpec::default(), n_base, levels)?;
            let cfg = ProbeConfig {
                seeds,
                ..ProbeConfig::default()
            };
            train::linear_probe(params, &set, &cfg)
        })
        .map(|r| (r.median_srcc, r.median_plcc))
        .map_err(to_py)
    }
}

/// Runs pretraining from a TOML config (defaults when omitted) and returns
/// the per-step losses together with the trained encoder.
#[pyfunction]
#[pyo3(signature = (config_toml=None, out=None))]
fn pretrain(py: Python<'_>, config_toml: Option<&str>, out: Option<&str>) -> PyResult<(Vec<f64>, PyEncoder)> {
    let cfg = match config_toml {
        Some(text) => TrainConfig::from_toml(text).map_err(to_py)?,
        None => TrainConfig::default(),
    };
    let (state, trace) = py.detach(|| train::pretrain(&cfg, out.map(Path::new))).map_err(to_py)?;
    Ok((
        trace.iter().map(|r| r.loss).collect(),
        PyEncoder {
            params: state.encoder.query,
        },
    ))
}

#[pymodule(name = "qaware")]
pub fn qaware_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyEncoder>()?;
    m.add_function(wrap_pyfunction!(texture, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(apply_plan, m)?)?;
    m.add_function(wrap_pyfunction!(count_space, m)?)?;
    m.add_function(wrap_pyfunction!(srcc, m)?)?;
    m.add_function(wrap_pyfunction!(plcc, m)?)?;
    m.add_function(wrap_pyfunction!(qc_loss, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    Ok(())
}
