//! Python module `wcpvol_py`.
//!
//! Images and masks cross the boundary as flat lists in x-fastest order;
//! experiment outputs come back as plain dicts and lists.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use wcpvol::conformal::{self, NormalizedWeights, QuantileResult, ScoreSet};
use wcpvol::density_ratio::{cross_fit_probabilities, weights_from_probs, LogisticOptions};
use wcpvol::harness::{self, ExperimentConfig};
use wcpvol::latent::{self, ResponseMode};
use wcpvol::synth;
use wcpvol::trimask::{self, TriThresholds, VolumeTriple};
use wcpvol::volume::{self, Dims, Mask3D, OverlapParams};
use wcpvol::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::LengthMismatch { .. }
        | Error::NonFinite(_)
        | Error::Empty(_)
        | Error::SingleClass => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn mask(dims: (usize, usize, usize), data: Vec<u8>) -> PyResult<Mask3D> {
    let d = Dims::new(dims.0, dims.1, dims.2).map_err(to_py)?;
    Mask3D::new(d, data).map_err(to_py)
}

fn response_mode(mode: &str) -> PyResult<ResponseMode> {
    match mode {
        "raw" => Ok(ResponseMode::Raw),
        "abs" => Ok(ResponseMode::Abs),
        other => Err(PyValueError::new_err(format!(
            "mode must be 'raw' or 'abs', got {other:?}"
        ))),
    }
}

/// Experiment configuration. Construct from a JSON string; omitted fields
/// take their defaults.
#[pyclass(name = "ExperimentConfig", module = "wcpvol_py")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (json=None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(s) => ExperimentConfig::from_json_str(s).map_err(to_py)?,
            None => ExperimentConfig::default(),
        };
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn trials(&self) -> usize {
        self.inner.trials
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentConfig(seed={}, alpha={}, trials={})",
            self.inner.seed, self.inner.alpha, self.inner.trials
        )
    }
}

/// One synthetic phantom.
#[pyclass(name = "Sample", module = "wcpvol_py")]
struct PySample {
    inner: synth::Sample,
}

#[pymethods]
impl PySample {
    #[getter]
    fn id(&self) -> u64 {
        self.inner.id
    }

    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        self.inner.image.dims().as_tuple()
    }

    #[getter]
    fn snr(&self) -> f64 {
        self.inner.spec.snr
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.inner.spec.radius
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.inner.spec.center
    }

    fn image(&self) -> Vec<f32> {
        self.inner.image.data().to_vec()
    }

    fn mask(&self) -> Vec<u8> {
        self.inner.truth.data().to_vec()
    }

    fn truth_volume(&self) -> f64 {
        volume::volume(&self.inner.truth, self.inner.image.voxel_volume())
    }

    fn measured_snr(&self) -> PyResult<f64> {
        synth::snr_of(&self.inner.image, &self.inner.truth).map_err(to_py)
    }

    /// `(lo, mid, hi)` volumes under the given thresholds.
    fn predict_volumes(&self, thresholds: &PyThresholds) -> (f64, f64, f64) {
        let v = trimask::predict_volumes(&self.inner.image, &thresholds.inner);
        (v.lo, v.mid, v.hi)
    }
}

#[pyclass(name = "TriThresholds", module = "wcpvol_py")]
struct PyThresholds {
    inner: TriThresholds,
}

#[pymethods]
impl PyThresholds {
    #[new]
    fn new(t_lower: f64, t_mean: f64, t_upper: f64, gamma: f64) -> PyResult<Self> {
        Ok(Self {
            inner: TriThresholds::new(t_lower, t_mean, t_upper, gamma).map_err(to_py)?,
        })
    }

    #[getter]
    fn t_lower(&self) -> f64 {
        self.inner.t_lower
    }

    #[getter]
    fn t_mean(&self) -> f64 {
        self.inner.t_mean
    }

    #[getter]
    fn t_upper(&self) -> f64 {
        self.inner.t_upper
    }

    fn __repr__(&self) -> String {
        format!(
            "TriThresholds(t_lower={}, t_mean={}, t_upper={})",
            self.inner.t_lower, self.inner.t_mean, self.inner.t_upper
        )
    }
}

#[pyclass(name = "FilterBank", module = "wcpvol_py")]
struct PyFilterBank {
    inner: latent::FilterBank,
}

#[pymethods]
impl PyFilterBank {
    #[new]
    #[pyo3(signature = (seed, k=64, kernel_size=5))]
    fn new(seed: u64, k: usize, kernel_size: usize) -> PyResult<Self> {
        Ok(Self {
            inner: latent::FilterBank::random(seed, k, kernel_size).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[pyo3(signature = (sample, mode="abs"))]
    fn extract(&self, sample: &PySample, mode: &str) -> PyResult<Vec<f64>> {
        latent::extract(&sample.inner.image, &self.inner, response_mode(mode)?).map_err(to_py)
    }
}

#[pyfunction]
#[pyo3(signature = (seed, id, snr, grid_dim=32, radius_range=(4.0, 10.0)))]
fn generate_sample(
    seed: u64,
    id: u64,
    snr: f64,
    grid_dim: usize,
    radius_range: (f64, f64),
) -> PyResult<PySample> {
    let inner = synth::generate_sample(seed, id, grid_dim, snr, radius_range).map_err(to_py)?;
    Ok(PySample { inner })
}

/// Sample `id` of the dataset described by `config`.
#[pyfunction]
fn dataset_sample(config: &PyConfig, id: u64) -> PyResult<PySample> {
    let c = &config.inner;
    let inner = synth::generate_dataset_sample(c.seed, &c.generation, id).map_err(to_py)?;
    Ok(PySample { inner })
}

#[pyfunction]
fn dice(dims: (usize, usize, usize), a: Vec<u8>, b: Vec<u8>) -> PyResult<f64> {
    volume::dice(&mask(dims, a)?, &mask(dims, b)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (dims, pred, truth, alpha, beta, smooth=OverlapParams::DEFAULT_SMOOTH))]
fn tversky_index(
    dims: (usize, usize, usize),
    pred: Vec<u8>,
    truth: Vec<u8>,
    alpha: f64,
    beta: f64,
    smooth: f64,
) -> PyResult<f64> {
    let params = OverlapParams::new(alpha, beta).with_smooth(smooth);
    volume::tversky_index(&mask(dims, pred)?, &mask(dims, truth)?, &params).map_err(to_py)
}

#[pyfunction]
fn score(lo: f64, hi: f64, y: f64) -> PyResult<f64> {
    conformal::score(lo, hi, y).map_err(to_py)
}

#[pyfunction]
fn standard_quantile(scores: Vec<f64>, alpha: f64) -> PyResult<f64> {
    let s = ScoreSet::new(scores).map_err(to_py)?;
    Ok(conformal::standard_quantile(&s, alpha)
        .map_err(to_py)?
        .q_hat)
}

/// Weighted quantile from raw weights; normalization includes the test weight.
#[pyfunction]
fn weighted_quantile(
    scores: Vec<f64>,
    w_calib: Vec<f64>,
    w_test: f64,
    alpha: f64,
) -> PyResult<f64> {
    let s = ScoreSet::new(scores).map_err(to_py)?;
    let w: NormalizedWeights = conformal::normalized_weights(&w_calib, w_test).map_err(to_py)?;
    Ok(conformal::weighted_quantile(&s, &w, alpha)
        .map_err(to_py)?
        .q_hat)
}

/// `(lo, hi)` of the calibrated interval for a `(lo, mid, hi)` triple.
#[pyfunction]
fn calibrated_interval(triple: (f64, f64, f64), q_hat: f64, alpha: f64) -> (f64, f64) {
    let vt = VolumeTriple {
        lo: triple.0,
        mid: triple.1,
        hi: triple.2,
    };
    let q = QuantileResult {
        q_hat,
        alpha,
        weighted: false,
    };
    let pi = conformal::calibrated_interval(&vt, &q);
    (pi.lo, pi.hi)
}

/// Cross-fitted density-ratio weights. Returns `(calib_weights,
/// test_weights, accuracy)`.
#[pyfunction]
#[pyo3(signature = (calib, test, folds=20, seed=0))]
fn density_ratio_weights(
    calib: Vec<Vec<f64>>,
    test: Vec<Vec<f64>>,
    folds: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let out = cross_fit_probabilities(&calib, &test, folds, seed, &LogisticOptions::default())
        .map_err(to_py)?;
    let w = |p: &[f64]| -> PyResult<Vec<f64>> {
        Ok(weights_from_probs(p)
            .map_err(to_py)?
            .into_iter()
            .map(|e| e.weight)
            .collect())
    };
    Ok((w(&out.calib_probs)?, w(&out.test_probs)?, out.accuracy()))
}

/// Fits the thresholds on the training split of `config`.
#[pyfunction]
fn fit_thresholds(config: &PyConfig) -> PyResult<PyThresholds> {
    let c = &config.inner;
    c.validate().map_err(to_py)?;
    let mut fitter = trimask::ThresholdFitter::new(c.gamma).map_err(to_py)?;
    for id in c.generation.ids(synth::Split::Train) {
        let s = synth::generate_dataset_sample(c.seed, &c.generation, id).map_err(to_py)?;
        fitter.add(&s.image, &s.truth).map_err(to_py)?;
    }
    Ok(PyThresholds {
        inner: fitter.fit().map_err(to_py)?,
    })
}

/// Runs the full experiment and returns its output as a dict. Releases the
/// GIL while running.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let out = py
        .detach(move || harness::run_experiment(&cfg))
        .map_err(to_py)?;
    json_to_py(py, &out)
}

/// Runs the experiment and writes results.json, results.csv and weights.csv
/// into `out_dir`.
#[pyfunction]
fn run_and_export(py: Python<'_>, config: &PyConfig, out_dir: std::path::PathBuf) -> PyResult<()> {
    let cfg = config.inner.clone();
    py.detach(move || -> wcpvol::Result<()> {
        let out = harness::run_experiment(&cfg)?;
        harness::export::export_results(&out, &out_dir)?;
        if !out.weight_profile.is_empty() {
            harness::export::export_weight_profile(
                &out.weight_profile,
                &out_dir.join(harness::export::WEIGHTS_CSV),
            )?;
        }
        Ok(())
    })
    .map_err(to_py)
}

#[pymodule]
fn wcpvol_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PySample>()?;
    m.add_class::<PyThresholds>()?;
    m.add_class::<PyFilterBank>()?;
    m.add_function(wrap_pyfunction!(generate_sample, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_sample, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(tversky_index, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(standard_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(calibrated_interval, m)?)?;
    m.add_function(wrap_pyfunction!(density_ratio_weights, m)?)?;
    m.add_function(wrap_pyfunction!(fit_thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_and_export, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
