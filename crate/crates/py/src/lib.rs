//! Python bindings. Matrices cross the boundary as lists of rows and
//! reports as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use slogan_core::datasets::{self, LabeledDataset, ScaleMode};
use slogan_core::metrics::{self, EvalOptions, Matching, NmiNorm, Partition};
use slogan_core::mixture::MixturePrior;
use slogan_core::numerics::{cholesky, Mat, Rng};
use slogan_core::stein::verify::{self, Fault, VerifyConfig};
use slogan_core::trainer::{self, ManipulationConfig, Quiet, TrainConfig, TrainState};

fn err(e: slogan_core::Error) -> PyErr {
    if e.is_numeric() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn mat(rows: &[Vec<f64>]) -> PyResult<Mat> {
    Mat::from_rows(rows).map_err(err)
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any().unbind(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any().unbind(),
            (_, Some(u)) => u.into_pyobject(py)?.into_any().unbind(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for item in a {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any().unbind()
        }
        Value::Object(o) => {
            let dict = PyDict::new(py);
            for (k, item) in o {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any().unbind()
        }
    })
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn parse_scale(s: &str) -> PyResult<ScaleMode> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown scale mode {s:?}")))
}

/// A data matrix with optional integer class labels.
#[pyclass(name = "Dataset", module = "slogan", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: LabeledDataset,
}

#[pymethods]
impl PyDataset {
    /// The eight-Gaussian ring, scaled to [-1, 1]. `counts` defaults to the
    /// 1:3 imbalanced split.
    #[staticmethod]
    #[pyo3(signature = (seed=0, counts=None))]
    fn synthetic_8gauss(seed: u64, counts: Option<[usize; 8]>) -> PyResult<Self> {
        let counts = counts.unwrap_or(datasets::IMBALANCED_COUNTS);
        Ok(PyDataset { inner: datasets::make_synthetic_8gauss(seed, &counts).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (path, has_labels=true, scale="minmax_pm1"))]
    fn from_csv(path: PathBuf, has_labels: bool, scale: &str) -> PyResult<Self> {
        Ok(PyDataset { inner: datasets::load_csv(&path, has_labels, parse_scale(scale)?).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (x, labels=None))]
    fn from_rows(x: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> PyResult<Self> {
        let x = mat(&x)?;
        let scaling = datasets::Scaling::fit(ScaleMode::None, &x).map_err(err)?;
        Ok(PyDataset { inner: LabeledDataset::new(x, labels, scaling).map_err(err)? })
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.inner.x.row_vecs()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<usize>> {
        self.inner.labels.clone()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Class means in the scaled space, one per class, for the synthetic ring.
    fn mode_centers(&self) -> Vec<Vec<f64>> {
        datasets::scaled_mode_centers(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, dim={}, classes={})", self.inner.len(), self.inner.dim(), self.inner.n_classes())
    }
}

/// Gaussian mixture over the latent space.
#[pyclass(name = "MixturePrior", module = "slogan", skip_from_py_object)]
#[derive(Clone)]
struct PyPrior {
    inner: MixturePrior,
}

#[pymethods]
impl PyPrior {
    #[new]
    #[pyo3(signature = (k, dim, mu_init_var=0.1, seed=0))]
    fn new(k: usize, dim: usize, mu_init_var: f64, seed: u64) -> PyResult<Self> {
        let mut rng = Rng::new(seed);
        Ok(PyPrior { inner: MixturePrior::init(k, dim, mu_init_var, &mut rng).map_err(err)? })
    }

    /// Builds a prior from explicit means, covariances and logits.
    #[staticmethod]
    fn from_parts(mu: Vec<Vec<f64>>, sigma: Vec<Vec<Vec<f64>>>, rho: Vec<f64>) -> PyResult<Self> {
        let sigma = sigma.iter().map(|s| cholesky(&mat(s)?).map_err(err)).collect::<PyResult<Vec<_>>>()?;
        Ok(PyPrior { inner: MixturePrior::from_parts(mu, sigma, rho).map_err(err)? })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn pi(&self) -> Vec<f64> {
        self.inner.pi()
    }

    #[getter]
    fn rho(&self) -> Vec<f64> {
        self.inner.rho().to_vec()
    }

    #[getter]
    fn mu(&self) -> Vec<Vec<f64>> {
        self.inner.mu().to_vec()
    }

    #[getter]
    fn sigma(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.sigma().iter().map(|s| s.full().row_vecs()).collect()
    }

    fn log_density(&self, z: Vec<f64>) -> PyResult<f64> {
        self.inner.log_density(&z).map_err(err)
    }

    /// Returns `(delta, posterior)` where `posterior[c] = delta[c] * pi[c]`.
    fn responsibilities(&self, z: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        self.inner.responsibilities(&z).map_err(err)
    }

    /// Ancestral samples as `(z, component)` pairs.
    #[pyo3(signature = (n, seed=0))]
    fn sample(&self, n: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
        let mut rng = Rng::new(seed);
        let batch = self.inner.sample(n, 1.0, &mut rng).map_err(err)?;
        Ok((batch.z.clone(), batch.ancestors.clone()))
    }

    fn __repr__(&self) -> String {
        format!("MixturePrior(k={}, dim={})", self.inner.k(), self.inner.dim())
    }
}

/// Generator, discriminator, encoder and prior, trained jointly.
#[pyclass(name = "Model", module = "slogan")]
struct PyModel {
    inner: TrainState,
}

#[pymethods]
impl PyModel {
    /// `config` is a JSON object in the shape of the `train` section of a
    /// run config; omitted fields take their defaults.
    #[new]
    #[pyo3(signature = (data_dim, config=None, seed=None))]
    fn new(data_dim: usize, config: Option<&str>, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg: TrainConfig = match config {
            Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("config: {e}")))?,
            None => TrainConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate(data_dim).map_err(err)?;
        Ok(PyModel { inner: TrainState::new(cfg, data_dim).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel { inner: TrainState::load_json(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_json(&path).map_err(err)
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step
    }

    #[getter]
    fn total_steps(&self) -> u64 {
        self.inner.config.steps
    }

    #[getter]
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.config)
    }

    #[getter]
    fn prior(&self) -> PyPrior {
        PyPrior { inner: self.inner.prior.clone() }
    }

    #[getter]
    fn pi(&self) -> Vec<f64> {
        self.inner.prior.pi()
    }

    /// One update of every parameter group on a batch of real rows.
    fn train_step(&mut self, py: Python<'_>, real: Vec<Vec<f64>>) -> PyResult<Py<PyAny>> {
        let real = mat(&real)?;
        let report = self.inner.train_step(&real).map_err(err)?;
        to_py(py, &report)
    }

    /// Trains until `total_steps`; returns the history records.
    fn fit(&mut self, py: Python<'_>, data: &PyDataset) -> PyResult<Py<PyAny>> {
        let state = &mut self.inner;
        let ds = &data.inner;
        let history = py.detach(|| trainer::continue_training(state, ds, &mut Quiet)).map_err(err)?;
        to_py(py, &history)
    }

    fn generate(&self, z: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.generate(&mat(&z)?).map_err(err)?.row_vecs())
    }

    fn generate_component(&mut self, c: usize, n: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.generate_component(c, n).map_err(err)?.row_vecs())
    }

    /// `G(μ_c)` for every component.
    fn generate_means(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.generate_means().map_err(err)?.row_vecs())
    }

    fn encode(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.encode(&mat(&x)?).map_err(err)?.row_vecs())
    }

    /// Hard cluster index per row.
    fn assign(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        metrics::assign_rows(&self.inner, &mat(&x)?).map_err(err)
    }

    #[pyo3(signature = (data, n_gen_per_cluster=1000, seed=0, matching="greedy"))]
    fn evaluate(
        &self,
        py: Python<'_>,
        data: &PyDataset,
        n_gen_per_cluster: usize,
        seed: u64,
        matching: &str,
    ) -> PyResult<Py<PyAny>> {
        let matching = match matching {
            "greedy" => Matching::Greedy,
            "optimal" => Matching::Optimal,
            other => return Err(PyValueError::new_err(format!("matching must be greedy or optimal, got {other:?}"))),
        };
        let opts = EvalOptions { n_gen_per_cluster, seed, matching, ..EvalOptions::default() };
        let state = &self.inner;
        let ds = &data.inner;
        let report = py.detach(|| metrics::evaluate(state, ds, &opts)).map_err(err)?;
        to_py(py, &report)
    }

    /// Steers components toward probe points. `probes` maps a component
    /// index to rows in the model's (scaled) data space.
    #[pyo3(signature = (data, probes, steps=2000, mixup_rounds=5))]
    fn manipulate(
        &mut self,
        py: Python<'_>,
        data: &PyDataset,
        probes: std::collections::BTreeMap<usize, Vec<Vec<f64>>>,
        steps: u64,
        mixup_rounds: usize,
    ) -> PyResult<Py<PyAny>> {
        let k = self.inner.prior.k();
        let mut sets = vec![Vec::new(); k];
        for (c, rows) in probes {
            if c >= k {
                return Err(err(slogan_core::Error::BadComponent { component: c, k }));
            }
            sets[c] = rows;
        }
        let cfg = ManipulationConfig { steps, mixup_rounds, ..ManipulationConfig::default() };
        let state = &mut self.inner;
        let ds = &data.inner;
        let reports = py.detach(|| trainer::manipulate_attributes(state, &sets, ds, &cfg, &mut Quiet)).map_err(err)?;
        to_py(py, &reports)
    }

    fn __repr__(&self) -> String {
        format!("Model(step={}/{}, k={})", self.inner.step, self.inner.config.steps, self.inner.prior.k())
    }
}

#[pyfunction]
fn ari(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    metrics::ari(&Partition::from_labels(a), &Partition::from_labels(b)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, b, norm="geometric"))]
fn nmi(a: Vec<usize>, b: Vec<usize>, norm: &str) -> PyResult<f64> {
    let norm = match norm {
        "geometric" => NmiNorm::Geometric,
        "arithmetic" => NmiNorm::Arithmetic,
        other => return Err(PyValueError::new_err(format!("norm must be geometric or arithmetic, got {other:?}"))),
    };
    metrics::nmi_with(&Partition::from_labels(a), &Partition::from_labels(b), norm).map_err(err)
}

/// Fréchet distance between two Gaussians given by mean and covariance.
#[pyfunction]
fn frechet_distance(m1: Vec<f64>, c1: Vec<Vec<f64>>, m2: Vec<f64>, c2: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::frechet_distance(&m1, &mat(&c1)?, &m2, &mat(&c2)?).map_err(err)
}

/// Fréchet distance between the Gaussian moments of two sample sets.
#[pyfunction]
fn sample_frechet_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    let (m1, c1) = metrics::mean_cov(&a, 0).map_err(err)?;
    let (m2, c2) = metrics::mean_cov(&b, 1).map_err(err)?;
    metrics::frechet_distance(&m1, &c1, &m2, &c2).map_err(err)
}

/// Runs the gradient-identity checks; `quick` uses reduced sample sizes.
#[pyfunction]
#[pyo3(signature = (quick=true))]
fn verify_gradients(py: Python<'_>, quick: bool) -> PyResult<Py<PyAny>> {
    let cfg = if quick { VerifyConfig::quick() } else { VerifyConfig::default() };
    let report = py.detach(|| verify::run(&cfg, Fault::None)).map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
fn slogan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPrior>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(ari, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(sample_frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(verify_gradients, m)?)?;
    Ok(())
}
