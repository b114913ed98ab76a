use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use damcmc_core::harness::{self, RunConfig};
use damcmc_core::kdtree::{self, KeepExisting, PseudoMarginalMerge, TreeEntry, ValueRecord};
use damcmc_core::models;
use damcmc_core::surrogate;
use damcmc_core::Error;

fn to_py(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e {
        Error::Io(_) => PyOSError::new_err(msg),
        Error::Integration(_) | Error::InvalidState(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

/// KD-tree of surrogate values keyed by whitened position.
#[pyclass(name = "KdTree", module = "damcmc")]
struct PyKdTree {
    inner: kdtree::KdTree,
}

#[pymethods]
impl PyKdTree {
    #[new]
    #[pyo3(signature = (dim, half_bucket = 10, seed = 0))]
    fn new(dim: usize, half_bucket: usize, seed: u64) -> PyResult<Self> {
        let inner = kdtree::KdTree::new(dim, half_bucket, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Builds a balanced tree from `(position, log_value)` pairs.
    #[staticmethod]
    #[pyo3(signature = (points, half_bucket = 10, seed = 0))]
    fn balanced(points: Vec<(Vec<f64>, f64)>, half_bucket: usize, seed: u64) -> PyResult<Self> {
        let dim = points
            .first()
            .map(|p| p.0.len())
            .ok_or_else(|| PyValueError::new_err("invalid_parameter: no points given"))?;
        let entries = points.into_iter().map(|(p, v)| TreeEntry::new(p, v)).collect();
        let inner = kdtree::KdTree::build_balanced(entries, dim, half_bucket, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn insert(&mut self, position: Vec<f64>, log_value: f64) -> PyResult<()> {
        self.inner.insert(TreeEntry::new(position, log_value)).map_err(to_py)
    }

    /// Merges into the nearest entry if it lies strictly within `epsilon`,
    /// otherwise inserts. Returns True on a merge.
    #[pyo3(signature = (position, log_value, epsilon, stochastic = true))]
    fn insert_or_merge(&mut self, position: Vec<f64>, log_value: f64, epsilon: f64, stochastic: bool) -> PyResult<bool> {
        let entry = TreeEntry::new(position, log_value);
        let merged = if stochastic {
            self.inner.insert_or_merge(entry, epsilon, &PseudoMarginalMerge)
        } else {
            self.inner.insert_or_merge(entry, epsilon, &KeepExisting)
        };
        merged.map_err(to_py)
    }

    /// The `k` nearest entries as `(index, distance, log_value, count)`.
    fn knn(&self, query: Vec<f64>, k: usize) -> PyResult<Vec<(usize, f64, f64, u64)>> {
        let found = self.inner.knn(&query, k).map_err(to_py)?;
        Ok(found
            .into_iter()
            .map(|n| (n.index, n.distance, n.record.log_value, n.record.count))
            .collect())
    }

    /// Nearest-neighbour surrogate log value at `psi`.
    fn estimate(&self, psi: Vec<f64>, k: usize) -> PyResult<f64> {
        surrogate::estimate_log_posterior(&self.inner, &psi, k).map_err(to_py)
    }

    fn entry(&self, index: usize) -> PyResult<(Vec<f64>, f64, u64)> {
        if index >= self.inner.len() {
            return Err(PyValueError::new_err(format!("invalid_parameter: no entry {index}")));
        }
        let e = self.inner.entry(index);
        Ok((e.position.to_vec(), e.record.log_value, e.record.count))
    }

    fn validate(&self) -> PyResult<()> {
        self.inner
            .validate()
            .map_err(|m| PyRuntimeError::new_err(format!("invalid_state: {m}")))
    }

    /// Leaf depth summary as a dict.
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.tree_stats();
        let d = PyDict::new(py);
        d.set_item("entries", s.entry_count)?;
        d.set_item("leaves", s.leaf_count)?;
        d.set_item("mean_leaf_depth", s.mean_leaf_depth)?;
        d.set_item("min_leaf_depth", s.min_leaf_depth)?;
        d.set_item("max_leaf_depth", s.max_leaf_depth)?;
        Ok(d)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "KdTree(dim={}, half_bucket={}, entries={})",
            self.inner.dim(),
            self.inner.half_bucket(),
            self.inner.len()
        )
    }
}

/// Affine map to coordinates with identity sample covariance.
#[pyclass(name = "WhiteningTransform", module = "damcmc")]
struct PyWhitening {
    inner: surrogate::WhiteningTransform,
}

#[pymethods]
impl PyWhitening {
    #[staticmethod]
    fn fit(samples: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = surrogate::fit_whitening(&samples).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn identity(dim: usize) -> Self {
        Self {
            inner: surrogate::WhiteningTransform::identity(dim),
        }
    }

    fn whiten(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(theta.len())?;
        Ok(self.inner.whiten(&theta))
    }

    fn unwhiten(&self, psi: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(psi.len())?;
        Ok(self.inner.unwhiten(&psi))
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }
}

impl PyWhitening {
    fn check(&self, len: usize) -> PyResult<()> {
        if len == self.inner.dim() {
            Ok(())
        } else {
            Err(to_py(Error::DimensionMismatch {
                expected: self.inner.dim(),
                got: len,
            }))
        }
    }
}

/// Calibrated merge radius for `n` points in `dim` whitened dimensions.
#[pyfunction]
#[pyo3(signature = (n, dim, e_target = 0.5))]
fn merge_radius(n: f64, dim: usize, e_target: f64) -> PyResult<f64> {
    surrogate::merge_radius(n, dim, e_target).map_err(to_py)
}

#[pyfunction]
fn p_keep_bounds(e: f64) -> PyResult<(f64, f64)> {
    surrogate::p_keep_bounds(e).map_err(to_py)
}

#[pyfunction]
fn median_split_error_prob(b: u64, lo: f64, hi: f64) -> PyResult<f64> {
    kdtree::median_split_error_prob(b, lo, hi).map_err(to_py)
}

/// Merges two `(log_value, count)` records of an unbiased estimator.
#[pyfunction]
fn merge_pm(existing: (f64, u64), incoming: (f64, u64)) -> PyResult<(f64, u64)> {
    let rec = |(log_value, count)| ValueRecord { log_value, count };
    let m = kdtree::merge_pm(rec(existing), rec(incoming)).map_err(to_py)?;
    Ok((m.log_value, m.count))
}

#[pyfunction]
fn ess(x: Vec<f64>) -> PyResult<f64> {
    harness::ess(&x).map_err(to_py)
}

#[pyfunction]
fn lv_hazards(x: Vec<f64>, nu: Vec<f64>) -> PyResult<Vec<f64>> {
    models::lv_hazards(&x, &nu).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (x, nu, k = models::AR_K))]
fn ar_hazards(x: Vec<f64>, nu: Vec<f64>, k: f64) -> PyResult<Vec<f64>> {
    models::ar_hazards(&x, &nu, k).map_err(to_py)
}

/// Runs pilot and chain from a dict of config settings (values pass through
/// `str`). Returns diagnostics, resolved tuning and the chain's rows.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, settings: &Bound<'py, PyDict>, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let mut pairs = Vec::with_capacity(settings.len() + 1);
    for (k, v) in settings.iter() {
        pairs.push((k.str()?.to_string(), v.str()?.to_string()));
    }
    pairs.push(("seed".into(), seed.to_string()));
    let cfg = RunConfig::from_pairs(pairs).map_err(to_py)?;
    let out = py.detach(|| harness::run_experiment(&cfg)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("beta", out.resolved.beta)?;
    d.set_item("epsilon", out.resolved.epsilon)?;
    d.set_item("adaptations", out.adaptations)?;
    d.set_item("merges", out.merges)?;
    d.set_item("tree_entries", out.tree_stats.entry_count)?;
    if let Some(diag) = &out.diagnostics {
        d.set_item("expensive_evaluations", diag.expensive_evaluations)?;
        d.set_item("acceptance_rate", diag.acceptance_rate)?;
        d.set_item("alpha1", diag.alpha1)?;
        d.set_item("alpha2", diag.alpha2)?;
        d.set_item("ess", diag.ess.clone())?;
        d.set_item("means", diag.means.clone())?;
    }
    let rows: Vec<Vec<f64>> = out.trace.rows.iter().map(|r| r.theta.clone()).collect();
    d.set_item("samples", rows)?;
    Ok(d)
}

#[pymodule]
fn damcmc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKdTree>()?;
    m.add_class::<PyWhitening>()?;
    m.add_function(wrap_pyfunction!(merge_radius, m)?)?;
    m.add_function(wrap_pyfunction!(p_keep_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(median_split_error_prob, m)?)?;
    m.add_function(wrap_pyfunction!(merge_pm, m)?)?;
    m.add_function(wrap_pyfunction!(ess, m)?)?;
    m.add_function(wrap_pyfunction!(lv_hazards, m)?)?;
    m.add_function(wrap_pyfunction!(ar_hazards, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
