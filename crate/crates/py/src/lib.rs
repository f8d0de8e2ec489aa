//! Python bindings: configurations, equilibration, discrimination metrics,
//! the extended scenario's readout error, CHSH and sweeps.

use pyo3::exceptions::{PyIOError, PyMemoryError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wfqd_core::discrimination::wf_probabilities;
use wfqd_core::ewfs::{self, equilibrate_ewfs, ewfs_overlaps, lf_epsilon_for, Lab};
use wfqd_core::harness::{self, records_to_csv, run_sweep, Experiment, SweepConfig};
use wfqd_core::qcore::{CMatrix, DensityOperator, LabLayout, C64};
use wfqd_core::wf::{self, equilibrate, overlap_metrics};
use wfqd_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::ResourceLimit { .. } => PyMemoryError::new_err(e.to_string()),
        Error::Io(_) | Error::Csv(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_rows(m: &CMatrix) -> Vec<Vec<C64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn from_rows(rows: &[Vec<C64>]) -> PyResult<CMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn parse_lab(name: &str) -> PyResult<Lab> {
    match name {
        "charlie" | "c" => Ok(Lab::Charlie),
        "debbie" | "d" => Ok(Lab::Debbie),
        _ => Err(PyValueError::new_err(format!("unknown lab `{name}`"))),
    }
}

#[pyclass(name = "WfConfig", from_py_object)]
#[derive(Clone)]
struct PyWfConfig {
    inner: wf::WfConfig,
}

#[pymethods]
impl PyWfConfig {
    #[new]
    #[pyo3(signature = (n_f, n_e, p0=0.5, seed=42, dense=false))]
    fn new(n_f: usize, n_e: usize, p0: f64, seed: u64, dense: bool) -> PyResult<Self> {
        let layout = LabLayout::new(n_f, n_e).map_err(py_err)?;
        let inner = wf::WfConfig::new(layout, p0).map_err(py_err)?.with_seed(seed).with_dense(dense);
        Ok(Self { inner })
    }

    #[getter]
    fn n_f(&self) -> usize {
        self.inner.layout.n_f()
    }

    #[getter]
    fn n_e(&self) -> usize {
        self.inner.layout.n_e()
    }

    #[getter]
    fn p0(&self) -> f64 {
        self.inner.p0
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!(
            "WfConfig(n_f={}, n_e={}, p0={}, seed={}, dense={})",
            self.n_f(),
            self.n_e(),
            self.inner.p0,
            self.inner.seed,
            self.inner.dense
        )
    }
}

/// Equilibrated lab of the simple scenario.
#[pyclass(name = "LabState")]
struct PyLabState {
    inner: wf::LabState,
    config: wf::WfConfig,
}

#[pymethods]
impl PyLabState {
    #[getter]
    fn p(&self) -> (f64, f64) {
        (self.inner.p[0], self.inner.p[1])
    }

    #[getter]
    fn dense_fallback(&self) -> bool {
        self.inner.diagnostics.dense_fallback
    }

    /// Friend and environment overlaps.
    fn overlaps(&self) -> (f64, f64) {
        let o = overlap_metrics(&self.inner);
        (o.friend_overlap, o.env_overlap)
    }

    /// Helstrom readouts and the ε, Δ discrepancies.
    fn probabilities<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = wf_probabilities(&self.inner, &self.config).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("p_f_i", r.p_f_i)?;
        d.set_item("p_w_i", r.p_w_i)?;
        d.set_item("e0", r.e0)?;
        d.set_item("e1", r.e1)?;
        d.set_item("misid_10", r.misid_10)?;
        d.set_item("misid_01", r.misid_01)?;
        d.set_item("p_f_j", r.p_f_j)?;
        d.set_item("p_w_j", r.p_w_j)?;
        d.set_item("p_b_j", r.p_b_j)?;
        d.set_item("epsilon", r.epsilon)?;
        d.set_item("delta", r.delta)?;
        d.set_item("zero_rank", r.zero_rank.any())?;
        Ok(d)
    }

    /// Full lab density matrix as nested lists of complex numbers.
    fn dense(&self) -> PyResult<Vec<Vec<C64>>> {
        Ok(to_rows(self.inner.dense_lab().map_err(py_err)?.matrix()))
    }
}

#[pyfunction]
#[pyo3(signature = (config, sample=0))]
fn equilibrate_wf(config: &PyWfConfig, sample: u64) -> PyResult<PyLabState> {
    let inner = equilibrate(&config.inner, sample).map_err(py_err)?;
    Ok(PyLabState {
        inner,
        config: config.inner.clone(),
    })
}

#[pyclass(name = "EwfsConfig", from_py_object)]
#[derive(Clone)]
struct PyEwfsConfig {
    inner: ewfs::EwfsConfig,
}

#[pymethods]
impl PyEwfsConfig {
    #[new]
    #[pyo3(signature = (n_c, n_ec, n_d=1, n_ed=1, theta=std::f64::consts::FRAC_PI_4, seed=42, dense=false))]
    fn new(n_c: usize, n_ec: usize, n_d: usize, n_ed: usize, theta: f64, seed: u64, dense: bool) -> PyResult<Self> {
        let inner = ewfs::EwfsConfig::new(n_c, n_ec, n_d, n_ed)
            .map_err(py_err)?
            .with_theta(theta)
            .with_seed(seed)
            .with_dense(dense);
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn qubits(&self) -> usize {
        self.inner.qubits()
    }

    fn __repr__(&self) -> String {
        let (c, d) = (self.inner.charlie, self.inner.debbie);
        format!(
            "EwfsConfig(n_c={}, n_ec={}, n_d={}, n_ed={}, theta={}, seed={}, dense={})",
            c.n_f(),
            c.n_e(),
            d.n_f(),
            d.n_e(),
            self.inner.theta,
            self.inner.seed,
            self.inner.dense
        )
    }
}

/// Equilibrated pair of labs in the extended scenario.
#[pyclass(name = "EwfsState")]
struct PyEwfsState {
    inner: ewfs::EwfsState,
}

#[pymethods]
impl PyEwfsState {
    /// Joint outcome table `p(c, d)`.
    #[getter]
    fn p_cd(&self) -> [[f64; 2]; 2] {
        self.inner.p_cd
    }

    #[pyo3(signature = (lab="charlie"))]
    fn marginal(&self, lab: &str) -> PyResult<(f64, f64)> {
        let m = self.inner.marginal(parse_lab(lab)?);
        Ok((m[0], m[1]))
    }

    #[pyo3(signature = (lab="charlie"))]
    fn overlaps(&self, lab: &str) -> PyResult<(f64, f64)> {
        let o = ewfs_overlaps(&self.inner, parse_lab(lab)?);
        Ok((o.friend_overlap, o.env_overlap))
    }

    /// `(ε, 2 + 4ε, violable)` for the given lab.
    #[pyo3(signature = (lab="charlie"))]
    fn lf_epsilon(&self, lab: &str) -> PyResult<(f64, f64, bool)> {
        let r = lf_epsilon_for(&self.inner, parse_lab(lab)?).map_err(py_err)?;
        Ok((r.varepsilon, r.bound, r.violable))
    }

    /// Joint density matrix in the order (pointer C, C, E_C, pointer D, D, E_D).
    fn dense(&self) -> PyResult<Vec<Vec<C64>>> {
        Ok(to_rows(self.inner.dense_joint().map_err(py_err)?.matrix()))
    }
}

#[pyfunction]
#[pyo3(signature = (config, sample=0))]
fn equilibrate_ewfs_state(config: &PyEwfsConfig, sample: u64) -> PyResult<PyEwfsState> {
    let inner = equilibrate_ewfs(&config.inner, sample).map_err(py_err)?;
    Ok(PyEwfsState { inner })
}

/// `⟨A₀B₀⟩ + ⟨A₀B₁⟩ − ⟨A₁B₀⟩ + ⟨A₁B₁⟩` of a bipartite state.
#[pyfunction]
fn chsh(
    rho: Vec<Vec<C64>>,
    dim_a: usize,
    a0: Vec<Vec<C64>>,
    a1: Vec<Vec<C64>>,
    b0: Vec<Vec<C64>>,
    b1: Vec<Vec<C64>>,
) -> PyResult<f64> {
    let rho = DensityOperator::new(from_rows(&rho)?).map_err(py_err)?;
    let (a0, a1, b0, b1) = (from_rows(&a0)?, from_rows(&a1)?, from_rows(&b0)?, from_rows(&b1)?);
    ewfs::chsh(&rho, dim_a, [&a0, &a1], [&b0, &b1]).map_err(py_err)
}

fn records_to_dicts<'py>(py: Python<'py>, records: &[harness::SweepRecord]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("experiment", r.experiment.name())?;
            d.set_item("n_f", r.layout.n_f)?;
            d.set_item("n_e", r.layout.n_e)?;
            d.set_item("n_c", r.layout.n_c)?;
            d.set_item("n_ec", r.layout.n_ec)?;
            d.set_item("n_d", r.layout.n_d)?;
            d.set_item("n_ed", r.layout.n_ed)?;
            d.set_item("p0", r.p0)?;
            d.set_item("metric", r.metric)?;
            d.set_item("mean", r.mean)?;
            d.set_item("sd", r.sd)?;
            d.set_item("sem", r.sem)?;
            d.set_item("n_samples", r.n_samples)?;
            d.set_item("seed", r.seed)?;
            d.set_item("zero_rank_fraction", r.zero_rank_fraction)?;
            Ok(d)
        })
        .collect()
}

/// Aggregated sweep; returns one dict per (layout, metric) row.
#[pyfunction]
#[pyo3(signature = (experiment, n_f, n_e, *, n_d=1, n_ed=1, p0=0.5, theta=std::f64::consts::FRAC_PI_4, samples=200, seed=42, dense=false, threads=None))]
#[allow(clippy::too_many_arguments)]
fn sweep<'py>(
    py: Python<'py>,
    experiment: &str,
    n_f: Vec<usize>,
    n_e: Vec<usize>,
    n_d: usize,
    n_ed: usize,
    p0: f64,
    theta: f64,
    samples: usize,
    seed: u64,
    dense: bool,
    threads: Option<usize>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let experiment: Experiment = experiment.parse().map_err(py_err)?;
    let mut config = SweepConfig::new(experiment, n_f, n_e);
    config.n_d = n_d;
    config.n_ed = n_ed;
    config.p0 = p0;
    config.theta = theta;
    config.n_samples = samples;
    config.seed = seed;
    config.dense = dense;
    config.threads = threads;
    let records = py.detach(|| run_sweep(&config)).map_err(py_err)?;
    records_to_dicts(py, &records)
}

/// Runs a named preset and returns its CSV text.
#[pyfunction]
#[pyo3(signature = (name, samples=None, seed=None))]
fn preset_csv(py: Python<'_>, name: &str, samples: Option<usize>, seed: Option<u64>) -> PyResult<String> {
    let mut config = harness::preset(name).map_err(py_err)?;
    if let Some(n) = samples {
        config.n_samples = n;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let records = py.detach(|| run_sweep(&config)).map_err(py_err)?;
    records_to_csv(&records).map_err(py_err)
}

#[pymodule]
fn wfqd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWfConfig>()?;
    m.add_class::<PyLabState>()?;
    m.add_class::<PyEwfsConfig>()?;
    m.add_class::<PyEwfsState>()?;
    m.add_function(wrap_pyfunction!(equilibrate_wf, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrate_ewfs_state, m)?)?;
    m.add_function(wrap_pyfunction!(chsh, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(preset_csv, m)?)?;
    m.add("LF_THRESHOLD", ewfs::LF_THRESHOLD)?;
    m.add("CSV_HEADER", harness::CSV_HEADER.to_vec())?;
    m.add("PRESETS", harness::PRESETS.to_vec())?;
    Ok(())
}
