//! Python bindings: parameters, thresholds, the founder offspring law and
//! Monte Carlo runs.

use flockcp_core::analytics;
use flockcp_core::experiments::{self, InitSpec, ProcessKind, TrialPlan};
use flockcp_core::simulator::{self, ClockStreams, Fate};
use flockcp_core::{FlockError, Geometry, Phi};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

fn to_py(e: FlockError) -> PyErr {
    match e {
        FlockError::Bracket { .. } => PyRuntimeError::new_err(e.to_string()),
        FlockError::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn process_kind(name: &str) -> PyResult<ProcessKind> {
    match name {
        "eta" => Ok(ProcessKind::Eta),
        "contact" => Ok(ProcessKind::Contact),
        "branching" => Ok(ProcessKind::Branching),
        _ => Err(PyValueError::new_err(format!(
            "process must be eta, contact or branching, got {name:?}"
        ))),
    }
}

/// Model parameters. `phi` may be `float("inf")`; `geometry` is `"sparse"`
/// or `"torus:<side>"`.
#[pyclass(name = "ModelParams", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyModelParams {
    inner: flockcp_core::ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (dim, max_flock, lambda_, phi, geometry = "sparse"))]
    fn new(dim: usize, max_flock: u32, lambda_: f64, phi: f64, geometry: &str) -> PyResult<Self> {
        let phi = if phi == f64::INFINITY { Phi::Infinite } else { Phi::Finite(phi) };
        let geometry: Geometry = geometry.parse().map_err(to_py)?;
        let inner = flockcp_core::ModelParams::new(dim, max_flock, lambda_, phi, geometry).map_err(to_py)?;
        Ok(PyModelParams { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn max_flock(&self) -> u32 {
        self.inner.max_flock
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn phi(&self) -> f64 {
        match self.inner.phi {
            Phi::Finite(p) => p,
            Phi::Infinite => f64::INFINITY,
        }
    }

    #[getter]
    fn geometry(&self) -> String {
        self.inner.geometry.to_string()
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "ModelParams(dim={}, max_flock={}, lambda_={}, phi={}, geometry={:?})",
            p.dim,
            p.max_flock,
            p.lambda,
            p.phi,
            p.geometry.to_string()
        )
    }
}

#[pyclass(name = "ThresholdReport", frozen, get_all)]
pub struct PyThresholdReport {
    m: f64,
    p_reach: f64,
    log_m: f64,
    subcritical: bool,
}

#[pymethods]
impl PyThresholdReport {
    fn __repr__(&self) -> String {
        format!("ThresholdReport(m={}, p_reach={}, subcritical={})", self.m, self.p_reach, py_bool(self.subcritical))
    }
}

#[pyclass(name = "SurvivalEstimate", frozen, get_all)]
pub struct PySurvivalEstimate {
    surviving: u64,
    n_trials: u64,
    point: f64,
    ci_low: f64,
    ci_high: f64,
}

#[pymethods]
impl PySurvivalEstimate {
    fn __repr__(&self) -> String {
        format!(
            "SurvivalEstimate(surviving={}, n_trials={}, point={}, ci=({}, {}))",
            self.surviving, self.n_trials, self.point, self.ci_low, self.ci_high
        )
    }
}

/// Outcome of one lattice run. `final_config` maps coordinate tuples to
/// occupied site states; `events` holds tab-separated log records when
/// recording was requested.
#[pyclass(name = "SimResult", frozen, get_all)]
pub struct PySimResult {
    extinct: bool,
    extinction_time: Option<f64>,
    n_events: u64,
    final_config: Vec<(Vec<i32>, u32)>,
    events: Vec<String>,
}

#[pymethods]
impl PySimResult {
    fn __repr__(&self) -> String {
        format!(
            "SimResult(extinct={}, extinction_time={}, n_events={}, occupied={})",
            py_bool(self.extinct),
            self.extinction_time.map_or("None".to_string(), |t| t.to_string()),
            self.n_events,
            self.final_config.len()
        )
    }
}

#[pyfunction]
fn threshold(params: &PyModelParams) -> PyResult<PyThresholdReport> {
    let r = analytics::compute_threshold(&params.inner).map_err(to_py)?;
    Ok(PyThresholdReport {
        m: r.m,
        p_reach: r.p_reach,
        log_m: r.log_m,
        subcritical: r.is_subcritical(),
    })
}

/// Founder offspring probabilities `P(X = 0..=k_max)` and the tail mass.
#[pyfunction]
#[pyo3(signature = (params, k_max = 64))]
fn offspring_pmf(params: &PyModelParams, k_max: usize) -> PyResult<(Vec<f64>, f64)> {
    let d = analytics::offspring_pmf(&params.inner, k_max).map_err(to_py)?;
    Ok((d.pmf, d.remainder))
}

/// Extinction probability of the founder Galton-Watson process.
#[pyfunction]
fn gw_extinction(params: &PyModelParams) -> PyResult<f64> {
    let d = analytics::offspring_pmf(&params.inner, 0).map_err(to_py)?;
    Ok(analytics::gw_extinction(&d).extinction_prob)
}

/// Extinction probability started from one full flock.
#[pyfunction]
fn full_flock_extinction(params: &PyModelParams) -> PyResult<f64> {
    analytics::full_flock_extinction(&params.inner).map_err(to_py)
}

/// Smallest `N <= n_max` with `m <= 1` at fixed `lambda`, if any.
#[pyfunction]
#[pyo3(signature = (dim, lambda_, phi, n_max = 4096))]
fn smallest_extinct_n(dim: usize, lambda_: f64, phi: f64, n_max: u32) -> Option<u32> {
    analytics::smallest_extinct_n(dim, phi, |_| lambda_, n_max)
}

/// One run of the flock process (or, with `process="contact"`, the
/// `phi = inf` process) from one site in state `init_state`.
#[pyfunction]
#[pyo3(signature = (params, t_max, seed = 0, init_state = 1, process = "eta", record = false))]
fn simulate(
    py: Python<'_>,
    params: &PyModelParams,
    t_max: f64,
    seed: u64,
    init_state: u32,
    process: &str,
    record: bool,
) -> PyResult<PySimResult> {
    let kind = process_kind(process)?;
    if kind == ProcessKind::Branching {
        return Err(PyValueError::new_err("simulate covers eta and contact; use survival for branching"));
    }
    let p = params.inner;
    let init = InitSpec::SingleAtOrigin { state: init_state }
        .configuration(&p)
        .map_err(to_py)?;
    let (out, events) = py
        .detach(|| {
            let streams = ClockStreams::new(seed);
            let mut events = Vec::new();
            let observer = |ev: &simulator::TrajectoryEvent| {
                if record {
                    events.push(ev.to_string());
                }
            };
            let out = match kind {
                ProcessKind::Contact => simulator::run_contact(&p, &init, t_max, &streams, observer),
                _ => simulator::run_eta(&p, &init, t_max, &streams, observer),
            };
            out.map(|o| (o, events))
        })
        .map_err(to_py)?;
    let extinction_time = match out.fate {
        Fate::Extinct(t) => Some(t),
        Fate::Censored => None,
    };
    Ok(PySimResult {
        extinct: extinction_time.is_some(),
        extinction_time,
        n_events: out.events,
        final_config: out
            .final_config
            .iter()
            .map(|(s, k)| (s.coords().to_vec(), k))
            .collect(),
        events,
    })
}

/// Survival estimate with a Wilson 95% interval over `n_trials` runs.
#[pyfunction]
#[pyo3(signature = (params, t_max, n_trials, seed = 0, init_state = 1, process = "eta", flock_cap = experiments::DEFAULT_FLOCK_CAP))]
fn survival(
    py: Python<'_>,
    params: &PyModelParams,
    t_max: f64,
    n_trials: u64,
    seed: u64,
    init_state: u32,
    process: &str,
    flock_cap: u64,
) -> PyResult<PySurvivalEstimate> {
    let mut plan = TrialPlan::new(
        params.inner,
        InitSpec::SingleAtOrigin { state: init_state },
        t_max,
        n_trials,
        seed,
    )
    .with_process(process_kind(process)?);
    plan.flock_cap = flock_cap;
    let e = py.detach(|| experiments::estimate_survival(&plan)).map_err(to_py)?;
    Ok(PySurvivalEstimate {
        surviving: e.surviving,
        n_trials: e.n_trials,
        point: e.point,
        ci_low: e.ci_low,
        ci_high: e.ci_high,
    })
}

/// Total ordering violations over `seeds` shared-clock runs of the caps
/// `n1 < n2`.
#[pyfunction]
#[pyo3(signature = (params, n1, n2, t_max = 50.0, seeds = 100, seed = 0))]
fn couple_check(
    py: Python<'_>,
    params: &PyModelParams,
    n1: u32,
    n2: u32,
    t_max: f64,
    seeds: u64,
    seed: u64,
) -> PyResult<u64> {
    let p = params.inner;
    py.detach(|| {
        let mut total = 0;
        for i in 0..seeds {
            let o = simulator::run_coupled_pair(&p, n1, n2, t_max, &ClockStreams::for_trial(seed, i), false)?;
            total += o.violation_count;
        }
        Ok(total)
    })
    .map_err(to_py)
}

#[pymodule]
fn flockcp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyThresholdReport>()?;
    m.add_class::<PySurvivalEstimate>()?;
    m.add_class::<PySimResult>()?;
    m.add_function(wrap_pyfunction!(threshold, m)?)?;
    m.add_function(wrap_pyfunction!(offspring_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(gw_extinction, m)?)?;
    m.add_function(wrap_pyfunction!(full_flock_extinction, m)?)?;
    m.add_function(wrap_pyfunction!(smallest_extinct_n, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(survival, m)?)?;
    m.add_function(wrap_pyfunction!(couple_check, m)?)?;
    Ok(())
}
