//! Python bindings: scenarios, training, corrected runs, ensembles and the
//! self-check suite. Structured results come back as plain dicts.

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use nodecorr::pipeline::{ensemble_stats, time_series_csv, LandingPoint, Method, RunMode, RunOutput};
use nodecorr::scenario::ScenarioConfig;

create_exception!(pynodecorr, NumericalError, PyException, "A solver, propagation or correction step failed.");

fn to_py(e: nodecorr::Error) -> PyErr {
    if e.is_usage() {
        PyValueError::new_err(e.to_string())
    } else {
        NumericalError::new_err(e.to_string())
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn method(name: &str) -> PyResult<Method> {
    name.parse().map_err(to_py)
}

fn mode(name: &str) -> PyResult<RunMode> {
    name.parse().map_err(to_py)
}

/// Mission, vehicle, environment, solver and correction settings.
#[pyclass(frozen, skip_from_py_object, module = "pynodecorr")]
#[derive(Clone)]
struct Scenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl Scenario {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(text) => ScenarioConfig::from_toml(text).map_err(to_py)?,
            None => ScenarioConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self { inner: ScenarioConfig::load(&path).map_err(to_py)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn with_tf(&self, tf: f64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.with_tf(tf).map_err(to_py)? })
    }

    #[getter]
    fn tf(&self) -> f64 {
        self.inner.mission.tf
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.system().net.param_count()
    }

    /// Nominal initial state `[r, v, m]`.
    fn initial_state(&self) -> Vec<f64> {
        self.inner.system().initial_state()
    }

    fn __repr__(&self) -> String {
        format!("Scenario(tf={}, params={})", self.inner.mission.tf, self.param_count())
    }
}

/// Trains a policy for `seed`; returns `(theta, report)`.
#[pyfunction]
fn train<'py>(py: Python<'py>, scenario: &Scenario, seed: u64) -> PyResult<(Vec<f64>, Bound<'py, PyAny>)> {
    let scen = scenario.inner.clone();
    let (theta, report) = py
        .detach(move || {
            let sys = scen.system();
            nodecorr::train::train_mars(&sys, &scen.training, &scen.fixed_grid(), seed)
        })
        .map_err(to_py)?;
    Ok((theta, to_dict(py, &report)?))
}

/// Glorot-initialised parameters for `seed`.
#[pyfunction]
fn init_policy(scenario: &Scenario, seed: u64) -> Vec<f64> {
    scenario.inner.system().net.init(seed)
}

#[derive(Serialize)]
struct RunView<'a> {
    method: Method,
    mode: RunMode,
    metrics: nodecorr::pipeline::Metrics,
    landing: LandingPoint,
    diagnostics: Option<&'a nodecorr::correction::Diagnostics>,
    times: &'a [f64],
    states: &'a [Vec<f64>],
    controls: &'a [Vec<f64>],
}

/// Trained policy plus the nominal trajectory the corrections linearise about.
#[pyclass(module = "pynodecorr")]
struct Study {
    inner: nodecorr::pipeline::Study,
}

impl Study {
    fn run_view<'py>(&self, py: Python<'py>, run: &RunOutput) -> PyResult<Bound<'py, PyAny>> {
        let view = RunView {
            method: run.method,
            mode: run.mode,
            metrics: run.metrics,
            landing: LandingPoint::of(&self.inner.system, run.trajectory.last_state()),
            diagnostics: run.diagnostics(),
            times: run.trajectory.times(),
            states: run.trajectory.states(),
            controls: &run.controls,
        };
        to_dict(py, &view)
    }
}

#[pymethods]
impl Study {
    #[new]
    fn new(scenario: &Scenario, theta: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: nodecorr::pipeline::Study::new(scenario.inner.clone(), theta).map_err(to_py)? })
    }

    #[getter]
    fn pinv_rtol(&self) -> f64 {
        self.inner.pinv_rtol
    }

    #[setter]
    fn set_pinv_rtol(&mut self, value: f64) -> PyResult<()> {
        if !(value > 0.0 && value < 1.0) {
            return Err(PyValueError::new_err(format!("pinv_rtol must lie in (0, 1), got {value}")));
        }
        self.inner.pinv_rtol = value;
        Ok(())
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta.clone()
    }

    fn prepare(&mut self, method: &str) -> PyResult<()> {
        let m = self::method(method)?;
        self.inner.prepare(m).map_err(to_py)
    }

    /// Runs from `x0` (nominal when omitted). Prepares `method` if needed.
    #[pyo3(signature = (method, mode = "single", x0 = None))]
    fn run<'py>(
        &mut self,
        py: Python<'py>,
        method: &str,
        mode: &str,
        x0: Option<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let (m, md) = (self::method(method)?, self::mode(mode)?);
        self.inner.prepare(m).map_err(to_py)?;
        let x0 = x0.unwrap_or_else(|| self.inner.nominal_state());
        let run = self.inner.run(m, md, &x0).map_err(to_py)?;
        self.run_view(py, &run)
    }

    /// Time series CSV of one run.
    #[pyo3(signature = (method, mode = "single"))]
    fn run_csv(&mut self, method: &str, mode: &str) -> PyResult<String> {
        let (m, md) = (self::method(method)?, self::mode(mode)?);
        self.inner.prepare(m).map_err(to_py)?;
        let run = self.inner.run(m, md, &self.inner.nominal_state()).map_err(to_py)?;
        Ok(time_series_csv(&self.inner.system, &run))
    }

    /// Runs the ring of perturbed initial positions; returns `(stats, members)`.
    #[pyo3(signature = (methods = vec!["none".to_owned(), "theta".to_owned(), "u".to_owned()], mode = "single"))]
    fn ensemble<'py>(
        &mut self,
        py: Python<'py>,
        methods: Vec<String>,
        mode: &str,
    ) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
        let ms = methods.iter().map(|m| self::method(m)).collect::<PyResult<Vec<_>>>()?;
        let md = self::mode(mode)?;
        for &m in &ms {
            self.inner.prepare(m).map_err(to_py)?;
        }
        let study = &self.inner;
        let members = py.detach(|| study.run_ensemble(&ms, md));
        let stats: Vec<_> = ms.iter().map(|&m| ensemble_stats(&members, m)).collect();
        Ok((to_dict(py, &stats)?, to_dict(py, &members)?))
    }
}

/// Runs the self-check suite; `fault="psi-asymmetry"` corrupts the Gramian check.
#[pyfunction]
#[pyo3(signature = (fault = None))]
fn verify<'py>(py: Python<'py>, fault: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let fault = match fault {
        None => None,
        Some("psi-asymmetry") => Some(nodecorr::verify::Fault::PsiAsymmetry),
        Some(other) => return Err(PyValueError::new_err(format!("unknown fault {other:?}"))),
    };
    let checks = py.detach(|| nodecorr::verify::run_all(fault));
    to_dict(py, &checks)
}

/// Minimum-norm solution of `L x = b` with a relative singular-value cutoff;
/// returns `(x, rank)`.
#[pyfunction]
#[pyo3(signature = (l, b, rtol = nodecorr::correction::DEFAULT_PINV_RTOL))]
fn pinv_solve(l: Vec<Vec<f64>>, b: Vec<f64>, rtol: f64) -> PyResult<(Vec<f64>, usize)> {
    let rows = l.len();
    let cols = l.first().map_or(0, Vec::len);
    if l.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows of L differ in length"));
    }
    let m = DMatrix::from_fn(rows, cols, |i, j| l[i][j]);
    let sol = nodecorr::correction::pinv_solve(&m, &DVector::from_vec(b), rtol).map_err(to_py)?;
    Ok((sol.x.iter().copied().collect(), sol.rank))
}

#[pymodule]
fn pynodecorr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add("CSV_SCHEMA", nodecorr::pipeline::CSV_SCHEMA)?;
    m.add_class::<Scenario>()?;
    m.add_class::<Study>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(init_policy, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(pinv_solve, m)?)?;
    Ok(())
}
