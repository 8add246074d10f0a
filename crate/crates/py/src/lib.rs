//! Python module `hyperq`.

use hyperq::baseline;
use hyperq::bench::InstanceGenerator;
use hyperq::io::{instance_to_json, parse_instance, ParseMode};
use hyperq::metrics;
use hyperq::parallel::{solve_parallel, ParallelConfig};
use hyperq::simulator::{self, ServiceDistribution, SimConfig};
use hyperq::solver::{self, InnerMode};
use hyperq::{RawSystem, ServiceSystem, SolverConfig, SteadyStateDistribution};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(hyperq, HyperqError, PyValueError);

fn err(e: hyperq::Error) -> PyErr {
    HyperqError::new_err(e.to_string())
}

/// A validated service system.
#[pyclass(name = "System", module = "hyperq", frozen)]
#[derive(Clone)]
pub struct PySystem {
    inner: ServiceSystem,
}

#[pymethods]
impl PySystem {
    #[new]
    #[pyo3(signature = (arrival_rate, demand_fractions, service_rates, preferences, buffer_capacity=0, travel_times=None))]
    fn new(
        arrival_rate: f64,
        demand_fractions: Vec<f64>,
        service_rates: Vec<f64>,
        preferences: Vec<Vec<usize>>,
        buffer_capacity: usize,
        travel_times: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Self> {
        let raw = RawSystem {
            n_units: service_rates.len(),
            n_nodes: demand_fractions.len(),
            arrival_rate,
            demand_fractions,
            service_rates,
            preferences,
            buffer_capacity,
            travel_times,
            metadata: None,
        };
        hyperq::validate(raw)
            .map(|inner| PySystem { inner })
            .map_err(err)
    }

    /// Parses an instance document.
    #[staticmethod]
    #[pyo3(signature = (text, lenient=false))]
    fn from_json(text: &str, lenient: bool) -> PyResult<Self> {
        let mode = if lenient {
            ParseMode::Lenient
        } else {
            ParseMode::Strict
        };
        parse_instance(text, mode)
            .map(|p| PySystem { inner: p.system })
            .map_err(err)
    }

    fn to_json(&self) -> String {
        instance_to_json(self.inner.raw())
    }

    fn with_buffer(&self, capacity: usize) -> Self {
        PySystem {
            inner: self.inner.with_buffer(capacity),
        }
    }

    #[getter]
    fn n_units(&self) -> usize {
        self.inner.n_units()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn arrival_rate(&self) -> f64 {
        self.inner.arrival_rate()
    }

    #[getter]
    fn service_rates(&self) -> Vec<f64> {
        self.inner.service_rates().to_vec()
    }

    #[getter]
    fn buffer_capacity(&self) -> usize {
        self.inner.buffer_capacity()
    }

    /// `λ / Σ ν_i`.
    #[getter]
    fn offered_utilization(&self) -> f64 {
        self.inner.utilization()
    }

    /// `(phi, ok)` with `phi = [Φ_1, ..., Φ_N]`.
    fn check_assumption(&self) -> (Vec<f64>, bool) {
        let c = solver::check_assumption(&self.inner);
        (c.phi, c.ok)
    }

    fn __repr__(&self) -> String {
        format!(
            "System(n_units={}, n_nodes={}, arrival_rate={}, buffer_capacity={})",
            self.inner.n_units(),
            self.inner.n_nodes(),
            self.inner.arrival_rate(),
            self.inner.buffer_capacity()
        )
    }
}

/// Stationary probabilities of the hypercube states and the waiting room.
#[pyclass(name = "Distribution", module = "hyperq", frozen)]
pub struct PyDistribution {
    inner: SteadyStateDistribution,
}

#[pymethods]
impl PyDistribution {
    /// Indexed by state; bit `i - 1` of the index is unit `i`.
    #[getter]
    fn probabilities(&self) -> Vec<f64> {
        self.inner.probabilities.clone()
    }

    #[getter]
    fn queue_tail(&self) -> Vec<f64> {
        self.inner.queue_tail.clone()
    }

    #[getter]
    fn layer_marginals(&self) -> Vec<f64> {
        self.inner.layer_marginals.clone()
    }

    fn full_vector(&self) -> Vec<f64> {
        self.inner.full_vector()
    }

    fn total(&self) -> f64 {
        self.inner.total()
    }

    fn saturation(&self) -> f64 {
        self.inner.saturation()
    }

    fn utilization(&self, system: &PySystem) -> Vec<f64> {
        metrics::utilization(&self.inner, &system.inner)
    }

    /// Dispatch fractions indexed `[unit][node]`.
    fn dispatch_fractions(&self, system: &PySystem) -> PyResult<Vec<Vec<f64>>> {
        metrics::dispatch_fractions(&self.inner, &system.inner)
            .map(|f| f.rho)
            .map_err(err)
    }

    fn mean_response_time(&self, system: &PySystem) -> PyResult<f64> {
        let tau = system
            .inner
            .travel_times()
            .ok_or_else(|| err(hyperq::Error::MissingTravelTimes))?;
        let f = metrics::dispatch_fractions(&self.inner, &system.inner).map_err(err)?;
        Ok(metrics::mean_response_time(&f, tau))
    }

    fn coverage(&self, system: &PySystem, threshold: f64) -> PyResult<f64> {
        metrics::coverage(&self.inner, &system.inner, threshold).map_err(err)
    }
}

/// Solver output: the distribution plus convergence diagnostics.
#[pyclass(name = "Solution", module = "hyperq", frozen)]
pub struct PySolution {
    #[pyo3(get)]
    distribution: Py<PyDistribution>,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    iterations: usize,
    /// Largest per-layer L1 change in each sweep.
    #[pyo3(get)]
    m_k: Vec<f64>,
    /// Total probability after each sweep.
    #[pyo3(get)]
    normalization: Vec<f64>,
    #[pyo3(get)]
    phi: Vec<f64>,
    #[pyo3(get)]
    assumption_ok: bool,
}

fn solution(py: Python<'_>, s: solver::Solution) -> PyResult<PySolution> {
    Ok(PySolution {
        distribution: Py::new(
            py,
            PyDistribution {
                inner: s.distribution,
            },
        )?,
        converged: s.trace.converged,
        iterations: s.trace.iterations,
        m_k: s.trace.m_k,
        normalization: s.trace.normalization,
        phi: s.trace.assumption.phi,
        assumption_ok: s.trace.assumption.ok,
    })
}

/// Layered fixed-point solve. `workers` selects the master/worker solver.
#[pyfunction]
#[pyo3(signature = (system, tol=1e-9, tol_inner=None, inner_mode="iterative", workers=None, batch_size=4096))]
fn solve(
    py: Python<'_>,
    system: &PySystem,
    tol: f64,
    tol_inner: Option<f64>,
    inner_mode: &str,
    workers: Option<usize>,
    batch_size: usize,
) -> PyResult<PySolution> {
    let cfg = SolverConfig {
        tol_outer: tol,
        tol_inner: tol_inner.unwrap_or(tol / 10.0),
        inner_mode: match inner_mode {
            "iterative" => InnerMode::Iterative,
            "closed-form" | "closed_form" => InnerMode::ClosedForm,
            other => {
                return Err(HyperqError::new_err(format!(
                    "unknown inner mode {other:?}"
                )))
            }
        },
        ..Default::default()
    };
    let sys = &system.inner;
    let s = py
        .allow_threads(|| match workers {
            Some(q) => {
                solve_parallel(sys, &ParallelConfig::new(q, batch_size, cfg)).map(|p| p.solution)
            }
            None => hyperq::solve(sys, &cfg),
        })
        .map_err(err)?;
    solution(py, s)
}

/// Direct sparse solve of the full balance equations.
#[pyfunction]
fn solve_direct(py: Python<'_>, system: &PySystem) -> PyResult<PyDistribution> {
    let sys = &system.inner;
    py.allow_threads(|| baseline::solve_direct(sys))
        .map(|inner| PyDistribution { inner })
        .map_err(err)
}

/// Discrete-event estimate; returns a dict of means and 95% half-widths.
#[pyfunction]
#[pyo3(signature = (system, dist="exp", arrivals=100_000, replications=20, seed=0, warmup_fraction=0.01))]
fn simulate<'py>(
    py: Python<'py>,
    system: &PySystem,
    dist: &str,
    arrivals: u64,
    replications: usize,
    seed: u64,
    warmup_fraction: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SimConfig {
        distribution: ServiceDistribution::parse(dist).map_err(err)?,
        arrivals,
        replications,
        seed,
        warmup_fraction,
        ..Default::default()
    };
    let sys = &system.inner;
    let est = py
        .allow_threads(|| simulator::simulate(sys, &cfg))
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("utilization", est.mean_utilization())?;
    out.set_item(
        "utilization_half_width",
        est.utilization
            .iter()
            .map(|i| i.half_width)
            .collect::<Vec<_>>(),
    )?;
    out.set_item("state_probabilities", est.mean_state_probabilities())?;
    out.set_item("lost_fraction", est.lost_fraction.mean)?;
    Ok(out)
}

/// Instance with random demand, geography and perturbed service rates.
#[pyfunction]
#[pyo3(signature = (n_units, rho, n_nodes=10, seed=0, heterogeneity=0.2, buffer_capacity=0))]
fn generate(
    n_units: usize,
    rho: f64,
    n_nodes: usize,
    seed: u64,
    heterogeneity: f64,
    buffer_capacity: usize,
) -> PyResult<PySystem> {
    InstanceGenerator::new(n_units, n_nodes, rho, seed)
        .with_heterogeneity(heterogeneity)
        .with_buffer(buffer_capacity)
        .generate()
        .map(|inner| PySystem { inner })
        .map_err(err)
}

/// Maximum percentage relative error.
#[pyfunction]
fn mpre(reference: Vec<f64>, candidate: Vec<f64>) -> PyResult<f64> {
    metrics::mpre(&reference, &candidate).map_err(err)
}

#[pymodule]
#[pyo3(name = "hyperq")]
pub fn hyperq_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("HyperqError", m.py().get_type::<HyperqError>())?;
    m.add_class::<PySystem>()?;
    m.add_class::<PyDistribution>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve_direct, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(mpre, m)?)?;
    Ok(())
}
