//! Python bindings for the rydspin simulator.

use num_complex::Complex64;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rydspin::adiabatic::{greedy_schedule, spectrum_scan, GreedyConfig};
use rydspin::analysis::{jz_moments, parity_weights, population_histogram, q_function, rydberg_population, Block};
use rydspin::hilbert::{build_space, HilbertSpace, StateVector};
use rydspin::protocols::{self, DynamicConfig, ProtocolReport};
use rydspin::Error;
use std::sync::Arc;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(_) => PyOSError::new_err(err.to_string()),
        Error::Numerical(_) | Error::NotNormalized(_) | Error::NotHermitian(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn space(n: usize) -> PyResult<Arc<HilbertSpace>> {
    build_space(n).map_err(to_py)
}

/// Normalized state in the blockade-restricted symmetric space of `n` atoms.
#[pyclass(name = "State", module = "rydspin", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyState {
    inner: StateVector,
}

#[pymethods]
impl PyState {
    /// Builds a state from amplitudes in the order of `basis(n)`; normalizes them.
    #[new]
    fn new(n: usize, amplitudes: Vec<Complex64>) -> PyResult<Self> {
        let space = space(n)?;
        if amplitudes.len() != space.dim() {
            return Err(PyValueError::new_err(format!("expected {} amplitudes, got {}", space.dim(), amplitudes.len())));
        }
        let v = nalgebra::DVector::from_vec(amplitudes);
        Ok(Self { inner: StateVector::normalized(space, v).map_err(to_py)? })
    }

    /// The `+x` spin coherent state.
    #[staticmethod]
    #[pyo3(signature = (n, polar=None, azimuth=None))]
    fn coherent(n: usize, polar: Option<f64>, azimuth: Option<f64>) -> PyResult<Self> {
        let polar = polar.unwrap_or(std::f64::consts::FRAC_PI_2);
        Ok(Self { inner: rydspin::hilbert::spin_coherent_state(&space(n)?, polar, azimuth.unwrap_or(0.0)) })
    }

    #[getter]
    fn atoms(&self) -> usize {
        self.inner.space().atoms()
    }

    #[getter]
    fn amplitudes(&self) -> Vec<Complex64> {
        self.inner.amplitudes().iter().copied().collect()
    }

    fn jz_moments(&self) -> (f64, f64) {
        jz_moments(&self.inner)
    }

    fn squeezing_parameter(&self) -> PyResult<f64> {
        rydspin::analysis::squeezing_parameter(&self.inner).map_err(to_py)
    }

    fn parity_weights(&self) -> PyResult<(f64, f64)> {
        parity_weights(&self.inner).map_err(to_py)
    }

    fn rydberg_population(&self) -> PyResult<f64> {
        rydberg_population(&self.inner).map_err(to_py)
    }

    /// Distribution of `n_a`; `ground_only` renormalizes within the ground block.
    #[pyo3(signature = (ground_only=false))]
    fn histogram(&self, ground_only: bool) -> PyResult<Vec<f64>> {
        let block = if ground_only { Block::GroundOnly } else { Block::All };
        let h = population_histogram(&self.inner, block).map_err(to_py)?;
        Ok(h.bins.iter().map(|b| b.1).collect())
    }

    /// Q-function on a `polar x azimuth` grid, rows indexed by polar angle.
    #[pyo3(signature = (polar_samples=91, azimuth_samples=181))]
    fn q_function(&self, polar_samples: usize, azimuth_samples: usize) -> PyResult<Vec<Vec<f64>>> {
        let grid = q_function(&self.inner, polar_samples, azimuth_samples).map_err(to_py)?;
        Ok((0..grid.polar_samples).map(|i| grid.values.row(i).iter().copied().collect()).collect())
    }

    fn fidelity(&self, other: &PyState) -> PyResult<f64> {
        self.inner.fidelity(&other.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("State(atoms={}, dim={})", self.atoms(), self.inner.space().dim())
    }
}

/// Metrics, flags and states produced by one protocol run.
#[pyclass(name = "Report", module = "rydspin", frozen)]
pub struct PyReport {
    inner: ProtocolReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn protocol(&self) -> &str {
        &self.inner.protocol
    }

    #[getter]
    fn atoms(&self) -> usize {
        self.inner.atoms
    }

    #[getter]
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in &self.inner.metrics {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    #[getter]
    fn flags(&self) -> Vec<String> {
        self.inner.flags.clone()
    }

    #[getter]
    fn final_state(&self) -> PyState {
        PyState { inner: self.inner.final_state.clone() }
    }

    fn view(&self, name: &str) -> PyResult<PyState> {
        self.inner
            .view(name)
            .map(|s| PyState { inner: s.clone() })
            .ok_or_else(|| PyValueError::new_err(format!("no view named `{name}`")))
    }

    /// `(t, f1, f2, S, leakage, energy, extremal_energy, rydberg_population)` rows.
    fn trajectory(&self) -> Vec<(f64, f64, f64, f64, f64, f64, f64, f64)> {
        self.inner
            .trajectory
            .iter()
            .flatten()
            .map(|p| (p.t, p.f1, p.f2, p.s, p.leakage, p.energy, p.extremal_energy, p.rydberg_population))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Report(protocol={:?}, atoms={})", self.inner.protocol, self.inner.atoms)
    }
}

/// Basis labels `(n_a, n_b, n_r1, n_r2)` in amplitude order.
#[pyfunction]
fn basis(n: usize) -> PyResult<Vec<(usize, usize, usize, usize)>> {
    Ok(space(n)?.basis().iter().map(|s| (s.n_a, s.n_b, s.n_r1, s.n_r2)).collect())
}

#[pyfunction]
#[pyo3(signature = (n, evolve_time=None, optimize=false, prep="pulsed", deexcitation="chirp"))]
fn dynamic_squeeze(n: usize, evolve_time: Option<f64>, optimize: bool, prep: &str, deexcitation: &str) -> PyResult<PyReport> {
    let config = DynamicConfig {
        evolve_time,
        optimize,
        prep: prep.parse().map_err(to_py)?,
        deexcitation: deexcitation.parse().map_err(to_py)?,
        ..DynamicConfig::default()
    };
    let report = protocols::dynamic_squeeze(&space(n)?, &config).map_err(to_py)?;
    Ok(PyReport { inner: report })
}

#[pyfunction]
fn cat_generate(n: usize) -> PyResult<PyReport> {
    Ok(PyReport { inner: protocols::cat_generate(&space(n)?).map_err(to_py)? })
}

/// Greedy ramp followed by the adiabatic run on the resulting schedule.
#[pyfunction]
#[pyo3(signature = (n, leakage_tol=2e-3, dt=0.05, compensate=true))]
fn adiabatic_squeeze(py: Python<'_>, n: usize, leakage_tol: f64, dt: f64, compensate: bool) -> PyResult<PyReport> {
    let space = space(n)?;
    let config = GreedyConfig { leakage_tol, dt, compensate, ..GreedyConfig::default() };
    let report = py
        .detach(|| -> rydspin::Result<ProtocolReport> {
            config.validate()?;
            let outcome = greedy_schedule(&space, &config)?;
            protocols::adiabatic_squeeze_run(&space, &outcome.schedule, compensate)
        })
        .map_err(to_py)?;
    Ok(PyReport { inner: report })
}

/// `(x, eigenvalues)` of `x H_JC + (1 - x) Jx` on `grid` equally spaced points.
#[pyfunction]
#[pyo3(signature = (n, grid=101))]
fn spectrum(n: usize, grid: usize) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    if grid < 2 {
        return Err(PyValueError::new_err("grid needs at least 2 points"));
    }
    let xs: Vec<f64> = (0..grid).map(|k| k as f64 / (grid - 1) as f64).collect();
    let table = spectrum_scan(&space(n)?, &xs).map_err(to_py)?;
    Ok((table.x, table.eigenvalues))
}

/// Runs the command-line tool with `args` (without the program name).
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    rydspin::cli::run(std::iter::once("rydspin".to_string()).chain(args))
}

#[pymodule]
#[pyo3(name = "rydspin")]
fn rydspin_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyState>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(basis, m)?)?;
    m.add_function(wrap_pyfunction!(dynamic_squeeze, m)?)?;
    m.add_function(wrap_pyfunction!(cat_generate, m)?)?;
    m.add_function(wrap_pyfunction!(adiabatic_squeeze, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
