//! Python bindings: tuned fits on curve data and simulation studies.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use slos::app::{run_fit, run_simulation, AppConfig};
use slos::{Curves, FitResult, FunctionalData, Predictor, SlosError};

fn py_err(e: SlosError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_curves(grid: Vec<f64>, domain: Option<(f64, f64)>, rows: &[Vec<f64>]) -> PyResult<Curves> {
    let domain = match (domain, grid.first(), grid.last()) {
        (Some(d), _, _) => d,
        (None, Some(&a), Some(&b)) => (a, b),
        _ => return Err(PyValueError::new_err("grid is empty")),
    };
    Curves::from_rows(grid, domain, rows).map_err(py_err)
}

/// A tuned fit. `beta` evaluates the coefficient function; `predict` takes
/// curves sampled on the training grid.
#[pyclass(frozen)]
struct SlosFit {
    fit: FitResult,
    grid: Vec<f64>,
    domain: (f64, f64),
    #[pyo3(get)]
    r2: f64,
    #[pyo3(get)]
    score: f64,
}

#[pymethods]
impl SlosFit {
    #[getter]
    fn gamma(&self) -> f64 {
        self.fit.config.gamma
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.fit.config.lambda()
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.fit.mu_hat
    }

    #[getter]
    fn df(&self) -> f64 {
        self.fit.df
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.fit.beta_hat.coefficients().to_vec()
    }

    #[getter]
    fn active_intervals(&self) -> Vec<(f64, f64)> {
        self.fit.active_intervals()
    }

    #[getter]
    fn null_intervals(&self) -> Vec<(f64, f64)> {
        self.fit.null_intervals()
    }

    fn beta(&self, t: Vec<f64>) -> Vec<f64> {
        self.fit.beta_hat.values_on(&t)
    }

    fn predict(&self, curves: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let c = to_curves(self.grid.clone(), Some(self.domain), &curves)?;
        Ok(Predictor::predict(&self.fit, &c)
            .map_err(py_err)?
            .iter()
            .copied()
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "SlosFit(gamma={:e}, lambda={:e}, r2={:.4}, active={}/{})",
            self.gamma(),
            self.lambda_(),
            self.r2,
            self.fit.active_mask.iter().filter(|a| **a).count(),
            self.fit.active_mask.len()
        )
    }
}

/// Tunes `(γ, λ)` by the chosen criterion and fits. `curves` holds one row
/// per sample, each sampled on `grid`.
#[pyfunction]
#[pyo3(signature = (grid, curves, y, *, num_subintervals=None, gamma=None, lambda_=None, periodic=false, criterion="bic", domain=None))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    grid: Vec<f64>,
    curves: Vec<Vec<f64>>,
    y: Vec<f64>,
    num_subintervals: Option<usize>,
    gamma: Option<f64>,
    lambda_: Option<f64>,
    periodic: bool,
    criterion: &str,
    domain: Option<(f64, f64)>,
) -> PyResult<SlosFit> {
    let c = to_curves(grid.clone(), domain, &curves)?;
    let domain = c.domain();
    let data = FunctionalData::new(c, y.into()).map_err(py_err)?;
    let config = AppConfig {
        num_subintervals,
        gamma,
        lambda: lambda_,
        periodic,
        criterion: criterion.to_string(),
        ..AppConfig::default()
    };
    let o = py.detach(|| run_fit(&config, &data)).map_err(py_err)?;
    Ok(SlosFit {
        fit: o.fit,
        grid,
        domain,
        r2: o.r2,
        score: o.score,
    })
}

/// Runs a simulation study and returns one dict per method and metric.
#[pyfunction]
#[pyo3(signature = (case, n, replicates, *, seed=1, methods=None, test_n=5000))]
fn simulate<'py>(
    py: Python<'py>,
    case: &str,
    n: usize,
    replicates: usize,
    seed: u64,
    methods: Option<Vec<String>>,
    test_n: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut config = AppConfig {
        case: case.to_string(),
        n,
        replicates,
        seed,
        test_n,
        ..AppConfig::default()
    };
    if let Some(m) = methods {
        config.methods = m;
    }
    let report = py.detach(|| run_simulation(&config)).map_err(py_err)?;
    report
        .summary()
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("method", r.method.to_string())?;
            d.set_item("metric", r.metric.to_string())?;
            d.set_item("mean", r.mean)?;
            d.set_item("sd", r.sd)?;
            d.set_item("count", r.count)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn m_heuristic(n: usize) -> usize {
    slos::m_heuristic(n)
}

#[pymodule]
fn slos_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<SlosFit>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(m_heuristic, m)?)?;
    Ok(())
}
