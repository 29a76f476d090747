//! Python module `mscf`: models, simulation, the three cash-flow estimators,
//! the Monte Carlo oracle and the generalized-H occupation estimator.

use std::path::PathBuf;

use mscf_core::cashflow::{self, CashFlowOptions, Method};
use mscf_core::empirical::{check_links, Empirical1D, Empirical2D, IndexedData};
use mscf_core::estimate1d::saj;
use mscf_core::extension::{bar_estimators, forward_solve, AdaptedScaler};
use mscf_core::model::{self, JumpConvention};
use mscf_core::simulate::{
    read_dataset_file, simulate_dataset, write_dataset_file, CensoredObservation, Censoring,
};
use mscf_core::timegrid::EventGrid;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: mscf_core::Error) -> PyErr {
    match e {
        mscf_core::Error::InvalidInput(_)
        | mscf_core::Error::Config(_)
        | mscf_core::Error::Parse { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = mscf_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Model {
    inner: model::Model,
}

#[pymethods]
impl Model {
    /// Built-in six-state free-policy model.
    #[staticmethod]
    fn freepolicy6() -> PyResult<Self> {
        Ok(Self {
            inner: model::Model::freepolicy6().map_err(err)?,
        })
    }

    /// Loads a TOML model config, or the preset when `spec` is `"freepolicy6"`.
    #[staticmethod]
    fn load(spec: &str) -> PyResult<Self> {
        Ok(Self {
            inner: model::Model::load(spec).map_err(err)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    #[getter]
    fn states(&self) -> Vec<String> {
        self.inner.states.labels().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({:?}, states={})",
            self.inner.name,
            self.inner.n_states()
        )
    }
}

#[pyclass(frozen)]
struct Dataset {
    obs: Vec<CensoredObservation>,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn read(path: PathBuf, model: &Model) -> PyResult<Self> {
        Ok(Self {
            obs: read_dataset_file(&path, &model.inner.states).map_err(err)?,
        })
    }

    fn write(&self, path: PathBuf, model: &Model) -> PyResult<()> {
        write_dataset_file(&self.obs, &model.inner.states, &path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.obs.len()
    }

    /// Fraction of individuals whose absorption was not observed.
    fn censored_fraction(&self) -> f64 {
        if self.obs.is_empty() {
            return 0.0;
        }
        self.obs.iter().filter(|o| !o.absorbed).count() as f64 / self.obs.len() as f64
    }
}

/// A step function `t ↦ A(t)` on an event grid.
#[pyclass(frozen)]
struct CashFlow {
    inner: cashflow::CashFlowCurve,
}

#[pymethods]
impl CashFlow {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.clone()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.grid().times().to_vec()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.curve.values().to_vec()
    }

    #[getter]
    fn warnings(&self) -> usize {
        self.inner.warnings
    }

    fn at(&self, t: f64) -> PyResult<f64> {
        self.inner.at(t).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.grid().len()
    }
}

#[pyfunction]
#[pyo3(signature = (model, n, seed = 0, censoring = "unif:20,80"))]
fn simulate(
    py: Python<'_>,
    model: &Model,
    n: usize,
    seed: u64,
    censoring: &str,
) -> PyResult<Dataset> {
    let c: Censoring = parse(censoring)?;
    let m = model.inner.clone();
    let obs = py
        .detach(move || simulate_dataset(&m, n, seed, c))
        .map_err(err)?;
    Ok(Dataset { obs })
}

fn method(name: &str, aux_seed: u64) -> PyResult<Method> {
    match name {
        "saj" => Ok(Method::Saj),
        "cmaj" => Ok(Method::Cmaj { aux_seed }),
        "2daj" => Ok(Method::TwoDim),
        other => Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    }
}

/// Plug-in estimate of the expected accumulated cash flow.
#[pyfunction]
#[pyo3(signature = (dataset, model, method = "saj", aux_seed = 0, eps = 0.0, h_at_jump = "right"))]
fn estimate_cashflow(
    py: Python<'_>,
    dataset: &Dataset,
    model: &Model,
    method: &str,
    aux_seed: u64,
    eps: f64,
    h_at_jump: &str,
) -> PyResult<CashFlow> {
    let m = self::method(method, aux_seed)?;
    let opts = CashFlowOptions {
        eps,
        convention: parse::<JumpConvention>(h_at_jump)?,
        ..CashFlowOptions::default()
    };
    let inner = py
        .detach(|| cashflow::estimate_cashflow(&dataset.obs, &model.inner, m, &opts))
        .map_err(err)?;
    Ok(CashFlow { inner })
}

/// Monte Carlo cash flow from `n_mc` uncensored paths, on the given times.
#[pyfunction]
#[pyo3(signature = (model, n_mc, times, seed = 0, h_at_jump = "right"))]
fn mc_oracle(
    py: Python<'_>,
    model: &Model,
    n_mc: usize,
    times: Vec<f64>,
    seed: u64,
    h_at_jump: &str,
) -> PyResult<CashFlow> {
    let conv = parse::<JumpConvention>(h_at_jump)?;
    let mut points = times;
    points.push(0.0);
    points.sort_by(f64::total_cmp);
    points.dedup();
    let grid = EventGrid::new(points).map_err(err)?;
    let inner = py
        .detach(|| cashflow::mc_oracle(&model.inner, n_mc, seed, conv, &grid))
        .map_err(err)?;
    Ok(CashFlow { inner })
}

fn indexed(dataset: &Dataset, model: &Model) -> PyResult<IndexedData> {
    let m = &model.inner;
    IndexedData::new(&dataset.obs, &m.states, &m.payments.scaling, m.horizon, &[]).map_err(err)
}

/// Scaled occupation probabilities: `(times, {state: values})`.
#[pyfunction]
fn occupation(
    py: Python<'_>,
    dataset: &Dataset,
    model: &Model,
) -> PyResult<(Vec<f64>, Vec<(String, Vec<f64>)>)> {
    let data = indexed(dataset, model)?;
    let p = py
        .detach(|| {
            Empirical1D::build(&data)
                .and_then(|e| saj(&e, 0.0))
                .map(|(_, p)| p)
        })
        .map_err(err)?;
    Ok(curves(&p, &model.inner))
}

/// Occupation estimates for a general scaler such as `discount:delta=0.03`.
#[pyfunction]
#[pyo3(signature = (dataset, model, scaler = "exercise", eps = 0.0))]
fn bar_occupation(
    py: Python<'_>,
    dataset: &Dataset,
    model: &Model,
    scaler: &str,
    eps: f64,
) -> PyResult<(Vec<f64>, Vec<(String, Vec<f64>)>)> {
    let s = AdaptedScaler::parse(scaler, &model.inner).map_err(err)?;
    let data = indexed(dataset, model)?;
    let p = py
        .detach(|| bar_estimators(&data, &s, eps).and_then(|b| forward_solve(&b)))
        .map_err(err)?;
    Ok(curves(&p, &model.inner))
}

fn curves(
    p: &mscf_core::estimate1d::OccupationCurve,
    m: &model::Model,
) -> (Vec<f64>, Vec<(String, Vec<f64>)>) {
    let by_state = (0..p.n_states())
        .map(|j| (m.states.label(j).to_string(), p.state(j).values().to_vec()))
        .collect();
    (p.grid().times().to_vec(), by_state)
}

/// Largest deviation in the empirical link identities.
#[pyfunction]
fn link_deviation(py: Python<'_>, dataset: &Dataset, model: &Model) -> PyResult<f64> {
    let data = indexed(dataset, model)?;
    py.detach(|| {
        let e1 = Empirical1D::build(&data)?;
        let e2 = Empirical2D::build(&data)?;
        Ok(check_links(&e1, &e2)?.max_deviation())
    })
    .map_err(err)
}

/// Equivalence benefit rate on the built-in technical basis.
#[pyfunction]
fn equivalence_benefit() -> PyResult<f64> {
    model::solve_equivalence_benefit(&model::TechnicalBasis::freepolicy6()).map_err(err)
}

#[pymodule]
fn mscf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<CashFlow>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_cashflow, m)?)?;
    m.add_function(wrap_pyfunction!(mc_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(occupation, m)?)?;
    m.add_function(wrap_pyfunction!(bar_occupation, m)?)?;
    m.add_function(wrap_pyfunction!(link_deviation, m)?)?;
    m.add_function(wrap_pyfunction!(equivalence_benefit, m)?)?;
    Ok(())
}
