//! Python bindings: grid simulation, dataset generation, model fitting,
//! coordinated control, the Riccati solver and the mode-selection check.
//! Structured results are returned as plain dicts and lists.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use cefc::config::WeightsConfig;
use cefc::controller::{self, ControlLimits, CoordinationSettings, DcMode, LqrWeights};
use cefc::gridsim::{self, GridModel, TrajectoryRecord};
use cefc::koopman::{self, KoopmanModel, Method};
use cefc::robustness::{self, Prop1Settings};

fn err(e: cefc::Error) -> PyErr {
    match e {
        cefc::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_numerical() => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix rows differ in length"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[pyclass(name = "Grid", module = "cefc", from_py_object)]
#[derive(Clone)]
struct PyGrid(GridModel);

#[pymethods]
impl PyGrid {
    /// Three machines, three load nodes, two HVDC links.
    #[staticmethod]
    fn desk_scale() -> Self {
        PyGrid(GridModel::desk_scale())
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        GridModel::from_json_str(text).map(PyGrid).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn n_machines(&self) -> usize {
        self.0.n_machines()
    }

    #[getter]
    fn n_loads(&self) -> usize {
        self.0.n_loads()
    }

    #[getter]
    fn n_links(&self) -> usize {
        self.0.n_links()
    }

    /// Default control limits as a dict.
    fn default_limits<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &ControlLimits::for_grid(&self.0))
    }

    /// Closed-form steady-state deviation (p.u.) after a deficit (p.u.).
    fn steady_state_deviation(&self, deficit_pu: f64) -> f64 {
        gridsim::steady_state_deviation(&self.0, deficit_pu)
    }
}

#[pyclass(name = "Scenario", module = "cefc", from_py_object)]
#[derive(Clone)]
struct PyScenario(gridsim::Scenario);

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (trips, inertia_scale=1.0, trip_time=1.0, horizon=60.0, dt=0.1, step_deficit_mw=0.0))]
    fn new(
        trips: Vec<usize>,
        inertia_scale: f64,
        trip_time: f64,
        horizon: f64,
        dt: f64,
        step_deficit_mw: f64,
    ) -> Self {
        let mut sc = gridsim::Scenario::new(trips, inertia_scale);
        sc.trip_time = trip_time;
        sc.horizon = horizon;
        sc.dt = dt;
        sc.step_deficit_mw = step_deficit_mw;
        PyScenario(sc)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(PyScenario)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn inertia_scale(&self) -> f64 {
        self.0.inertia_scale
    }

    #[getter]
    fn trips(&self) -> Vec<usize> {
        self.0.trips.clone()
    }
}

#[pyclass(name = "Trajectory", module = "cefc", from_py_object)]
#[derive(Clone)]
struct PyTrajectory(TrajectoryRecord);

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn t(&self) -> Vec<f64> {
        (0..self.0.len()).map(|k| self.0.time(k)).collect()
    }

    /// COI frequency deviation, p.u.
    #[getter]
    fn omega(&self) -> Vec<f64> {
        self.0.omega.clone()
    }

    #[getter]
    fn y(&self) -> Vec<Vec<f64>> {
        self.0.y.clone()
    }

    #[getter]
    fn ul(&self) -> Vec<Vec<f64>> {
        self.0.ul.clone()
    }

    #[getter]
    fn ud(&self) -> Vec<Vec<f64>> {
        self.0.ud.clone()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn nadir(&self) -> f64 {
        self.0.nadir()
    }

    #[pyo3(signature = (seconds=5.0))]
    fn steady_state(&self, seconds: f64) -> f64 {
        self.0.steady_state(seconds)
    }

    fn cumulative_dc(&self) -> f64 {
        self.0.cumulative_dc()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut out = Vec::new();
        self.0.write_csv(&mut out).map_err(err)?;
        Ok(String::from_utf8_lossy(&out).into_owned())
    }
}

/// Open-loop simulation of `scenario` on `grid`.
#[pyfunction]
fn simulate(grid: &PyGrid, scenario: &PyScenario) -> PyResult<PyTrajectory> {
    gridsim::simulate(&grid.0, &scenario.0, None)
        .map(PyTrajectory)
        .map_err(err)
}

#[pyclass(name = "Dataset", module = "cefc")]
struct PyDataset(koopman::Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn generate(grid: &PyGrid, n_train: usize, n_test: usize, seed: u64) -> PyResult<Self> {
        koopman::generate_dataset(&grid.0, n_train, n_test, seed)
            .map(PyDataset)
            .map_err(err)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        koopman::Dataset::load(&dir).map(PyDataset).map_err(err)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.0.save(&dir).map_err(err)
    }

    #[getter]
    fn n_train(&self) -> usize {
        self.0.train.len()
    }

    #[getter]
    fn n_test(&self) -> usize {
        self.0.test.len()
    }

    fn train_trajectory(&self, i: usize) -> PyResult<PyTrajectory> {
        self.0
            .train
            .get(i)
            .map(|s| PyTrajectory(s.record.clone()))
            .ok_or_else(|| PyValueError::new_err("index out of range"))
    }
}

#[pyclass(name = "Model", module = "cefc", from_py_object)]
#[derive(Clone)]
struct PyModel(KoopmanModel);

#[pymethods]
impl PyModel {
    /// Fits `method` (cefc, cefc-ntd, edmd, dmd) on the training split.
    #[staticmethod]
    #[pyo3(signature = (dataset, method="cefc", ridge=koopman::DEFAULT_RIDGE))]
    fn fit(dataset: &PyDataset, method: &str, ridge: f64) -> PyResult<Self> {
        let method: Method = method.parse().map_err(err)?;
        let dt = dataset.0.train.first().map_or(0.1, |s| s.record.dt);
        koopman::fit(&dataset.0.train, &method.observable_config(dt), ridge)
            .map(PyModel)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        KoopmanModel::load(&path).map(PyModel).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        rows(&self.0.a)
    }

    #[getter]
    fn b_l(&self) -> Vec<Vec<f64>> {
        rows(&self.0.b_l)
    }

    #[getter]
    fn b_d(&self) -> Vec<Vec<f64>> {
        rows(&self.0.b_d)
    }

    /// Mean absolute nadir, steady-state and trajectory errors (Hz) on the
    /// test split.
    fn metrics<'py>(&self, py: Python<'py>, dataset: &PyDataset) -> PyResult<Bound<'py, PyAny>> {
        let m = koopman::eval_metrics(&self.0, &dataset.0.test).map_err(err)?;
        to_py(py, &m)
    }

    /// Rollout along a recorded trajectory with its recorded inputs; returns
    /// the first predicted sample index and the predicted ω.
    fn predict(&self, trajectory: &PyTrajectory) -> PyResult<(usize, Vec<f64>)> {
        koopman::predict_record(&self.0, &trajectory.0).map_err(err)
    }
}

/// Coordinated control run. Returns a dict with the summary and the traces.
#[pyfunction]
#[pyo3(signature = (grid, scenario, model, dc_mode="lqr", limits=None))]
fn coordinate<'py>(
    py: Python<'py>,
    grid: &PyGrid,
    scenario: &PyScenario,
    model: &PyModel,
    dc_mode: &str,
    limits: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let limits = match limits {
        Some(text) => {
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?
        }
        None => ControlLimits::for_grid(&grid.0),
    };
    let dc_mode = match dc_mode {
        "lqr" => DcMode::Lqr,
        "constant-max" => DcMode::ConstantMax,
        other => return Err(PyValueError::new_err(format!("unknown dc_mode {other:?}"))),
    };
    let weights = WeightsConfig::default().for_model(&model.0).map_err(err)?;
    let settings = CoordinationSettings {
        dc_mode,
        ..CoordinationSettings::default()
    };
    let trace =
        controller::coordinate_with(&grid.0, &scenario.0, &model.0, &limits, &weights, &settings)
            .map_err(err)?;
    let rec = &trace.record;
    let value = serde_json::json!({
        "summary": trace.summary(&limits),
        "t": (0..rec.len()).map(|k| rec.time(k)).collect::<Vec<_>>(),
        "omega": rec.omega,
        "ul": rec.ul,
        "ud": rec.ud,
        "shed_changes": trace.shed_changes(),
    });
    to_py(py, &value)
}

/// Discounted DARE on `(A, B)` with diagonal weights `q`, `r`; returns `P`,
/// `K`, the residual and the iteration count.
#[pyfunction]
#[pyo3(signature = (a, b, q, r, discount=1.0))]
fn solve_dare<'py>(
    py: Python<'py>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    q: Vec<f64>,
    r: Vec<f64>,
    discount: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let (a, b) = (matrix(&a)?, matrix(&b)?);
    let weights = LqrWeights {
        q2: q,
        r2: r,
        discount,
    };
    let sol = controller::solve_dare(&a, &b, &weights).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "p": rows(&sol.p),
            "k": rows(&sol.k),
            "residual": sol.residual,
            "iterations": sol.iterations,
        }),
    )
}

/// Rounds each amount to the nearest multiple of `d`, ties upward.
#[pyfunction]
fn quantize(amounts: Vec<f64>, d: f64) -> Vec<f64> {
    controller::quantize(&amounts, d)
}

/// 1-based argmin with the lowest-index tie-break.
#[pyfunction]
fn select_mode(values: Vec<f64>) -> Option<usize> {
    robustness::select_mode(&values)
}

/// Reference model with the observables of `like`, fitted on noise-free data.
#[pyfunction]
#[pyo3(signature = (grid, like, n, seed, ridge=koopman::DEFAULT_RIDGE))]
fn fit_oracle(grid: &PyGrid, like: &PyModel, n: usize, seed: u64, ridge: f64) -> PyResult<PyModel> {
    robustness::fit_oracle(&grid.0, &like.0, n, seed, ridge)
        .map(PyModel)
        .map_err(err)
}

/// Mode selections of the learned and oracle models for `scenario`, with the
/// brute-force plant ranking.
#[pyfunction]
#[pyo3(signature = (grid, scenario, learned, oracle, quanta_mw, levels=2))]
fn check_prop1<'py>(
    py: Python<'py>,
    grid: &PyGrid,
    scenario: &PyScenario,
    learned: &PyModel,
    oracle: &PyModel,
    quanta_mw: Vec<f64>,
    levels: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let limits = ControlLimits::for_grid(&grid.0);
    let report = robustness::check_prop1(
        &grid.0,
        &scenario.0,
        &learned.0,
        &oracle.0,
        &quanta_mw,
        levels,
        &limits,
        &Prop1Settings::default(),
    )
    .map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
#[pyo3(name = "cefc")]
fn cefc_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(coordinate, m)?)?;
    m.add_function(wrap_pyfunction!(solve_dare, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(select_mode, m)?)?;
    m.add_function(wrap_pyfunction!(fit_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(check_prop1, m)?)?;
    Ok(())
}
