//! Python bindings for the adiabath simulator.

use std::f64::consts::PI;

use adiabath::adiabatic::{closed_form_states, InstantaneousData};
use adiabath::liouville::{self, transform_coefficients, IntegrateOptions};
use adiabath::models::{self, SpinModelParams, SpinReservoir, LOWER, UPPER};
use adiabath::phases::{self, CriterionOptions, Verdict};
use adiabath::spectral::{self, default_gap_tol, eigendecompose_at};
use adiabath::{cli, Basis, CMatrix, DensityMatrix as CoreDensity, Error, Model, TimeGrid, C64};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    if e.exit_code() == 2 {
        PyValueError::new_err(e.to_string())
    } else {
        PyArithmeticError::new_err(e.to_string())
    }
}

fn invalid(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &CMatrix) -> Vec<Vec<C64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn from_rows(rows: &[Vec<C64>]) -> PyResult<CMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn parse_basis(name: &str) -> PyResult<Basis> {
    match name {
        "fixed" => Ok(Basis::Fixed),
        "rotating" => Ok(Basis::Rotating),
        "diagonal" => Ok(Basis::Diagonal),
        "instantaneous" => Ok(Basis::Instantaneous),
        other => Err(PyValueError::new_err(format!("unknown basis {other:?}"))),
    }
}

fn basis_name(b: Basis) -> &'static str {
    match b {
        Basis::Fixed => "fixed",
        Basis::Rotating => "rotating",
        Basis::Diagonal => "diagonal",
        Basis::Instantaneous => "instantaneous",
    }
}

fn parse_reservoir(name: &str) -> PyResult<SpinReservoir> {
    match name {
        "closed" => Ok(SpinReservoir::Closed),
        "dephasing" => Ok(SpinReservoir::Dephasing),
        "thermal" => Ok(SpinReservoir::Thermal),
        other => Err(PyValueError::new_err(format!("unknown reservoir {other:?}"))),
    }
}

/// Validated density matrix with a basis tag.
#[pyclass(name = "DensityMatrix", module = "adiabath_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDensityMatrix {
    inner: CoreDensity,
}

#[pymethods]
impl PyDensityMatrix {
    #[new]
    #[pyo3(signature = (rows, basis = "fixed"))]
    fn new(rows: Vec<Vec<C64>>, basis: &str) -> PyResult<Self> {
        let inner = CoreDensity::with_basis(from_rows(&rows)?, parse_basis(basis)?).map_err(invalid)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (x, y, z, basis = "instantaneous"))]
    fn from_bloch(x: f64, y: f64, z: f64, basis: &str) -> PyResult<Self> {
        let inner = CoreDensity::from_bloch(x, y, z, parse_basis(basis)?).map_err(invalid)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn basis(&self) -> &'static str {
        basis_name(self.inner.basis())
    }

    fn matrix(&self) -> Vec<Vec<C64>> {
        rows(self.inner.matrix())
    }

    fn get(&self, i: usize, j: usize) -> PyResult<C64> {
        if i >= self.inner.dim() || j >= self.inner.dim() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(i, j))
    }

    fn populations(&self) -> Vec<f64> {
        self.inner.populations()
    }

    fn purity(&self) -> f64 {
        self.inner.purity()
    }

    fn __repr__(&self) -> String {
        format!("DensityMatrix(dim={}, basis={})", self.inner.dim(), basis_name(self.inner.basis()))
    }
}

/// Spin-1/2 in a precessing field with a closed, dephasing or thermal reservoir.
#[pyclass(name = "SpinModel", module = "adiabath_py", frozen)]
pub struct PySpinModel {
    params: SpinModelParams,
    reservoir: SpinReservoir,
    model: Model,
}

#[pymethods]
impl PySpinModel {
    #[new]
    #[pyo3(signature = (theta, omega, k = 0.0, n_bar = 0.0, reservoir = "closed", mu_b = 1.0))]
    fn new(theta: f64, omega: f64, k: f64, n_bar: f64, reservoir: &str, mu_b: f64) -> PyResult<Self> {
        let params = SpinModelParams::new(mu_b, theta, omega, k, n_bar).map_err(to_py)?;
        let reservoir = parse_reservoir(reservoir)?;
        let model = models::spin_model(&params, reservoir).map_err(to_py)?;
        Ok(Self {
            params,
            reservoir,
            model,
        })
    }

    #[getter]
    fn period(&self) -> f64 {
        self.params.period()
    }

    #[getter]
    fn lambda1(&self) -> f64 {
        self.params.lambda1()
    }

    #[getter]
    fn big_lambda(&self) -> f64 {
        self.params.big_lambda()
    }

    fn hamiltonian(&self, t: f64) -> Vec<Vec<C64>> {
        rows(&self.model.hamiltonian(t))
    }

    /// `c(i, j, l, m)` in the instantaneous eigenbasis at `t`, nested as `[i][j][l][m]`.
    fn coefficients(&self, t: f64) -> PyResult<Vec<Vec<Vec<Vec<C64>>>>> {
        let h = self.model.hamiltonian(t);
        let spectrum = eigendecompose_at(&h, t, default_gap_tol(&h)).map_err(to_py)?;
        let tensor = transform_coefficients(&self.model, &spectrum).map_err(to_py)?.tensor;
        Ok((0..2)
            .map(|i| {
                (0..2)
                    .map(|j| (0..2).map(|l| (0..2).map(|m| tensor.get(i, j, l, m)).collect()).collect())
                    .collect()
            })
            .collect())
    }

    /// Adiabatic closed form for the dephasing or thermal reservoir.
    fn oracle(&self, rho0: &PyDensityMatrix, t: f64) -> PyResult<PyDensityMatrix> {
        let inner = match self.reservoir {
            SpinReservoir::Dephasing => models::dephasing_oracle(&self.params, &rho0.inner, t),
            SpinReservoir::Thermal => models::thermal_oracle(&self.params, &rho0.inner, t),
            SpinReservoir::Closed => {
                return Err(PyValueError::new_err("the closed model has no oracle"));
            }
        }
        .map_err(to_py)?;
        Ok(PyDensityMatrix { inner })
    }

    /// Integrates from `rho0` (instantaneous basis) and returns the recorded
    /// instantaneous-basis states, the closed-form states and the phase
    /// decomposition of the upper-lower coherence.
    #[pyo3(signature = (rho0, t_end, samples = 401, dt_factor = 0.02))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        rho0: &PyDensityMatrix,
        t_end: f64,
        samples: usize,
        dt_factor: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        if samples < 2 || !(t_end > 0.0) || !(dt_factor > 0.0 && dt_factor <= 0.05) {
            return Err(PyValueError::new_err(
                "need samples >= 2, t_end > 0 and dt_factor in (0, 0.05]",
            ));
        }
        let dt_max = dt_factor * (1.0 / self.params.mu_b).min(2.0 * PI / self.params.omega);
        let intervals = samples - 1;
        let stride = (t_end / dt_max / intervals as f64 * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let run = || -> adiabath::Result<_> {
            let fine = TimeGrid::with_samples(0.0, t_end, intervals * stride + 1)?;
            let grid = fine.coarsened(stride)?;
            let data = InstantaneousData::build(&self.model, &grid)?;
            let frames = data.frames().clone();
            let start = rho0.inner.conjugated(&frames.spectrum(0).frame.adjoint(), Basis::Fixed);
            let traj = liouville::integrate_with(
                &self.model,
                &start,
                &fine,
                IntegrateOptions {
                    record_stride: stride,
                    check_step: true,
                },
            )?;
            let traj = liouville::to_instantaneous_basis(&traj, &frames)?;
            let decomposition = phases::decompose_phase_series(&traj, &frames, UPPER, LOWER)?;
            let closed = closed_form_states(&data, &rho0.inner)?;
            Ok((grid, traj, decomposition, closed))
        };
        if rho0.inner.basis() != Basis::Instantaneous || rho0.inner.dim() != 2 {
            return Err(PyValueError::new_err("rho0 must be a 2x2 instantaneous-basis state"));
        }
        let (grid, traj, decomposition, closed) = py.detach(run).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("t", grid.times().collect::<Vec<f64>>())?;
        let states: Vec<Vec<Vec<C64>>> = traj
            .states_instant
            .as_ref()
            .expect("transformed")
            .iter()
            .map(|s| rows(s.matrix()))
            .collect();
        out.set_item("states", states)?;
        out.set_item("closed_form", closed.iter().map(|s| rows(s.matrix())).collect::<Vec<_>>())?;
        out.set_item("dynamical", decomposition.iter().map(|d| d.dynamical).collect::<Vec<_>>())?;
        out.set_item("geometric", decomposition.iter().map(|d| d.geometric).collect::<Vec<_>>())?;
        out.set_item(
            "dissipative_log",
            decomposition.iter().map(|d| d.dissipative_log).collect::<Vec<_>>(),
        )?;
        out.set_item("unwrap_count", decomposition.iter().map(|d| d.unwrap_count).collect::<Vec<_>>())?;
        Ok(out)
    }

    /// Geometric phase difference of the upper and lower levels over one
    /// period, from frames sampled on `samples` points.
    #[pyo3(signature = (samples = 20001))]
    fn geometric_phase(&self, samples: usize) -> PyResult<f64> {
        let grid = TimeGrid::with_samples(0.0, self.params.period(), samples).map_err(to_py)?;
        let frames = phases::frames_for(&self.model, &grid).map_err(to_py)?;
        spectral::geometric_phase_difference(&frames, UPPER, LOWER).map_err(to_py)
    }

    /// Runs the geometric-condition check on the upper-lower coherence.
    fn criterion<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let p = self.params;
        let r = self.reservoir;
        let path = models::precession_path(&p).map_err(to_py)?;
        let family = move |path| models::spin_model_on_path(&p, r, path);
        let schedules = phases::default_schedules(p.period());
        let v = py
            .detach(|| {
                phases::geometric_condition_check(&family, &path, &schedules, UPPER, LOWER, CriterionOptions::default())
            })
            .map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item(
            "verdict",
            match v.verdict {
                Verdict::Geometric => "Geometric",
                Verdict::TimeDependent => "TimeDependent",
                Verdict::NoDissipativePhase => "NoDissipativePhase",
            },
        )?;
        out.set_item("residuals", v.residuals)?;
        out.set_item("spread", v.spread)?;
        out.set_item("geo_tol", v.geo_tol)?;
        out.set_item("geometric", v.geometric)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "SpinModel(theta={}, omega={}, k={}, n_bar={}, mu_b={})",
            self.params.theta, self.params.omega, self.params.k, self.params.n_bar, self.params.mu_b
        )
    }
}

/// Runs an experiment config given as JSON text; returns the summary as JSON text.
#[pyfunction]
fn run_config(py: Python<'_>, text: &str) -> PyResult<String> {
    let cfg = cli::ExperimentConfig::from_json(text).map_err(to_py)?;
    let cfg = cfg.resolve().map_err(to_py)?;
    let outcome = py.detach(|| cli::run_experiment(&cfg)).map_err(to_py)?;
    serde_json::to_string_pretty(&outcome.summary).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn adiabath_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDensityMatrix>()?;
    m.add_class::<PySpinModel>()?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add("UPPER", UPPER)?;
    m.add("LOWER", LOWER)?;
    Ok(())
}
