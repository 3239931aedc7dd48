//! Experiment runner behind the `adiabath` binary.
//!
//! A run reads a JSON [`ExperimentConfig`], resolves every default, executes
//! the experiment and writes `summary.json` plus a table (`table.csv`, or
//! embedded in the summary for the json format). All floats in outputs are
//! decimal strings.

use std::f64::consts::PI;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::adiabatic::{closed_form_states, InstantaneousData};
use crate::density::{Basis, DensityMatrix};
use crate::error::{Error, Result};
use crate::liouville::{self, CoefficientTensor, DissipatorSpec, IntegrateOptions};
use crate::matrix::{self, c};
use crate::model::{HamiltonianFn, Model};
use crate::models::{self, SpinModelParams, SpinReservoir, LOWER, UPPER};
use crate::path::TimeGrid;
use crate::phases::{self, CriterionOptions, PhaseDecomposition, Verdict};
use crate::spectral::{pancharatnam_phase_difference, FrameSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Berry,
    Dephasing,
    Thermal,
    Convergence,
    Criterion,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReservoirKind {
    Closed,
    Dephasing,
    Thermal,
    /// Two-level model whose coherence rate is a total derivative along an open path.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    Superposition,
    Upper,
    Lower,
}

fn default_mu_b() -> f64 {
    1.0
}

fn default_dt_factor() -> f64 {
    0.02
}

fn default_samples() -> usize {
    401
}

fn default_initial() -> InitialState {
    InitialState::Superposition
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_mu_b")]
    pub mu_b: f64,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub omega: Option<f64>,
    #[serde(default)]
    pub k: f64,
    #[serde(default)]
    pub n_bar: f64,
    #[serde(default)]
    pub reservoir: Option<ReservoirKind>,
    /// JSON file with `{"entries": [[i, j, l, m, re, im], ...]}`, a constant
    /// fixed-basis coefficient tensor; relative to the config file.
    #[serde(default)]
    pub tensor_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Driving periods; the sweep list for `convergence`.
    #[serde(default)]
    pub periods: Option<Vec<f64>>,
    #[serde(default)]
    pub t_end: Option<f64>,
    /// `dt <= dt_factor * min(1 / |H|, 2 pi / omega)`.
    #[serde(default = "default_dt_factor")]
    pub dt_factor: f64,
    /// Rows in the output table.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            periods: None,
            t_end: None,
            dt_factor: default_dt_factor(),
            samples: default_samples(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_initial")]
    pub initial: InitialState,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(file) = &cfg.model.tensor_file {
            if file.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                cfg.model.tensor_file = Some(base.join(file));
            }
        }
        Ok(cfg)
    }

    /// Fills every default and checks the experiment-specific constraints.
    pub fn resolve(&self) -> Result<Self> {
        let mut cfg = self.clone();
        let g = &cfg.grid;
        if !(g.dt_factor > 0.0 && g.dt_factor <= liouville::STEP_FACTOR) {
            return Err(Error::Config(format!(
                "grid.dt_factor must lie in (0, {}], got {}",
                liouville::STEP_FACTOR,
                g.dt_factor
            )));
        }
        if g.samples < 2 {
            return Err(Error::Config(format!(
                "grid.samples must be >= 2, got {}",
                g.samples
            )));
        }
        if let Some(periods) = &g.periods {
            if periods.is_empty() || periods.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                return Err(Error::Config(
                    "grid.periods must be a non-empty list of positive numbers".into(),
                ));
            }
        }
        let reservoir = cfg.default_reservoir()?;
        cfg.model.reservoir = Some(reservoir);
        if reservoir != ReservoirKind::Synthetic && cfg.model.theta.is_none() {
            return Err(Error::Config(format!(
                "model.theta is required for the {:?} experiment",
                cfg.experiment
            )));
        }
        if cfg.experiment == ExperimentKind::Custom && cfg.model.tensor_file.is_none() {
            return Err(Error::Config(
                "model.tensor_file is required for the custom experiment".into(),
            ));
        }
        if cfg.experiment != ExperimentKind::Custom && cfg.model.tensor_file.is_some() {
            return Err(Error::Config(
                "model.tensor_file is only used by the custom experiment".into(),
            ));
        }
        if cfg.experiment == ExperimentKind::Convergence {
            let periods = cfg.grid.periods.clone().unwrap_or_default();
            if periods.len() < 3 {
                return Err(Error::Config(format!(
                    "convergence needs at least 3 grid.periods, got {}",
                    periods.len()
                )));
            }
            if cfg.model.omega.is_some() {
                return Err(Error::Config(
                    "model.omega is set by grid.periods in the convergence experiment".into(),
                ));
            }
            if cfg.grid.t_end.is_some() {
                return Err(Error::Config(
                    "convergence runs one period per entry; drop grid.t_end".into(),
                ));
            }
        } else {
            let omega = match (cfg.model.omega, cfg.grid.periods.as_deref()) {
                (Some(w), None) => w,
                (None, Some([t])) => 2.0 * PI / t,
                (Some(w), Some([t])) => {
                    if ((2.0 * PI / t) - w).abs() > 1e-12 * w.abs() {
                        return Err(Error::Config(format!(
                            "model.omega = {w} disagrees with grid.periods = [{t}]"
                        )));
                    }
                    w
                }
                (_, Some(list)) => {
                    return Err(Error::Config(format!(
                        "{:?} takes a single period, got {}",
                        cfg.experiment,
                        list.len()
                    )))
                }
                (None, None) => match reservoir {
                    ReservoirKind::Synthetic => 2.0 * PI / 100.0,
                    _ if cfg.experiment == ExperimentKind::Berry => 2.0 * PI / 1e4,
                    _ => 0.01,
                },
            };
            if !(omega.is_finite() && omega > 0.0) {
                return Err(Error::Config(format!(
                    "model.omega must be positive, got {omega}"
                )));
            }
            cfg.model.omega = Some(omega);
            cfg.grid.periods = Some(vec![2.0 * PI / omega]);
            let t_end = cfg.grid.t_end.unwrap_or(2.0 * PI / omega);
            if !(t_end.is_finite() && t_end > 0.0) {
                return Err(Error::Config(format!(
                    "grid.t_end must be positive, got {t_end}"
                )));
            }
            cfg.grid.t_end = Some(t_end);
        }
        if cfg.output.format.is_none() {
            cfg.output.format = Some(OutputFormat::Csv);
        }
        cfg.check_params()?;
        Ok(cfg)
    }

    fn default_reservoir(&self) -> Result<ReservoirKind> {
        let given = self.model.reservoir;
        let fixed = match self.experiment {
            ExperimentKind::Dephasing => Some(ReservoirKind::Dephasing),
            ExperimentKind::Thermal => Some(ReservoirKind::Thermal),
            ExperimentKind::Custom => Some(ReservoirKind::Closed),
            _ => None,
        };
        if let (Some(f), Some(g)) = (fixed, given) {
            if f != g {
                return Err(Error::Config(format!(
                    "model.reservoir = {g:?} conflicts with the {:?} experiment",
                    self.experiment
                )));
            }
        }
        let r = fixed.or(given).unwrap_or(match self.experiment {
            ExperimentKind::Criterion if self.model.n_bar > 0.0 => ReservoirKind::Thermal,
            ExperimentKind::Criterion => ReservoirKind::Dephasing,
            _ => ReservoirKind::Closed,
        });
        if r == ReservoirKind::Synthetic && self.experiment != ExperimentKind::Criterion {
            return Err(Error::Config(
                "the synthetic model is only available to the criterion experiment".into(),
            ));
        }
        Ok(r)
    }

    fn check_params(&self) -> Result<()> {
        let r = self.model.reservoir.expect("resolved");
        if r == ReservoirKind::Synthetic {
            return Ok(());
        }
        let omegas: Vec<f64> = match self.experiment {
            ExperimentKind::Convergence => self
                .grid
                .periods
                .as_ref()
                .expect("checked")
                .iter()
                .map(|t| 2.0 * PI / t)
                .collect(),
            _ => vec![self.model.omega.expect("resolved")],
        };
        for w in omegas {
            let p = self.spin_params(w)?;
            if r == ReservoirKind::Dephasing && p.n_bar != 0.0 {
                return Err(Error::Param(format!(
                    "the dephasing model requires model.n_bar = 0, got {}",
                    p.n_bar
                )));
            }
            if r == ReservoirKind::Closed && self.experiment != ExperimentKind::Custom && p.k != 0.0
            {
                return Err(Error::Config(format!(
                    "model.k = {} has no effect on a closed system; set model.reservoir",
                    p.k
                )));
            }
            if matches!(
                self.experiment,
                ExperimentKind::Dephasing | ExperimentKind::Thermal
            ) {
                p.check_oracle_regime()?;
            }
        }
        Ok(())
    }

    fn spin_params(&self, omega: f64) -> Result<SpinModelParams> {
        SpinModelParams::new(
            self.model.mu_b,
            self.model.theta.expect("resolved"),
            omega,
            self.model.k,
            self.model.n_bar,
        )
    }
}

/// Plot-ready table; all cells are already formatted.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: Map<String, Value>,
    pub table: Table,
}

/// Shortest round-trip decimal form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn num(x: f64) -> Value {
    Value::String(fmt_f64(x))
}

fn stringify_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => Value::String(fmt_f64(n.as_f64().expect("f64"))),
        Value::Array(a) => Value::Array(a.into_iter().map(stringify_floats).collect()),
        Value::Object(o) => Value::Object(
            o.into_iter()
                .map(|(k, v)| (k, stringify_floats(v)))
                .collect(),
        ),
        other => other,
    }
}

fn initial_state(kind: InitialState) -> Result<DensityMatrix> {
    match kind {
        InitialState::Superposition => {
            DensityMatrix::from_bloch(1.0, 0.0, 0.0, Basis::Instantaneous)
        }
        InitialState::Upper => {
            DensityMatrix::with_basis(matrix::diag_real(&[0.0, 1.0]), Basis::Instantaneous)
        }
        InitialState::Lower => {
            DensityMatrix::with_basis(matrix::diag_real(&[1.0, 0.0]), Basis::Instantaneous)
        }
    }
}

/// Integrated trajectory, recorded on `samples` points, with its frames and
/// closed-form counterpart.
struct Run {
    grid: TimeGrid,
    states_h: Vec<DensityMatrix>,
    closed_form: Vec<DensityMatrix>,
    frames: FrameSeries,
    decomposition: Vec<PhaseDecomposition>,
}

fn simulate(
    model: &Model,
    rho0_h: &DensityMatrix,
    t_end: f64,
    dt_max: f64,
    samples: usize,
) -> Result<Run> {
    let intervals = samples - 1;
    let stride = (t_end / dt_max / intervals as f64 * (1.0 - 1e-12))
        .ceil()
        .max(1.0) as usize;
    let fine = TimeGrid::with_samples(0.0, t_end, intervals * stride + 1)?;
    let grid = fine.coarsened(stride)?;
    let data = InstantaneousData::build(model, &grid)?;
    let frames = data.frames().clone();
    let rho0 = rho0_h.conjugated(&frames.spectrum(0).frame.adjoint(), Basis::Fixed);
    let traj = liouville::integrate_with(
        model,
        &rho0,
        &fine,
        IntegrateOptions {
            record_stride: stride,
            check_step: true,
        },
    )?;
    let traj = liouville::to_instantaneous_basis(&traj, &frames)?;
    let decomposition = phases::decompose_phase_series(&traj, &frames, UPPER, LOWER)?;
    let closed_form = closed_form_states(&data, rho0_h)?;
    Ok(Run {
        grid,
        states_h: traj.states_instant.expect("transformed"),
        closed_form,
        frames,
        decomposition,
    })
}

fn dt_bound(mu_b: f64, omega: f64, factor: f64) -> f64 {
    factor * (1.0 / mu_b).min(2.0 * PI / omega)
}

fn spin_model_for(p: &SpinModelParams, r: ReservoirKind) -> Result<Model> {
    match r {
        ReservoirKind::Closed => models::spin_closed_model(p),
        ReservoirKind::Dephasing => models::spin_dephasing_model(p),
        ReservoirKind::Thermal => models::spin_thermal_model(p),
        ReservoirKind::Synthetic => unreachable!("synthetic model is not a spin model"),
    }
}

fn trajectory_table(run: &Run) -> Table {
    let n = run.states_h[0].dim();
    let mut columns = vec!["t".to_string()];
    for i in 0..n {
        for j in 0..n {
            columns.push(format!("rho_{i}_{j}_re"));
            columns.push(format!("rho_{i}_{j}_im"));
        }
    }
    columns.extend(
        [
            "dynamical",
            "geometric",
            "dissipative_log_re",
            "dissipative_log_im",
            "unwrap_count",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let rows = run
        .states_h
        .iter()
        .zip(&run.decomposition)
        .enumerate()
        .map(|(m, (rho, d))| {
            let mut row = vec![fmt_f64(run.grid.time(m))];
            for i in 0..n {
                for j in 0..n {
                    let z = rho.get(i, j);
                    row.push(fmt_f64(z.re));
                    row.push(fmt_f64(z.im));
                }
            }
            row.push(fmt_f64(d.dynamical));
            row.push(fmt_f64(d.geometric));
            row.push(fmt_f64(d.dissipative_log.re));
            row.push(fmt_f64(d.dissipative_log.im));
            row.push(d.unwrap_count.to_string());
            row
        })
        .collect();
    Table { columns, rows }
}

fn max_elementwise(a: &[DensityMatrix], b: &[DensityMatrix]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| matrix::max_abs(&(x.matrix() - y.matrix())))
        .fold(0.0, f64::max)
}

fn population_error(a: &[DensityMatrix], b: &[DensityMatrix]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.get(UPPER, UPPER).re - y.get(UPPER, UPPER).re).abs())
        .fold(0.0, f64::max)
}

fn decomposition_summary(summary: &mut Map<String, Value>, d: &PhaseDecomposition) {
    summary.insert("dynamical_phase".into(), num(d.dynamical));
    summary.insert("geometric_phase".into(), num(d.geometric));
    summary.insert("dissipative_log_re".into(), num(d.dissipative_log.re));
    summary.insert("dissipative_log_im".into(), num(d.dissipative_log.im));
    summary.insert("unwrap_count".into(), json!(d.unwrap_count));
}

fn run_spin_trajectory(
    cfg: &ExperimentConfig,
    model: &Model,
    p: &SpinModelParams,
) -> Result<(Run, Map<String, Value>)> {
    let t_end = cfg.grid.t_end.expect("resolved");
    let rho0_h = initial_state(cfg.initial)?;
    let run = simulate(
        model,
        &rho0_h,
        t_end,
        dt_bound(p.mu_b, p.omega, cfg.grid.dt_factor),
        cfg.grid.samples,
    )?;
    let mut s = Map::new();
    let last = *run.decomposition.last().expect("non-empty");
    decomposition_summary(&mut s, &last);
    s.insert("lambda1".into(), num(p.lambda1()));
    s.insert("big_lambda".into(), num(p.big_lambda()));
    s.insert(
        "max_population_deviation".into(),
        num(run
            .states_h
            .iter()
            .map(|r| (r.get(UPPER, UPPER).re - rho0_h.get(UPPER, UPPER).re).abs())
            .fold(0.0, f64::max)),
    );
    s.insert(
        "max_closed_form_error".into(),
        num(max_elementwise(&run.states_h, &run.closed_form)),
    );
    let floor = p.omega / p.mu_b;
    s.insert("real_correction_floor".into(), num(floor));
    s.insert(
        "real_correction".into(),
        json!(phases::real_correction_detector(&last, floor)),
    );
    Ok((run, s))
}

fn berry(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.spin_params(cfg.model.omega.expect("resolved"))?;
    let model = spin_model_for(&p, cfg.model.reservoir.expect("resolved"))?;
    let (run, mut s) = run_spin_trajectory(cfg, &model, &p)?;
    let t_end = cfg.grid.t_end.expect("resolved");
    let last = run.decomposition.last().expect("non-empty");
    let period = p.period();
    s.insert(
        "geometric_phase_per_period".into(),
        num(matrix::wrap_angle(last.geometric * period / t_end)),
    );
    s.insert(
        "expected_geometric_phase_per_period".into(),
        num(matrix::wrap_angle(-2.0 * PI * (1.0 - p.theta.cos()))),
    );
    if (t_end - period).abs() <= 1e-9 * period {
        s.insert(
            "pancharatnam_phase".into(),
            num(pancharatnam_phase_difference(&run.frames, UPPER, LOWER)?),
        );
    }
    Ok(Outcome {
        summary: s,
        table: trajectory_table(&run),
    })
}

fn oracle_experiment(cfg: &ExperimentConfig, thermal: bool) -> Result<Outcome> {
    let p = cfg.spin_params(cfg.model.omega.expect("resolved"))?;
    p.check_oracle_regime()?;
    let model = if thermal {
        models::spin_thermal_model(&p)?
    } else {
        models::spin_dephasing_model(&p)?
    };
    let (run, mut s) = run_spin_trajectory(cfg, &model, &p)?;
    let rho0_h = &run.states_h[0];
    let oracle = run
        .grid
        .times()
        .map(|t| {
            if thermal {
                models::thermal_oracle(&p, rho0_h, t)
            } else {
                models::dephasing_oracle(&p, rho0_h, t)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    s.insert(
        "max_oracle_error".into(),
        num(max_elementwise(&run.states_h, &oracle)),
    );
    s.insert(
        "oracle_population_error".into(),
        num(population_error(&run.states_h, &oracle)),
    );
    let g = if thermal { 1.0 + 2.0 * p.n_bar } else { 1.0 };
    s.insert("coherence_decay_rate".into(), num(p.k * g));
    if thermal {
        s.insert("population_relaxation_rate".into(), num(2.0 * p.k * g));
        s.insert("stationary_upper_population".into(), num(p.n_bar / g));
    }
    Ok(Outcome {
        summary: s,
        table: trajectory_table(&run),
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// One row of a convergence sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub period: f64,
    pub population_error: f64,
    pub sup_norm_error: f64,
}

fn convergence_point(cfg: &ExperimentConfig, period: f64) -> Result<ConvergencePoint> {
    let p = cfg.spin_params(2.0 * PI / period)?;
    let model = spin_model_for(&p, cfg.model.reservoir.expect("resolved"))?;
    let rho0_h = initial_state(cfg.initial)?;
    let run = simulate(
        &model,
        &rho0_h,
        period,
        dt_bound(p.mu_b, p.omega, cfg.grid.dt_factor),
        cfg.grid.samples,
    )?;
    Ok(ConvergencePoint {
        period,
        population_error: population_error(&run.states_h, &run.closed_form),
        sup_norm_error: max_elementwise(&run.states_h, &run.closed_form),
    })
}

/// Runs every period of the sweep; results are ordered as `grid.periods`.
pub fn convergence_sweep(cfg: &ExperimentConfig) -> Result<Vec<ConvergencePoint>> {
    let periods = cfg.grid.periods.clone().unwrap_or_default();
    if periods.len() < 3 {
        return Err(Error::Config(format!(
            "convergence needs at least 3 grid.periods, got {}",
            periods.len()
        )));
    }
    periods
        .par_iter()
        .map(|&t| convergence_point(cfg, t))
        .collect()
}

fn convergence(cfg: &ExperimentConfig) -> Result<Outcome> {
    let points = convergence_sweep(cfg)?;
    let t: Vec<f64> = points.iter().map(|p| p.period).collect();
    let pop: Vec<f64> = points.iter().map(|p| p.population_error).collect();
    let sup: Vec<f64> = points.iter().map(|p| p.sup_norm_error).collect();
    let mut s = Map::new();
    s.insert("slope".into(), num(loglog_slope(&t, &pop)));
    s.insert("sup_norm_slope".into(), num(loglog_slope(&t, &sup)));
    let table = Table {
        columns: vec![
            "T".into(),
            "population_error".into(),
            "sup_norm_error".into(),
        ],
        rows: points
            .iter()
            .map(|p| {
                vec![
                    fmt_f64(p.period),
                    fmt_f64(p.population_error),
                    fmt_f64(p.sup_norm_error),
                ]
            })
            .collect(),
    };
    Ok(Outcome { summary: s, table })
}

fn criterion(cfg: &ExperimentConfig) -> Result<Outcome> {
    let period = 2.0 * PI / cfg.model.omega.expect("resolved");
    let reservoir = cfg.model.reservoir.expect("resolved");
    let schedules = phases::default_schedules(period);
    let (verdict, pair) = if reservoir == ReservoirKind::Synthetic {
        let path = phases::synthetic_path(period)?;
        let family = phases::synthetic_geometric_model;
        (
            phases::geometric_condition_check(
                &family,
                &path,
                &schedules,
                0,
                1,
                CriterionOptions::default(),
            )?,
            (0, 1),
        )
    } else {
        let p = cfg.spin_params(2.0 * PI / period)?;
        let path = models::precession_path(&p)?;
        let r = match reservoir {
            ReservoirKind::Closed => SpinReservoir::Closed,
            ReservoirKind::Dephasing => SpinReservoir::Dephasing,
            _ => SpinReservoir::Thermal,
        };
        let family = move |path| models::spin_model_on_path(&p, r, path);
        (
            phases::geometric_condition_check(
                &family,
                &path,
                &schedules,
                UPPER,
                LOWER,
                CriterionOptions::default(),
            )?,
            (UPPER, LOWER),
        )
    };
    let mut s = Map::new();
    let name = match verdict.verdict {
        Verdict::Geometric => "Geometric",
        Verdict::TimeDependent => "TimeDependent",
        Verdict::NoDissipativePhase => "NoDissipativePhase",
    };
    s.insert("verdict".into(), json!(name));
    s.insert("pair".into(), json!([pair.0, pair.1]));
    s.insert("spread".into(), num(verdict.spread));
    s.insert("geo_tol".into(), num(verdict.geo_tol));
    let labels = ["linear", "perturbed", "linear_double"];
    let table = Table {
        columns: vec![
            "schedule".into(),
            "period".into(),
            "residual_re".into(),
            "residual_im".into(),
            "geometric".into(),
        ],
        rows: schedules
            .iter()
            .zip(labels)
            .zip(verdict.residuals.iter().zip(&verdict.geometric))
            .map(|((run, label), (r, g))| {
                vec![
                    label.to_string(),
                    fmt_f64(run.period),
                    fmt_f64(r.re),
                    fmt_f64(r.im),
                    fmt_f64(*g),
                ]
            })
            .collect(),
    };
    Ok(Outcome { summary: s, table })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorFile {
    entries: Vec<[f64; 6]>,
}

/// Reads a constant two-level coefficient tensor.
pub fn read_tensor_file(path: &Path) -> Result<CoefficientTensor> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read tensor file {}: {e}", path.display())))?;
    let file: TensorFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("tensor file {}: {e}", path.display())))?;
    let mut tensor = CoefficientTensor::zeros(2);
    for e in &file.entries {
        let idx: Vec<usize> = e[..4].iter().map(|&x| x as usize).collect();
        if e[..4]
            .iter()
            .any(|&x| x.fract() != 0.0 || !(0.0..2.0).contains(&x))
        {
            return Err(Error::Config(format!(
                "tensor index {:?} is not in {{0, 1}}",
                &e[..4]
            )));
        }
        tensor.set(idx[0], idx[1], idx[2], idx[3], c(e[4], e[5]));
    }
    Ok(tensor)
}

fn custom(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.spin_params(cfg.model.omega.expect("resolved"))?;
    let tensor = read_tensor_file(cfg.model.tensor_file.as_ref().expect("resolved"))?;
    let mu_b = p.mu_b;
    let h: HamiltonianFn = std::sync::Arc::new(move |_, k| models::lab_hamiltonian(mu_b, k));
    let model = Model::new(
        2,
        h,
        DissipatorSpec::constant_tensor(tensor),
        models::precession_path(&p)?,
    )?;
    let (run, s) = run_spin_trajectory(cfg, &model, &p)?;
    Ok(Outcome {
        summary: s,
        table: trajectory_table(&run),
    })
}

/// Executes a resolved config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut outcome = match cfg.experiment {
        ExperimentKind::Berry => berry(cfg)?,
        ExperimentKind::Dephasing => oracle_experiment(cfg, false)?,
        ExperimentKind::Thermal => oracle_experiment(cfg, true)?,
        ExperimentKind::Convergence => convergence(cfg)?,
        ExperimentKind::Criterion => criterion(cfg)?,
        ExperimentKind::Custom => custom(cfg)?,
    };
    let echoed = serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?;
    outcome
        .summary
        .insert("config".into(), stringify_floats(echoed));
    outcome.summary.insert(
        "experiment".into(),
        serde_json::to_value(cfg.experiment).expect("enum serializes"),
    );
    Ok(outcome)
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Output(format!("{}: {e}", path.display()))
}

/// Writes `summary.json` and, for csv output, `table.csv` into `dir`.
pub fn write_outcome(outcome: &Outcome, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| output_error(dir, e))?;
    let mut summary = outcome.summary.clone();
    let mut written = Vec::new();
    match format {
        OutputFormat::Csv => {
            let path = dir.join("table.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| output_error(&path, e))?;
            w.write_record(&outcome.table.columns)
                .map_err(|e| output_error(&path, e))?;
            for row in &outcome.table.rows {
                w.write_record(row).map_err(|e| output_error(&path, e))?;
            }
            w.flush().map_err(|e| output_error(&path, e))?;
            written.push(path);
        }
        OutputFormat::Json => {
            summary.insert(
                "table".into(),
                json!({ "columns": outcome.table.columns, "rows": outcome.table.rows }),
            );
        }
    }
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&Value::Object(summary)).expect("json serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| output_error(&path, e))?;
    written.insert(0, path);
    Ok(written)
}

#[derive(Debug, Parser)]
#[command(
    name = "adiabath",
    version,
    about = "Adiabatic-limit open-system experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write its outputs.
    Run {
        config: PathBuf,
        /// Output directory (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for sweeps.
        #[arg(long)]
        workers: Option<usize>,
        /// Table format (overrides output.format).
        #[arg(long, value_enum)]
        format: Option<OutputFormat>,
    },
    /// Parse and resolve a config, then print it.
    Validate { config: PathBuf },
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_file(&config)?.resolve()?;
            let echoed = stringify_floats(serde_json::to_value(&cfg).expect("config serializes"));
            println!(
                "{}",
                serde_json::to_string_pretty(&echoed).expect("json serializes")
            );
            Ok(())
        }
        Command::Run {
            config,
            out,
            workers,
            format,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(dir) = out {
                cfg.output.dir = Some(dir);
            }
            if let Some(f) = format {
                cfg.output.format = Some(f);
            }
            if cfg.output.dir.is_none() {
                cfg.output.dir = Some(PathBuf::from("adiabath_out"));
            }
            let cfg = cfg.resolve()?;
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(n) = workers {
                if n == 0 {
                    return Err(Error::Config("--workers must be >= 1".into()));
                }
                pool = pool.num_threads(n);
            }
            let pool = pool
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
            let outcome = pool.install(|| run_experiment(&cfg))?;
            let dir = cfg.output.dir.clone().expect("resolved");
            for path in write_outcome(&outcome, &dir, cfg.output.format.expect("resolved"))? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
