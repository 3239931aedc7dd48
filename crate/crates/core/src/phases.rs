//! Phase bookkeeping for instantaneous-basis coherences and the
//! geometric-versus-time-dependent test for the dissipative part.
//!
//! ```text
//! rho_ij(t) / rho_ij(0) = exp(i dynamical + i geometric + dissipative_log)
//! ```

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::adiabatic::{coherence_solution_uncoupled, InstantaneousData};
use crate::density::{Basis, DensityMatrix};
use crate::error::{Error, Result};
use crate::liouville::{self, CoefficientTensor, DissipatorSpec, IntegrateOptions, Trajectory};
use crate::matrix::{self, c, cis, CVector, C64};
use crate::model::{HamiltonianFn, Model};
use crate::path::{cumulative_trapezoid, ParameterPath, Schedule, TimeGrid};
use crate::spectral::{geometric_phase_series, FrameSeries, GaugePolicy};

/// Smallest `|rho_ij|` for which a phase is defined.
pub const PHASE_FLOOR: f64 = 1e-10;
/// Adjacent residual phases may differ by at most `pi (1 - UNWRAP_MARGIN)`.
pub const UNWRAP_MARGIN: f64 = 1e-3;
pub const GEO_TOL_FLOOR: f64 = 1e-9;
pub const GEO_TOL_RELATIVE: f64 = 1e-4;
/// Default threshold below which a dissipative log counts as absent.
pub const DISSIPATIVE_FLOOR: f64 = 1e-9;
/// Largest admissible `max |c| / min gap`.
pub const WEAK_RATIO_LIMIT: f64 = 0.05;
/// Smallest admissible `T * min gap`.
pub const MIN_ADIABATICITY: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseDecomposition {
    pub pair: (usize, usize),
    pub time: f64,
    /// `-int (E_i - E_j) dt`
    pub dynamical: f64,
    /// `int (a_j - a_i) dt`
    pub geometric: f64,
    /// Real part: log of the magnitude ratio. Imaginary part: phase left
    /// after removing the dynamical and geometric parts.
    pub dissipative_log: C64,
    /// Times the principal argument of `rho_ij(t) / rho_ij(0)` crossed the branch cut.
    pub unwrap_count: i64,
}

impl PhaseDecomposition {
    /// Unwrapped `arg(rho_ij(t) / rho_ij(0))`.
    pub fn total_phase(&self) -> f64 {
        self.dynamical + self.geometric + self.dissipative_log.im
    }

    /// `rho_ij(t) / rho_ij(0)` rebuilt from the three factors.
    pub fn ratio(&self) -> C64 {
        cis(self.dynamical + self.geometric) * self.dissipative_log.exp()
    }
}

/// Decomposes a sampled coherence given the dynamical and geometric phases
/// on the same samples. Samples are demodulated by the known phases before
/// unwrapping, so coarse sampling of fast dynamical rotation is harmless.
pub fn decompose_samples(
    pair: (usize, usize),
    grid: &TimeGrid,
    values: &[C64],
    dynamical: &[f64],
    geometric: &[f64],
) -> Result<Vec<PhaseDecomposition>> {
    let n = grid.samples();
    if values.len() != n || dynamical.len() != n || geometric.len() != n {
        return Err(Error::GridMismatch(format!(
            "{} samples on the grid, got {} values, {} dynamical, {} geometric",
            n,
            values.len(),
            dynamical.len(),
            geometric.len()
        )));
    }
    for (m, v) in values.iter().enumerate() {
        if !(v.norm() >= PHASE_FLOOR) {
            return Err(Error::PhaseUndefined {
                sample: m,
                magnitude: v.norm(),
            });
        }
    }
    let limit = PI * (1.0 - UNWRAP_MARGIN);
    let v0 = values[0];
    let mut out = Vec::with_capacity(n);
    let mut residual = 0.0;
    let mut prev = c(1.0, 0.0);
    for m in 0..n {
        let ratio = values[m] / v0;
        let z = ratio * cis(-(dynamical[m] + geometric[m]));
        if m > 0 {
            let jump = (z * prev.conj()).arg();
            if jump.abs() > limit {
                return Err(Error::Unwrap { sample: m, jump });
            }
            residual += jump;
        }
        prev = z;
        let total = dynamical[m] + geometric[m] + residual;
        let unwrap_count = ((total - ratio.arg()) / (2.0 * PI)).round() as i64;
        out.push(PhaseDecomposition {
            pair,
            time: grid.time(m),
            dynamical: dynamical[m],
            geometric: geometric[m],
            dissipative_log: c(ratio.norm().ln(), residual),
            unwrap_count,
        });
    }
    Ok(out)
}

/// Decomposition of `rho_ij` at every recorded sample of `traj`.
pub fn decompose_phase_series(
    traj: &Trajectory,
    frames: &FrameSeries,
    i: usize,
    j: usize,
) -> Result<Vec<PhaseDecomposition>> {
    let states = traj
        .states_instant
        .as_ref()
        .ok_or_else(|| Error::Tag("trajectory carries no instantaneous-basis states".into()))?;
    if states.iter().any(|s| s.basis() != Basis::Instantaneous) {
        return Err(Error::Tag(
            "states are not in the instantaneous basis".into(),
        ));
    }
    let n = frames.dim();
    if i >= n || j >= n || i == j {
        return Err(Error::Dimension(format!(
            "pair ({i}, {j}) is not a coherence of a {n}-level system"
        )));
    }
    let grid = frames.grid();
    if grid.samples() != traj.grid.samples()
        || (grid.t1() - traj.grid.t1()).abs() > 1e-9 * grid.t1().abs().max(1.0)
    {
        return Err(Error::GridMismatch(
            "frames and trajectory are sampled differently".into(),
        ));
    }
    let values: Vec<C64> = states.iter().map(|s| s.get(i, j)).collect();
    let gap: Vec<f64> = frames
        .spectra()
        .iter()
        .map(|s| s.energies[i] - s.energies[j])
        .collect();
    let dynamical: Vec<f64> = cumulative_trapezoid(&gap, grid.dt())
        .into_iter()
        .map(|x| -x)
        .collect();
    let geometric = geometric_phase_series(frames, i, j)?;
    decompose_samples((i, j), &grid, &values, &dynamical, &geometric)
}

/// Decomposition of `rho_ij` at the last recorded sample of `traj`.
pub fn decompose_phase(
    traj: &Trajectory,
    frames: &FrameSeries,
    i: usize,
    j: usize,
) -> Result<PhaseDecomposition> {
    Ok(*decompose_phase_series(traj, frames, i, j)?
        .last()
        .expect("non-empty grid"))
}

/// Decomposition of the closed-form uncoupled coherence at every sample of `data`.
pub fn decompose_closed_form(
    data: &InstantaneousData,
    i: usize,
    j: usize,
) -> Result<Vec<PhaseDecomposition>> {
    let grid = data.grid();
    let values = grid
        .times()
        .map(|t| coherence_solution_uncoupled(data, i, j, c(1.0, 0.0), t))
        .collect::<Result<Vec<_>>>()?;
    let dynamical: Vec<f64> = grid
        .times()
        .map(|t| data.dynamical_phase(i, j, t))
        .collect();
    let geometric: Vec<f64> = grid
        .times()
        .map(|t| data.geometric_phase(i, j, t))
        .collect();
    decompose_samples((i, j), &grid, &values, &dynamical, &geometric)
}

/// True when the dissipator shifts the phase of the coherence.
pub fn real_correction_detector(decomp: &PhaseDecomposition, floor: f64) -> bool {
    decomp.dissipative_log.im.abs() > floor
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Geometric,
    TimeDependent,
    NoDissipativePhase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricVerdict {
    pub verdict: Verdict,
    /// Dissipative log at the end of each schedule run.
    pub residuals: Vec<C64>,
    /// Largest pairwise `|residual_a - residual_b|`.
    pub spread: f64,
    pub geo_tol: f64,
    /// Geometric phase at the end of each run.
    pub geometric: Vec<f64>,
}

/// One traversal of the path.
#[derive(Debug, Clone)]
pub struct ScheduleRun {
    pub schedule: Schedule,
    pub period: f64,
}

/// `linear(T)`, `perturbed(T)` and `linear(2T)`.
pub fn default_schedules(period: f64) -> Vec<ScheduleRun> {
    vec![
        ScheduleRun {
            schedule: Schedule::Linear,
            period,
        },
        ScheduleRun {
            schedule: Schedule::Perturbed,
            period,
        },
        ScheduleRun {
            schedule: Schedule::Linear,
            period: 2.0 * period,
        },
    ]
}

pub fn default_geo_tol(residuals: &[C64]) -> f64 {
    let max = residuals.iter().map(|r| r.norm()).fold(0.0, f64::max);
    (GEO_TOL_RELATIVE * max).max(GEO_TOL_FLOOR)
}

/// Verdict from per-schedule residuals.
pub fn classify(
    residuals: &[C64],
    geometric: Vec<f64>,
    geo_tol: f64,
    floor: f64,
) -> GeometricVerdict {
    let max = residuals.iter().map(|r| r.norm()).fold(0.0, f64::max);
    let mut spread: f64 = 0.0;
    for (a, ra) in residuals.iter().enumerate() {
        for rb in &residuals[a + 1..] {
            spread = spread.max((ra - rb).norm());
        }
    }
    let verdict = if max <= floor {
        Verdict::NoDissipativePhase
    } else if spread <= geo_tol {
        Verdict::Geometric
    } else {
        Verdict::TimeDependent
    };
    GeometricVerdict {
        verdict,
        residuals: residuals.to_vec(),
        spread,
        geo_tol,
        geometric,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionOptions {
    /// Fixed tolerance; `None` uses [`default_geo_tol`].
    pub geo_tol: Option<f64>,
    pub floor: f64,
    /// Sampling step; `None` uses the shortest period / 2000.
    pub dt: Option<f64>,
    /// Integrate the master equation instead of using the closed forms.
    pub full_integration: bool,
}

impl Default for CriterionOptions {
    fn default() -> Self {
        Self {
            geo_tol: None,
            floor: DISSIPATIVE_FLOOR,
            dt: None,
            full_integration: false,
        }
    }
}

pub type ModelFamily = dyn Fn(ParameterPath) -> Result<Model> + Send + Sync;

fn same_parameterization(a: &ScheduleRun, b: &ScheduleRun) -> bool {
    if (a.period - b.period).abs() > 1e-12 * a.period.max(b.period) {
        return false;
    }
    (0..=200).all(|k| {
        let u = k as f64 / 200.0;
        (a.schedule.eval(u) - b.schedule.eval(u)).abs() <= 1e-12
    })
}

fn check_regime(data: &InstantaneousData, period: f64) -> Result<()> {
    let gap = data.frames().gap_min();
    let rate = data
        .coeffs()
        .iter()
        .map(|c| c.max_abs())
        .fold(0.0, f64::max);
    if rate / gap > WEAK_RATIO_LIMIT {
        return Err(Error::Regime(format!(
            "max |c| / min gap = {:e} exceeds {WEAK_RATIO_LIMIT}",
            rate / gap
        )));
    }
    if period * gap < MIN_ADIABATICITY {
        return Err(Error::Regime(format!(
            "T * min gap = {:e} is below {MIN_ADIABATICITY}",
            period * gap
        )));
    }
    Ok(())
}

fn run_once(
    family: &ModelFamily,
    path: &ParameterPath,
    run: &ScheduleRun,
    i: usize,
    j: usize,
    dt: f64,
    full: bool,
) -> Result<PhaseDecomposition> {
    let model = family(path.with_schedule(run.schedule.clone(), run.period)?)?;
    let grid = TimeGrid::new(0.0, run.period, dt)?;
    let data = InstantaneousData::build(&model, &grid)?;
    check_regime(&data, run.period)?;
    if !full {
        return Ok(*decompose_closed_form(&data, i, j)?
            .last()
            .expect("non-empty grid"));
    }
    let frames = data.frames();
    let u0 = &frames.spectrum(0).frame;
    let psi: CVector = (u0.column(i) + u0.column(j)) * c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let rho0 = DensityMatrix::pure(&psi, Basis::Fixed)?;
    let bound = liouville::step_bound(&model);
    let sub = (grid.dt() / bound).ceil().max(1.0) as usize;
    let fine = TimeGrid::with_samples(0.0, run.period, (grid.samples() - 1) * sub + 1)?;
    let traj = liouville::integrate_with(
        &model,
        &rho0,
        &fine,
        IntegrateOptions {
            record_stride: sub,
            check_step: true,
        },
    )?;
    let traj = liouville::to_instantaneous_basis(&traj, frames)?;
    decompose_phase(&traj, frames, i, j)
}

/// Runs the pair `(i, j)` through every schedule and compares the
/// dissipative logs. Geometric means invariance under reparameterization of
/// the fixed path.
pub fn geometric_condition_check(
    family: &ModelFamily,
    path: &ParameterPath,
    schedules: &[ScheduleRun],
    i: usize,
    j: usize,
    opts: CriterionOptions,
) -> Result<GeometricVerdict> {
    if schedules.len() < 2 {
        return Err(Error::Schedule(format!(
            "at least two schedules are needed, got {}",
            schedules.len()
        )));
    }
    for (a, ra) in schedules.iter().enumerate() {
        ra.schedule.validate()?;
        for rb in &schedules[a + 1..] {
            if same_parameterization(ra, rb) {
                return Err(Error::Schedule(format!(
                    "schedules {ra:?} and {rb:?} traverse the path identically"
                )));
            }
        }
    }
    let shortest = schedules
        .iter()
        .map(|r| r.period)
        .fold(f64::INFINITY, f64::min);
    let dt = opts.dt.unwrap_or(shortest / 2000.0);
    let decomps = schedules
        .par_iter()
        .map(|run| run_once(family, path, run, i, j, dt, opts.full_integration))
        .collect::<Result<Vec<_>>>()?;
    let residuals: Vec<C64> = decomps.iter().map(|d| d.dissipative_log).collect();
    let geometric = decomps.iter().map(|d| d.geometric).collect();
    let geo_tol = opts.geo_tol.unwrap_or_else(|| default_geo_tol(&residuals));
    Ok(classify(&residuals, geometric, geo_tol, opts.floor))
}

/// Open path `k_1(s) = s` of duration `period`, linear schedule.
pub fn synthetic_path(period: f64) -> Result<ParameterPath> {
    ParameterPath::new(1, Arc::new(|s| vec![s]), Schedule::Linear, period)
}

/// Two levels `E = -/+(1 + k_1 / 2)` with a coherence rate that is a total
/// derivative along the path: `c(0,1,0,1) = c(1,0,1,0) = d/dt (-0.3 k_1^2)`.
pub fn synthetic_geometric_model(path: ParameterPath) -> Result<Model> {
    if path.k_dim() != 1 {
        return Err(Error::Path(format!(
            "synthetic model needs a 1-component path, got {}",
            path.k_dim()
        )));
    }
    let h: HamiltonianFn = Arc::new(|_, k| {
        let e = 1.0 + 0.5 * k[0];
        matrix::diag_real(&[-e, e])
    });
    let rate_path = path.clone();
    let tensor = DissipatorSpec::Tensor(Arc::new(move |t, k| {
        let rate = -0.6 * k[0] * rate_path.s_rate(t);
        let mut c4 = CoefficientTensor::zeros(2);
        c4.set(0, 1, 0, 1, c(rate, 0.0));
        c4.set(1, 0, 1, 0, c(rate, 0.0));
        c4
    }));
    Model::new(2, h, tensor, path)
}

/// Two static levels `-/+1` with a constant coherence rate `rate` on (0, 1)
/// and its conjugate on (1, 0).
pub fn constant_rate_model(rate: C64, period: f64) -> Result<Model> {
    let path = ParameterPath::new(1, Arc::new(|s| vec![s]), Schedule::Linear, period)?;
    let h: HamiltonianFn = Arc::new(|_, _| matrix::diag_real(&[-1.0, 1.0]));
    let mut c4 = CoefficientTensor::zeros(2);
    c4.set(0, 1, 0, 1, rate);
    c4.set(1, 0, 1, 0, rate.conj());
    Model::new(2, h, DissipatorSpec::constant_tensor(c4), path)
}

/// Frames of `model` on `grid` in the default gauge.
pub fn frames_for(model: &Model, grid: &TimeGrid) -> Result<FrameSeries> {
    FrameSeries::build(model, grid, GaugePolicy::Anchored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::{integrate, integrate_with, to_instantaneous_basis};
    use crate::models::{self, SpinModelParams, SpinReservoir, LOWER, UPPER};
    use proptest::prelude::*;

    fn spin(omega: f64, k: f64, n_bar: f64) -> SpinModelParams {
        SpinModelParams::new(1.0, PI / 3.0, omega, k, n_bar).unwrap()
    }

    fn instant_trajectory(
        model: &Model,
        rho0_h: &DensityMatrix,
        t1: f64,
        dt: f64,
        stride: usize,
    ) -> (Trajectory, FrameSeries) {
        let fine = TimeGrid::new(0.0, t1, dt).unwrap();
        let coarse = fine.coarsened(stride).unwrap();
        let frames = frames_for(model, &coarse).unwrap();
        let u0 = &frames.spectrum(0).frame;
        let rho0 = rho0_h.conjugated(&u0.adjoint(), Basis::Fixed);
        let traj = integrate_with(
            model,
            &rho0,
            &fine,
            IntegrateOptions {
                record_stride: stride,
                check_step: true,
            },
        )
        .unwrap();
        (to_instantaneous_basis(&traj, &frames).unwrap(), frames)
    }

    fn superposition() -> DensityMatrix {
        DensityMatrix::from_bloch(1.0, 0.0, 0.0, Basis::Instantaneous).unwrap()
    }

    #[test]
    fn closed_spin_closed_form_has_no_dissipative_part() {
        let p = spin(2.0 * PI / 1e4, 0.0, 0.0);
        let model = models::spin_closed_model(&p).unwrap();
        let grid = TimeGrid::new(0.0, 1e4, 1.0).unwrap();
        let data = InstantaneousData::build(&model, &grid).unwrap();
        let d = *decompose_closed_form(&data, UPPER, LOWER)
            .unwrap()
            .last()
            .unwrap();
        assert!(d.dissipative_log.norm() < 1e-5);
        assert!((d.dynamical + 2.0 * 1e4).abs() < 1e-6);
        let expected = -p.omega * (1.0 - p.theta.cos()) * 1e4;
        assert!(matrix::wrap_angle(d.geometric - expected).abs() < 1e-5);
    }

    #[test]
    fn closed_spin_full_integration_dissipative_part_is_nonadiabatic() {
        let p = spin(0.01, 0.0, 0.0);
        let model = models::spin_closed_model(&p).unwrap();
        let (traj, frames) = instant_trajectory(&model, &superposition(), 300.0, 0.05, 20);
        let d = decompose_phase(&traj, &frames, UPPER, LOWER).unwrap();
        let st = p.theta.sin();
        let bound = p.omega * p.omega * st * st * 300.0 / (4.0 * p.mu_b) + 4.0 * p.omega / p.mu_b;
        assert!(
            d.dissipative_log.norm() < bound,
            "{:?} vs {bound}",
            d.dissipative_log
        );
        assert!(d.dissipative_log.re <= 1e-8);
    }

    #[test]
    fn dephasing_decay_of_magnitude() {
        let p = spin(0.01, 0.01, 0.0);
        let model = models::spin_dephasing_model(&p).unwrap();
        let (traj, frames) = instant_trajectory(&model, &superposition(), 100.0, 0.05, 20);
        let d = decompose_phase(&traj, &frames, UPPER, LOWER).unwrap();
        assert!(
            (d.dissipative_log.re + 1.0).abs() < 1e-3,
            "{:?}",
            d.dissipative_log
        );
        assert!(d.dissipative_log.im.abs() < 5e-2);
        assert!(!real_correction_detector(
            &decompose_closed_form(
                &InstantaneousData::build(&model, &frames.grid()).unwrap(),
                UPPER,
                LOWER
            )
            .unwrap()
            .last()
            .unwrap()
            .clone(),
            1e-3
        ));
    }

    #[test]
    fn static_undamped_system_has_zero_phases() {
        let h: HamiltonianFn = Arc::new(|_, _| matrix::diag_real(&[0.0, 0.0]));
        let model =
            Model::new(2, h, DissipatorSpec::None, ParameterPath::fixed(vec![0.0])).unwrap();
        let grid = TimeGrid::new(0.0, 5.0, 0.01).unwrap();
        let frames = frames_for(&model, &grid);
        // degenerate levels cannot be tracked; use a split static Hamiltonian instead
        assert!(frames.is_err());
        let h: HamiltonianFn = Arc::new(|_, _| matrix::diag_real(&[-1e-3, 1e-3]));
        let model =
            Model::new(2, h, DissipatorSpec::None, ParameterPath::fixed(vec![0.0])).unwrap();
        let frames = frames_for(&model, &grid).unwrap();
        let rho0 = superposition().conjugated(&frames.spectrum(0).frame.adjoint(), Basis::Fixed);
        let traj =
            to_instantaneous_basis(&integrate(&model, &rho0, &grid).unwrap(), &frames).unwrap();
        let d = decompose_phase(&traj, &frames, 1, 0).unwrap();
        assert!(d.geometric.abs() < 1e-15);
        assert!(d.dissipative_log.norm() < 1e-10);
        assert!((d.dynamical + 2e-3 * 5.0).abs() < 1e-12);
    }

    #[test]
    fn phase_undefined_on_vanishing_coherence() {
        let grid = TimeGrid::with_samples(0.0, 1.0, 3).unwrap();
        let values = [c(1.0, 0.0), c(1e-12, 0.0), c(1.0, 0.0)];
        let err = decompose_samples((1, 0), &grid, &values, &[0.0; 3], &[0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::PhaseUndefined { sample: 1, .. }));
    }

    #[test]
    fn unwrap_rejects_half_turn_jumps() {
        let grid = TimeGrid::with_samples(0.0, 1.0, 3).unwrap();
        let values = [c(1.0, 0.0), cis(0.5), cis(0.5 + PI * 0.9995)];
        let err = decompose_samples((1, 0), &grid, &values, &[0.0; 3], &[0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::Unwrap { sample: 2, .. }));
    }

    #[test]
    fn unwrap_counts_turns() {
        let n = 401;
        let grid = TimeGrid::with_samples(0.0, 1.0, n).unwrap();
        let phase: Vec<f64> = (0..n)
            .map(|m| -6.5 * PI * m as f64 / (n - 1) as f64)
            .collect();
        let values: Vec<C64> = phase.iter().map(|&p| cis(p) * 0.5).collect();
        let d = decompose_samples((1, 0), &grid, &values, &vec![0.0; n], &vec![0.0; n]).unwrap();
        let last = d.last().unwrap();
        assert!((last.total_phase() + 6.5 * PI).abs() < 1e-12);
        assert_eq!(last.unwrap_count, -3);
    }

    #[test]
    fn complex_rate_gives_real_correction() {
        let k = 0.01;
        let t = 100.0;
        let model = constant_rate_model(c(-k, -0.5 * k), t).unwrap();
        let grid = TimeGrid::new(0.0, t, 0.5).unwrap();
        let data = InstantaneousData::build(&model, &grid).unwrap();
        let d = *decompose_closed_form(&data, 0, 1).unwrap().last().unwrap();
        assert!((d.dissipative_log.im + 0.5 * k * t).abs() < 1e-6);
        assert!(real_correction_detector(&d, 1e-3));

        let zero = constant_rate_model(c(0.0, 0.0), t).unwrap();
        let data = InstantaneousData::build(&zero, &grid).unwrap();
        let d = *decompose_closed_form(&data, 0, 1).unwrap().last().unwrap();
        assert!(!real_correction_detector(&d, 1e-12));
    }

    #[test]
    fn closed_form_exactness() {
        let p = spin(0.01, 0.01, 0.5);
        let model = models::spin_thermal_model(&p).unwrap();
        let grid = TimeGrid::new(0.0, p.period(), 0.5).unwrap();
        let data = InstantaneousData::build(&model, &grid).unwrap();
        for d in decompose_closed_form(&data, UPPER, LOWER).unwrap() {
            let t = d.time;
            assert!((d.dynamical - data.dynamical_phase(UPPER, LOWER, t)).abs() < 1e-8);
            assert!((d.geometric - data.geometric_phase(UPPER, LOWER, t)).abs() < 1e-8);
            assert!((d.dissipative_log - data.dissipative_integral(UPPER, LOWER, t)).norm() < 1e-8);
        }
    }

    #[test]
    fn synthetic_model_is_geometric() {
        let path = synthetic_path(100.0).unwrap();
        let family = |p: ParameterPath| synthetic_geometric_model(p);
        let v = geometric_condition_check(
            &family,
            &path,
            &default_schedules(100.0),
            0,
            1,
            CriterionOptions::default(),
        )
        .unwrap();
        assert_eq!(v.verdict, Verdict::Geometric);
        for r in &v.residuals {
            assert!((r - c(-0.3, 0.0)).norm() < 1e-6, "{r}");
        }
        assert!(v.spread <= 1e-6);
    }

    #[test]
    fn dephasing_model_is_time_dependent() {
        let p = spin(0.01, 0.005, 0.0);
        let path = models::precession_path(&p).unwrap();
        let family = move |path: ParameterPath| {
            models::spin_model_on_path(&p, SpinReservoir::Dephasing, path)
        };
        let opts = CriterionOptions {
            dt: Some(p.period() / 10000.0),
            ..CriterionOptions::default()
        };
        let v = geometric_condition_check(
            &family,
            &path,
            &default_schedules(p.period()),
            UPPER,
            LOWER,
            opts,
        )
        .unwrap();
        assert_eq!(v.verdict, Verdict::TimeDependent);
        assert!((v.residuals[0].re + p.k * p.period()).abs() < 0.05 * p.k * p.period());
        assert!((v.residuals[2].re + 2.0 * p.k * p.period()).abs() < 0.1 * p.k * p.period());
        for g in &v.geometric {
            assert!(
                matrix::wrap_angle(g - v.geometric[0]).abs() <= 1e-6,
                "{:?}",
                v.geometric
            );
        }
    }

    #[test]
    fn closed_spin_has_no_dissipative_phase() {
        let p = spin(0.01, 0.0, 0.0);
        let path = models::precession_path(&p).unwrap();
        let family =
            move |path: ParameterPath| models::spin_model_on_path(&p, SpinReservoir::Closed, path);
        let v = geometric_condition_check(
            &family,
            &path,
            &default_schedules(p.period()),
            UPPER,
            LOWER,
            CriterionOptions::default(),
        )
        .unwrap();
        assert_eq!(v.verdict, Verdict::NoDissipativePhase);
    }

    #[test]
    fn identical_schedules_rejected() {
        let path = synthetic_path(100.0).unwrap();
        let family = |p: ParameterPath| synthetic_geometric_model(p);
        let runs = vec![
            ScheduleRun {
                schedule: Schedule::Linear,
                period: 100.0,
            },
            ScheduleRun {
                schedule: Schedule::Custom(Arc::new(|u| u)),
                period: 100.0,
            },
        ];
        let err =
            geometric_condition_check(&family, &path, &runs, 0, 1, CriterionOptions::default())
                .unwrap_err();
        assert!(matches!(err, Error::Schedule(_)));
        let err = geometric_condition_check(
            &family,
            &path,
            &runs[..1],
            0,
            1,
            CriterionOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schedule(_)));
    }

    #[test]
    fn criterion_enforces_regime() {
        let path = synthetic_path(10.0).unwrap();
        let family = |p: ParameterPath| synthetic_geometric_model(p);
        let err = geometric_condition_check(
            &family,
            &path,
            &default_schedules(10.0),
            0,
            1,
            CriterionOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Regime(_)));
    }

    #[test]
    fn classify_thresholds() {
        let r = [c(-1.0, 0.0), c(-1.0 + 5e-5, 0.0)];
        assert_eq!(
            classify(&r, vec![], default_geo_tol(&r), 1e-9).verdict,
            Verdict::Geometric
        );
        let r = [c(-1.0, 0.0), c(-2.0, 0.0)];
        assert_eq!(
            classify(&r, vec![], default_geo_tol(&r), 1e-9).verdict,
            Verdict::TimeDependent
        );
        let r = [c(1e-12, 0.0), c(-1e-12, 0.0)];
        assert_eq!(
            classify(&r, vec![], default_geo_tol(&r), 1e-9).verdict,
            Verdict::NoDissipativePhase
        );
        assert_eq!(default_geo_tol(&[c(1e-8, 0.0)]), GEO_TOL_FLOOR);
    }

    proptest! {
        #[test]
        fn decomposition_reassembles_samples(
            phases in proptest::collection::vec(-3.0f64..3.0, 2..40),
            decay in 0.0f64..0.5,
            dyn_rate in -50.0f64..50.0,
        ) {
            let n = phases.len() + 1;
            let grid = TimeGrid::with_samples(0.0, 1.0, n).unwrap();
            let mut acc = 0.0;
            let mut values = vec![c(0.3, 0.1)];
            let mut dynamical = vec![0.0];
            for (m, dp) in phases.iter().enumerate() {
                acc += dp;
                let t = (m + 1) as f64 / (n - 1) as f64;
                dynamical.push(dyn_rate * t);
                values.push(values[0] * cis(acc + dyn_rate * t) * (-decay * t).exp());
            }
            let geometric = vec![0.0; n];
            let d = decompose_samples((1, 0), &grid, &values, &dynamical, &geometric).unwrap();
            for (m, dm) in d.iter().enumerate() {
                let ratio = values[m] / values[0];
                prop_assert!((dm.ratio() - ratio).norm() < 1e-10);
                prop_assert!(dm.dissipative_log.re <= 1e-12);
                let principal = ratio.arg();
                prop_assert!((dm.total_phase() - principal - 2.0 * PI * dm.unwrap_count as f64).abs() < 1e-9);
            }
        }
    }
}
