//! Master-equation integration, basis changes into the instantaneous frame
//! and the dissipator coefficient tensor.
//!
//! The dissipator acts linearly on the density matrix,
//!
//! ```text
//! (L_D rho)_ij = sum_lm c(i, j, l, m) rho_lm,
//! ```
//!
//! and [`CoefficientTensor::get`] returns `c(i, j, l, m)` in that index order.

use std::fmt;
use std::sync::Arc;

use crate::density::{Basis, DensityMatrix};
use crate::error::{Error, Result};
use crate::matrix::{self, c, CMatrix, C64, I};
use crate::model::Model;
use crate::path::TimeGrid;
use crate::spectral::{FrameSeries, Spectrum};

/// Trace drift above which integration is aborted.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;
/// Minimum eigenvalue tolerated along an integrated trajectory.
pub const TRAJECTORY_POSITIVITY_TOL: f64 = 1e-6;
/// `dt <= STEP_FACTOR * min(1 / |H|, 2 pi / omega)`.
pub const STEP_FACTOR: f64 = 0.05;

/// One jump operator `L` with rate `gamma` contributing
/// `gamma (L rho L^dagger - {L^dagger L, rho} / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladTerm {
    op: CMatrix,
    rate: f64,
}

impl LindbladTerm {
    pub fn new(op: CMatrix, rate: f64) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::Param(format!(
                "Lindblad rate must be finite and >= 0, got {rate}"
            )));
        }
        if op.nrows() != op.ncols() {
            return Err(Error::Dimension(format!(
                "jump operator must be square, got {}x{}",
                op.nrows(),
                op.ncols()
            )));
        }
        if !matrix::is_finite(&op) {
            return Err(Error::NonFinite("jump operator"));
        }
        Ok(Self { op, rate })
    }

    pub fn op(&self) -> &CMatrix {
        &self.op
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Four-index tensor `c(i, j, l, m)`: coefficient of `rho_lm` in `(L_D rho)_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    n: usize,
    data: Vec<C64>,
}

impl CoefficientTensor {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![c(0.0, 0.0); n * n * n * n],
        }
    }

    /// Builds a tensor from `n^4` entries in `(i, j, l, m)` row-major order.
    pub fn from_vec(n: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != n * n * n * n {
            return Err(Error::Dimension(format!(
                "coefficient tensor for N = {n} needs {} entries, got {}",
                n * n * n * n,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("coefficient tensor"));
        }
        Ok(Self { n, data })
    }

    /// Expands `sum_a gamma_a (L_a rho L_a^dagger - {L_a^dagger L_a, rho} / 2)`.
    pub fn from_lindblad(n: usize, terms: &[LindbladTerm]) -> Result<Self> {
        let mut out = Self::zeros(n);
        for term in terms {
            let l = &term.op;
            if l.nrows() != n {
                return Err(Error::Dimension(format!(
                    "jump operator is {}x{}, expected {n}x{n}",
                    l.nrows(),
                    l.ncols()
                )));
            }
            let g = term.rate;
            let ldl = l.adjoint() * l;
            for i in 0..n {
                for j in 0..n {
                    for a in 0..n {
                        for b in 0..n {
                            let mut v = l[(i, a)] * l[(j, b)].conj();
                            if b == j {
                                v -= 0.5 * ldl[(i, a)];
                            }
                            if a == i {
                                v -= 0.5 * ldl[(b, j)];
                            }
                            let k = out.index(i, j, a, b);
                            out.data[k] += g * v;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    #[inline]
    fn index(&self, i: usize, j: usize, l: usize, m: usize) -> usize {
        ((i * self.n + j) * self.n + l) * self.n + m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, l: usize, m: usize) -> C64 {
        self.data[self.index(i, j, l, m)]
    }

    pub fn set(&mut self, i: usize, j: usize, l: usize, m: usize, value: C64) {
        let k = self.index(i, j, l, m);
        self.data[k] = value;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    /// `(L_D rho)_ij = sum_lm c(i, j, l, m) rho_lm`.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let n = self.n;
        let mut out = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let base = (i * n + j) * n * n;
                let mut acc = c(0.0, 0.0);
                for l in 0..n {
                    for m in 0..n {
                        acc += self.data[base + l * n + m] * rho[(l, m)];
                    }
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    /// Coefficients seen by `rho' = U^dagger rho U`, where the columns of `U`
    /// are the new basis vectors:
    ///
    /// ```text
    /// c'(i, j, l, m) = sum_abcd conj(U_ai) U_bj U_cl conj(U_dm) c(a, b, c, d)
    /// ```
    pub fn to_frame(&self, u: &CMatrix) -> Result<Self> {
        let n = self.n;
        if u.nrows() != n || u.ncols() != n {
            return Err(Error::Dimension(format!(
                "frame is {}x{}, tensor dimension is {n}",
                u.nrows(),
                u.ncols()
            )));
        }
        let n2 = n * n;
        let n3 = n2 * n;
        let src = &self.data;
        let mut t1 = vec![c(0.0, 0.0); src.len()];
        // first index: conj(U_ai)
        for i in 0..n {
            for a in 0..n {
                let w = u[(a, i)].conj();
                if w == c(0.0, 0.0) {
                    continue;
                }
                for rest in 0..n3 {
                    t1[i * n3 + rest] += w * src[a * n3 + rest];
                }
            }
        }
        let mut t2 = vec![c(0.0, 0.0); src.len()];
        // second index: U_bj
        for i in 0..n {
            for j in 0..n {
                for b in 0..n {
                    let w = u[(b, j)];
                    if w == c(0.0, 0.0) {
                        continue;
                    }
                    for rest in 0..n2 {
                        t2[i * n3 + j * n2 + rest] += w * t1[i * n3 + b * n2 + rest];
                    }
                }
            }
        }
        let mut t3 = vec![c(0.0, 0.0); src.len()];
        // third index: U_cl
        for ij in 0..n2 {
            for l in 0..n {
                for cc in 0..n {
                    let w = u[(cc, l)];
                    if w == c(0.0, 0.0) {
                        continue;
                    }
                    for d in 0..n {
                        t3[ij * n2 + l * n + d] += w * t2[ij * n2 + cc * n + d];
                    }
                }
            }
        }
        let mut t4 = vec![c(0.0, 0.0); src.len()];
        // fourth index: conj(U_dm)
        for ijl in 0..n3 {
            for m in 0..n {
                let mut acc = c(0.0, 0.0);
                for d in 0..n {
                    acc += u[(d, m)].conj() * t3[ijl * n + d];
                }
                t4[ijl * n + m] = acc;
            }
        }
        Ok(Self { n, data: t4 })
    }

    /// Trace preservation (`sum_i c(i, i, l, m) = 0`) and Hermiticity
    /// preservation (`c(j, i, m, l) = conj(c(i, j, l, m))`).
    pub fn check_physical(&self, tol: f64) -> Result<()> {
        let n = self.n;
        let scale = self.max_abs().max(1.0);
        for l in 0..n {
            for m in 0..n {
                let s: C64 = (0..n).map(|i| self.get(i, i, l, m)).sum();
                if s.norm() > tol * scale {
                    return Err(Error::Param(format!(
                        "dissipator does not preserve the trace: sum_i c(i,i,{l},{m}) = {s}"
                    )));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    for m in 0..n {
                        let d = (self.get(j, i, m, l) - self.get(i, j, l, m).conj()).norm();
                        if d > tol * scale {
                            return Err(Error::Param(format!(
                                "dissipator does not preserve Hermiticity at ({i},{j},{l},{m})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// `(1 - w) a + w b`.
    pub fn lerp(a: &Self, b: &Self, w: f64) -> Self {
        Self {
            n: a.n,
            data: a
                .data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| x * (1.0 - w) + y * w)
                .collect(),
        }
    }
}

pub type TensorFn = Arc<dyn Fn(f64, &[f64]) -> CoefficientTensor + Send + Sync>;
pub type LindbladFn = Arc<dyn Fn(f64, &[f64]) -> Vec<LindbladTerm> + Send + Sync>;

/// Non-unitary part of the generator, as a function of `(t, k)`.
#[derive(Clone)]
pub enum DissipatorSpec {
    None,
    Tensor(TensorFn),
    Lindblad(LindbladFn),
}

impl fmt::Debug for DissipatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DissipatorSpec::None => write!(f, "None"),
            DissipatorSpec::Tensor(_) => write!(f, "Tensor(..)"),
            DissipatorSpec::Lindblad(_) => write!(f, "Lindblad(..)"),
        }
    }
}

impl DissipatorSpec {
    pub fn constant_lindblad(terms: Vec<LindbladTerm>) -> Self {
        DissipatorSpec::Lindblad(Arc::new(move |_, _| terms.clone()))
    }

    pub fn constant_tensor(tensor: CoefficientTensor) -> Self {
        DissipatorSpec::Tensor(Arc::new(move |_, _| tensor.clone()))
    }

    /// Tensor form at `(t, k)`; Lindblad operators are expanded.
    pub fn tensor(&self, dim: usize, t: f64, k: &[f64]) -> Result<CoefficientTensor> {
        match self {
            DissipatorSpec::None => Ok(CoefficientTensor::zeros(dim)),
            DissipatorSpec::Tensor(f) => {
                let tensor = f(t, k);
                if tensor.dim() != dim {
                    return Err(Error::Dimension(format!(
                        "coefficient tensor has dimension {}, model has {dim}",
                        tensor.dim()
                    )));
                }
                Ok(tensor)
            }
            DissipatorSpec::Lindblad(f) => CoefficientTensor::from_lindblad(dim, &f(t, k)),
        }
    }
}

/// Dissipator coefficients in the instantaneous eigenbasis at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstantCoefficients {
    pub t: f64,
    pub tensor: CoefficientTensor,
}

impl InstantCoefficients {
    /// `c(i, j, i, j) = conj(c(j, i, j, i))` for every pair.
    pub fn check_conjugate_symmetry(&self, tol: f64) -> Result<()> {
        let n = self.tensor.dim();
        for i in 0..n {
            for j in 0..n {
                let d = (self.tensor.get(i, j, i, j) - self.tensor.get(j, i, j, i).conj()).norm();
                if d > tol {
                    return Err(Error::Param(format!(
                        "coherence coefficients of ({i},{j}) are not conjugate: deviation {d:e}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Transforms the model's dissipator at `spectrum.t` into the frame of
/// `spectrum`.
pub fn transform_coefficients(model: &Model, spectrum: &Spectrum) -> Result<InstantCoefficients> {
    let fixed = model.dissipator_tensor(spectrum.t)?;
    let tensor = fixed.to_frame(&spectrum.frame)?;
    let out = InstantCoefficients {
        t: spectrum.t,
        tensor,
    };
    out.check_conjugate_symmetry(1e-10 * out.tensor.max_abs().max(1.0))?;
    Ok(out)
}

/// The generator frozen at one instant.
enum Generator {
    Lindblad {
        h: CMatrix,
        terms: Vec<(CMatrix, CMatrix, CMatrix, f64)>,
    },
    Tensor {
        h: CMatrix,
        tensor: CoefficientTensor,
    },
}

impl Generator {
    fn at(model: &Model, t: f64) -> Result<Self> {
        let k = model.path().params_at(t);
        let h = model.hamiltonian(t);
        match model.dissipator() {
            DissipatorSpec::None => Ok(Generator::Lindblad { h, terms: vec![] }),
            DissipatorSpec::Lindblad(f) => {
                let mut terms = Vec::new();
                for term in f(t, &k) {
                    if term.op.nrows() != model.dim() {
                        return Err(Error::Dimension("jump operator size".into()));
                    }
                    if term.rate == 0.0 {
                        continue;
                    }
                    let ld = term.op.adjoint();
                    let half = &ld * &term.op * c(0.5, 0.0);
                    terms.push((term.op, ld, half, term.rate));
                }
                Ok(Generator::Lindblad { h, terms })
            }
            DissipatorSpec::Tensor(_) => Ok(Generator::Tensor {
                h,
                tensor: model.dissipator().tensor(model.dim(), t, &k)?,
            }),
        }
    }

    fn apply(&self, rho: &CMatrix) -> CMatrix {
        match self {
            Generator::Lindblad { h, terms } => {
                let mut out = (h * rho - rho * h) * (-I);
                for (l, ld, half, rate) in terms {
                    let jump = l * rho * ld;
                    let anti = half * rho + rho * half;
                    out += (jump - anti) * c(*rate, 0.0);
                }
                out
            }
            Generator::Tensor { h, tensor } => (h * rho - rho * h) * (-I) + tensor.apply(rho),
        }
    }
}

/// `d rho / dt = -i [H(t), rho] + L_D(t) rho` in the fixed basis.
pub fn apply_liouvillian(model: &Model, t: f64, rho: &DensityMatrix) -> Result<CMatrix> {
    if rho.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "state has dimension {}, model has {}",
            rho.dim(),
            model.dim()
        )));
    }
    if rho.basis() != Basis::Fixed {
        return Err(Error::Tag(format!(
            "the Liouvillian acts on fixed-basis states, got {:?}",
            rho.basis()
        )));
    }
    Ok(Generator::at(model, t)?.apply(rho.matrix()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    /// Keep every `record_stride`-th step; must divide the number of steps.
    pub record_stride: usize,
    /// Enforce `dt <= 0.05 min(1 / |H|, 2 pi / omega)`.
    pub check_step: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            record_stride: 1,
            check_step: true,
        }
    }
}

/// Sampled solution of the master equation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Grid of the recorded samples.
    pub grid: TimeGrid,
    /// Fixed-basis states.
    pub states: Vec<DensityMatrix>,
    /// The same states in the instantaneous eigenbasis, once computed.
    pub states_instant: Option<Vec<DensityMatrix>>,
    pub frames: Option<FrameSeries>,
    /// Largest `|Tr rho - 1|` removed by renormalization over all steps.
    pub max_trace_drift: f64,
}

/// Largest admissible step for `model`.
pub fn step_bound(model: &Model) -> f64 {
    let h = model.max_hamiltonian_norm();
    let omega = model.path().drive_frequency();
    let mut bound = f64::INFINITY;
    if h > 0.0 {
        bound = bound.min(1.0 / h);
    }
    if omega > 0.0 {
        bound = bound.min(2.0 * std::f64::consts::PI / omega);
    }
    STEP_FACTOR * bound
}

pub fn integrate(model: &Model, rho0: &DensityMatrix, grid: &TimeGrid) -> Result<Trajectory> {
    integrate_with(model, rho0, grid, IntegrateOptions::default())
}

/// Fixed-step RK4. Every step is re-Hermitized and trace-normalized.
pub fn integrate_with(
    model: &Model,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    opts: IntegrateOptions,
) -> Result<Trajectory> {
    if rho0.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "initial state has dimension {}, model has {}",
            rho0.dim(),
            model.dim()
        )));
    }
    if rho0.basis() != Basis::Fixed {
        return Err(Error::Tag(format!(
            "integration starts from a fixed-basis state, got {:?}",
            rho0.basis()
        )));
    }
    if opts.check_step {
        let bound = step_bound(model);
        if grid.dt() > bound * (1.0 + 1e-12) {
            return Err(Error::StepSize {
                dt: grid.dt(),
                bound,
            });
        }
    }
    let recorded = grid.coarsened(opts.record_stride)?;
    let steps = grid.samples() - 1;
    let mut states = Vec::with_capacity(recorded.samples());
    states.push(rho0.clone());
    let mut rho = rho0.matrix().clone();
    let mut max_drift: f64 = 0.0;
    let mut gen_start = Generator::at(model, grid.time(0))?;
    for step in 0..steps {
        let t = grid.time(step);
        let t_next = grid.time(step + 1);
        let h = t_next - t;
        let gen_mid = Generator::at(model, t + 0.5 * h)?;
        let gen_end = Generator::at(model, t_next)?;
        let half = c(0.5 * h, 0.0);
        let k1 = gen_start.apply(&rho);
        let k2 = gen_mid.apply(&(&rho + &k1 * half));
        let k3 = gen_mid.apply(&(&rho + &k2 * half));
        let k4 = gen_end.apply(&(&rho + &k3 * c(h, 0.0)));
        let incr = (k1 + (k2 + k3) * c(2.0, 0.0) + k4) * c(h / 6.0, 0.0);
        rho += incr;
        rho = matrix::hermitian_part(&rho);
        let tr = matrix::trace(&rho);
        let drift = (tr - c(1.0, 0.0)).norm();
        if !drift.is_finite() {
            return Err(Error::NonFinite("integrated state"));
        }
        if drift > TRACE_DRIFT_LIMIT {
            return Err(Error::Trace { deviation: drift });
        }
        max_drift = max_drift.max(drift);
        rho *= c(1.0 / tr.re, 0.0);
        gen_start = gen_end;
        if (step + 1) % opts.record_stride == 0 {
            let min_eigenvalue = matrix::min_eigenvalue(&rho);
            if min_eigenvalue < -TRAJECTORY_POSITIVITY_TOL {
                return Err(Error::Positivity {
                    min_eigenvalue,
                    tolerance: TRAJECTORY_POSITIVITY_TOL,
                });
            }
            states.push(DensityMatrix::from_parts_unchecked(
                rho.clone(),
                Basis::Fixed,
            ));
        }
    }
    Ok(Trajectory {
        grid: recorded,
        states,
        states_instant: None,
        frames: None,
        max_trace_drift: max_drift,
    })
}

/// `rho^H(t_m) = U(t_m)^dagger rho(t_m) U(t_m)` at every recorded sample.
pub fn to_instantaneous_basis(traj: &Trajectory, frames: &FrameSeries) -> Result<Trajectory> {
    let fg = frames.grid();
    let tg = traj.grid;
    let tol = 1e-12 * (tg.t1() - tg.t0()).abs().max(1.0);
    if fg.samples() != tg.samples()
        || (fg.t0() - tg.t0()).abs() > tol
        || (fg.t1() - tg.t1()).abs() > tol
    {
        return Err(Error::GridMismatch(format!(
            "trajectory has {} samples on [{}, {}], frames have {} on [{}, {}]",
            tg.samples(),
            tg.t0(),
            tg.t1(),
            fg.samples(),
            fg.t0(),
            fg.t1()
        )));
    }
    let instant = traj
        .states
        .iter()
        .zip(frames.spectra())
        .map(|(rho, spec)| rho.conjugated(&spec.frame, Basis::Instantaneous))
        .collect();
    Ok(Trajectory {
        states_instant: Some(instant),
        frames: Some(frames.clone()),
        ..traj.clone()
    })
}
