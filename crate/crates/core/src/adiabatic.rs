//! Closed-form adiabatic-limit solutions in the instantaneous eigenbasis:
//! frozen or dissipatively relaxing populations, phase-factored coherences,
//! and resonantly coupled coherence blocks.

use std::sync::Arc;

use nalgebra::{ComplexField, DMatrix, DVector};

use crate::density::{Basis, DensityMatrix};
use crate::error::{Error, Result};
use crate::liouville::{transform_coefficients, CoefficientTensor};
use crate::matrix::{c, cis, CMatrix, C64};
use crate::model::Model;
use crate::path::{cumulative_trapezoid, TimeGrid};
use crate::spectral::{berry_connection, FrameSeries, GaugePolicy};

/// Largest `dt * |M|` accepted per factor of a time-ordered product.
pub const TOE_STEP_BOUND: f64 = 0.1;
/// Cross coefficients below this rate do not couple coherences.
pub const COUPLING_FLOOR: f64 = 1e-12;
/// Relative resonance tolerance: gaps match within `1e-9 * |H|`.
pub const RESONANCE_TOL: f64 = 1e-9;
const NORMALIZATION_TOL: f64 = 1e-8;

fn inf_norm<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|x| x.clone().modulus()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn is_zero<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> bool {
    m.iter().all(|x| *x == T::zero())
}

/// Midpoint product `prod_m exp(M(t_m + h/2) h)`, later factors on the left,
/// with `h = (t1 - t0) / ceil((t1 - t0) / dt)`.
pub fn time_ordered_exp<T, F>(m_fn: F, t0: f64, t1: f64, dt: f64) -> Result<DMatrix<T>>
where
    T: ComplexField<RealField = f64>,
    F: Fn(f64) -> DMatrix<T>,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Param(format!("step must be positive, got {dt}")));
    }
    if t1 < t0 {
        return Err(Error::Param(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    let first = m_fn(t0);
    let n = first.nrows();
    if first.ncols() != n {
        return Err(Error::Dimension("generator must be square".into()));
    }
    let mut out = DMatrix::<T>::identity(n, n);
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(out);
    }
    let steps = ((span / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let h = span / steps as f64;
    for k in 0..steps {
        let mid = t0 + (k as f64 + 0.5) * h;
        let m = m_fn(mid);
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Dimension("generator changes size".into()));
        }
        if is_zero(&m) {
            continue;
        }
        let norm = inf_norm(&m);
        if !norm.is_finite() {
            return Err(Error::NonFinite("time-ordered generator"));
        }
        if h * norm > TOE_STEP_BOUND * (1.0 + 1e-12) {
            return Err(Error::StepSize {
                dt: h,
                bound: TOE_STEP_BOUND / norm,
            });
        }
        out = (m * T::from_real(h)).exp() * out;
    }
    Ok(out)
}

/// Frames, energies and transformed dissipator coefficients sampled on a
/// grid, with cumulative integrals used by the closed forms. Values between
/// samples are linear interpolants.
#[derive(Debug, Clone)]
pub struct InstantaneousData {
    frames: FrameSeries,
    coeffs: Vec<CoefficientTensor>,
    energies: Vec<Vec<f64>>,
    energy_integrals: Vec<Vec<f64>>,
    connections: Vec<Vec<f64>>,
    connection_integrals: Vec<Vec<f64>>,
    /// `c(i, j, i, j)` per sample, indexed by `i * n + j`.
    coherence_rates: Vec<Vec<C64>>,
    coherence_integrals: Vec<Vec<C64>>,
    hamiltonian_scale: f64,
}

impl InstantaneousData {
    pub fn build(model: &Model, grid: &TimeGrid) -> Result<Self> {
        Self::build_with(model, grid, GaugePolicy::Anchored)
    }

    pub fn build_with(model: &Model, grid: &TimeGrid, policy: GaugePolicy) -> Result<Self> {
        let frames = FrameSeries::build(model, grid, policy)?;
        let coeffs = frames
            .spectra()
            .iter()
            .map(|s| transform_coefficients(model, s).map(|ic| ic.tensor))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(frames, coeffs)
    }

    pub fn from_parts(frames: FrameSeries, coeffs: Vec<CoefficientTensor>) -> Result<Self> {
        if coeffs.len() != frames.len() {
            return Err(Error::GridMismatch(format!(
                "{} coefficient samples for {} frames",
                coeffs.len(),
                frames.len()
            )));
        }
        let n = frames.dim();
        if coeffs.iter().any(|c| c.dim() != n) {
            return Err(Error::Dimension("coefficient tensor dimension".into()));
        }
        let dt = frames.grid().dt();
        let energies: Vec<Vec<f64>> = (0..n).map(|i| frames.energies_of(i)).collect();
        let energy_integrals = energies
            .iter()
            .map(|e| cumulative_trapezoid(e, dt))
            .collect();
        let connections: Vec<Vec<f64>> = (0..n)
            .map(|i| berry_connection(&frames, i).map(|a| a.values))
            .collect::<Result<_>>()?;
        let connection_integrals = connections
            .iter()
            .map(|a| cumulative_trapezoid(a, dt))
            .collect();
        let mut coherence_rates = Vec::with_capacity(n * n);
        let mut coherence_integrals = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let rates: Vec<C64> = coeffs.iter().map(|t| t.get(i, j, i, j)).collect();
                let re: Vec<f64> = rates.iter().map(|z| z.re).collect();
                let im: Vec<f64> = rates.iter().map(|z| z.im).collect();
                let cum: Vec<C64> = cumulative_trapezoid(&re, dt)
                    .into_iter()
                    .zip(cumulative_trapezoid(&im, dt))
                    .map(|(a, b)| c(a, b))
                    .collect();
                coherence_rates.push(rates);
                coherence_integrals.push(cum);
            }
        }
        let hamiltonian_scale = energies
            .iter()
            .flat_map(|e| e.iter())
            .fold(0.0, |acc: f64, x| acc.max(x.abs()));
        Ok(Self {
            frames,
            coeffs,
            energies,
            energy_integrals,
            connections,
            connection_integrals,
            coherence_rates,
            coherence_integrals,
            hamiltonian_scale,
        })
    }

    pub fn frames(&self) -> &FrameSeries {
        &self.frames
    }

    pub fn grid(&self) -> TimeGrid {
        self.frames.grid()
    }

    pub fn dim(&self) -> usize {
        self.frames.dim()
    }

    pub fn coeffs(&self) -> &[CoefficientTensor] {
        &self.coeffs
    }

    /// Default resonance tolerance `1e-9 * max |E_i|`.
    pub fn default_gap_tol(&self) -> f64 {
        RESONANCE_TOL * self.hamiltonian_scale.max(f64::MIN_POSITIVE)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let g = self.grid();
        let tol = 1e-12 * (g.t1() - g.t0()).abs().max(1.0);
        if t < g.t0() - tol || t > g.t1() + tol || !t.is_finite() {
            return Err(Error::Param(format!(
                "t = {t} outside the sampled interval [{}, {}]",
                g.t0(),
                g.t1()
            )));
        }
        Ok(())
    }

    fn check_level(&self, i: usize) -> Result<()> {
        if i >= self.dim() {
            return Err(Error::Dimension(format!(
                "level {i} out of range for dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        self.grid().locate(t)
    }

    fn value_at(&self, samples: &[f64], t: f64) -> f64 {
        let (m, w) = self.locate(t);
        samples[m] * (1.0 - w) + samples[m + 1] * w
    }

    /// Cumulative integral of the piecewise-linear interpolant of `values`.
    fn integral_at(&self, values: &[f64], cum: &[f64], t: f64) -> f64 {
        let (m, w) = self.locate(t);
        if w == 0.0 {
            return cum[m];
        }
        let h = w * self.grid().dt();
        let end = values[m] * (1.0 - w) + values[m + 1] * w;
        cum[m] + 0.5 * h * (values[m] + end)
    }

    fn complex_integral_at(&self, values: &[C64], cum: &[C64], t: f64) -> C64 {
        let (m, w) = self.locate(t);
        if w == 0.0 {
            return cum[m];
        }
        let h = w * self.grid().dt();
        let end = values[m] * (1.0 - w) + values[m + 1] * w;
        cum[m] + (values[m] + end) * (0.5 * h)
    }

    pub fn energy(&self, i: usize, t: f64) -> f64 {
        self.value_at(&self.energies[i], t)
    }

    /// `int_{t0}^t E_i dt`.
    pub fn energy_integral(&self, i: usize, t: f64) -> f64 {
        self.integral_at(&self.energies[i], &self.energy_integrals[i], t)
    }

    /// `int_{t0}^t a_i dt`.
    pub fn connection_integral(&self, i: usize, t: f64) -> f64 {
        self.integral_at(&self.connections[i], &self.connection_integrals[i], t)
    }

    /// `-int (E_i - E_j) dt`.
    pub fn dynamical_phase(&self, i: usize, j: usize, t: f64) -> f64 {
        -(self.energy_integral(i, t) - self.energy_integral(j, t))
    }

    /// `int (a_j - a_i) dt`.
    pub fn geometric_phase(&self, i: usize, j: usize, t: f64) -> f64 {
        self.connection_integral(j, t) - self.connection_integral(i, t)
    }

    /// `int c(i, j, i, j) dt`.
    pub fn dissipative_integral(&self, i: usize, j: usize, t: f64) -> C64 {
        let k = i * self.dim() + j;
        self.complex_integral_at(&self.coherence_rates[k], &self.coherence_integrals[k], t)
    }

    /// Linearly interpolated coefficient tensor.
    pub fn coeff_at(&self, t: f64) -> CoefficientTensor {
        let (m, w) = self.locate(t);
        if w == 0.0 {
            return self.coeffs[m].clone();
        }
        CoefficientTensor::lerp(&self.coeffs[m], &self.coeffs[m + 1], w)
    }

    fn coeff_entry_at(&self, i: usize, j: usize, l: usize, m: usize, t: f64) -> C64 {
        let (k, w) = self.locate(t);
        self.coeffs[k].get(i, j, l, m) * (1.0 - w) + self.coeffs[k + 1].get(i, j, l, m) * w
    }

    /// Gap `E_l - E_m` at sample `k`.
    fn gap(&self, l: usize, m: usize, k: usize) -> f64 {
        self.energies[l][k] - self.energies[m][k]
    }
}

pub type RealMatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
pub type RealVectorFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// `d p / dt = C(t) p + b(t)` for the first `N - 1` populations, with
/// `C_il = c(i, i, l, l) - c(i, i, N, N)` and `b_i = c(i, i, N, N)`; the last
/// population follows from the trace.
#[derive(Clone)]
pub struct PopulationSystem {
    dim: usize,
    c_fn: RealMatrixFn,
    source_fn: RealVectorFn,
}

impl PopulationSystem {
    pub fn new(dim: usize, c_fn: RealMatrixFn, source_fn: RealVectorFn) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Dimension(format!(
                "population system needs N >= 2, got {dim}"
            )));
        }
        Ok(Self {
            dim,
            c_fn,
            source_fn,
        })
    }

    /// Samples `C` and `b` from the transformed coefficients and interpolates
    /// linearly between samples.
    pub fn from_data(data: &InstantaneousData) -> Result<Self> {
        let n = data.dim();
        let last = n - 1;
        let mut cs = Vec::with_capacity(data.coeffs.len());
        let mut bs = Vec::with_capacity(data.coeffs.len());
        for (k, tensor) in data.coeffs.iter().enumerate() {
            let mut cm = DMatrix::<f64>::zeros(last, last);
            let mut b = DVector::<f64>::zeros(last);
            for i in 0..last {
                let src = tensor.get(i, i, last, last);
                for l in 0..last {
                    let v = tensor.get(i, i, l, l) - src;
                    if v.im.abs() > 1e-10 * tensor.max_abs().max(1.0) {
                        return Err(Error::Param(format!(
                            "population generator entry ({i},{l}) has imaginary part {:e} at sample {k}",
                            v.im
                        )));
                    }
                    cm[(i, l)] = v.re;
                }
                b[i] = src.re;
            }
            cs.push(cm);
            bs.push(b);
        }
        let grid = data.grid();
        let cs = Arc::new(cs);
        let bs = Arc::new(bs);
        let c_fn: RealMatrixFn = Arc::new(move |t| {
            let (m, w) = grid.locate(t);
            if w == 0.0 {
                cs[m].clone()
            } else {
                &cs[m] * (1.0 - w) + &cs[m + 1] * w
            }
        });
        let source_fn: RealVectorFn = Arc::new(move |t| {
            let (m, w) = grid.locate(t);
            if w == 0.0 {
                bs[m].clone()
            } else {
                &bs[m] * (1.0 - w) + &bs[m + 1] * w
            }
        });
        Self::new(n, c_fn, source_fn)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn c_matrix(&self, t: f64) -> DMatrix<f64> {
        (self.c_fn)(t)
    }

    pub fn source(&self, t: f64) -> DVector<f64> {
        (self.source_fn)(t)
    }
}

fn check_populations(p: &[f64], what: &str) -> Result<()> {
    for (i, &x) in p.iter().enumerate() {
        if !x.is_finite() || x < -NORMALIZATION_TOL || x > 1.0 + NORMALIZATION_TOL {
            return Err(Error::Normalization(format!("{what} population {i} = {x}")));
        }
    }
    Ok(())
}

/// Populations on every sample of `grid`:
///
/// ```text
/// p(t) = Phi(t) [ p(0) + int_0^t Phi(t')^-1 b(t') dt' ],   Phi = T exp(int C)
/// ```
///
/// `Phi` and `Phi^-1` advance together in one sweep with midpoint factors;
/// the source integral uses the trapezoid rule.
pub fn population_trajectory(
    sys: &PopulationSystem,
    rho0_diag: &[f64],
    grid: &TimeGrid,
) -> Result<Vec<Vec<f64>>> {
    let n = sys.dim;
    if rho0_diag.len() != n {
        return Err(Error::Dimension(format!(
            "{} initial populations for dimension {n}",
            rho0_diag.len()
        )));
    }
    let total: f64 = rho0_diag.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::Normalization(format!(
            "initial populations sum to {total}"
        )));
    }
    check_populations(rho0_diag, "initial")?;
    let last = n - 1;
    let x0 = DVector::from_iterator(last, rho0_diag[..last].iter().copied());
    let mut phi = DMatrix::<f64>::identity(last, last);
    let mut phi_inv = DMatrix::<f64>::identity(last, last);
    let mut acc = DVector::<f64>::zeros(last);
    let mut all_zero = true;
    let mut out = Vec::with_capacity(grid.samples());
    out.push(rho0_diag.to_vec());
    let mut weighted_prev = sys.source(grid.time(0));
    for step in 0..grid.samples() - 1 {
        let t = grid.time(step);
        let t_next = grid.time(step + 1);
        let h = t_next - t;
        let cm = sys.c_matrix(t + 0.5 * h);
        if !is_zero(&cm) {
            all_zero = false;
            let norm = inf_norm(&cm);
            if h * norm > TOE_STEP_BOUND * (1.0 + 1e-12) {
                return Err(Error::StepSize {
                    dt: h,
                    bound: TOE_STEP_BOUND / norm,
                });
            }
            phi = (&cm * h).exp() * phi;
            phi_inv = phi_inv * (&cm * (-h)).exp();
        }
        let b_next = sys.source(t_next);
        let weighted_next = &phi_inv * &b_next;
        if weighted_prev.iter().any(|x| *x != 0.0) || weighted_next.iter().any(|x| *x != 0.0) {
            all_zero = false;
            acc += (&weighted_prev + &weighted_next) * (0.5 * h);
        }
        weighted_prev = weighted_next;
        if all_zero {
            out.push(rho0_diag.to_vec());
            continue;
        }
        let x = &phi * (&x0 + &acc);
        let mut p: Vec<f64> = x.iter().copied().collect();
        p.push(1.0 - p.iter().sum::<f64>());
        check_populations(&p, "adiabatic")?;
        out.push(p);
    }
    Ok(out)
}

/// Populations at time `t`, integrating from `t0` with step at most `dt`.
pub fn population_solution(
    sys: &PopulationSystem,
    rho0_diag: &[f64],
    t0: f64,
    t: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    if t == t0 {
        return Ok(rho0_diag.to_vec());
    }
    let steps = (((t - t0) / dt) * (1.0 - 1e-12)).ceil().max(1.0);
    let grid = TimeGrid::with_samples(t0, t, steps as usize + 1)?;
    Ok(population_trajectory(sys, rho0_diag, &grid)?.pop().unwrap())
}

/// Coherences `rho_{l_i m_i}` (with `l_i < m_i`) whose gaps `E_l - E_m`
/// coincide over the whole grid and which are linked by nonzero cross
/// coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoupledCoherenceSystem {
    pub pairs: Vec<(usize, usize)>,
}

impl CoupledCoherenceSystem {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        self.pairs.contains(&key)
    }

    /// Checks resonance at every sample and that no level appears twice in
    /// the same slot.
    pub fn validate(&self, data: &InstantaneousData, gap_tol: f64) -> Result<()> {
        let n = data.dim();
        if self.pairs.is_empty() {
            return Err(Error::Coupling("empty coherence system".into()));
        }
        for &(l, m) in &self.pairs {
            if l >= n || m >= n || l >= m {
                return Err(Error::Coupling(format!("invalid pair ({l}, {m})")));
            }
        }
        for (a, &(la, ma)) in self.pairs.iter().enumerate() {
            for &(lb, mb) in &self.pairs[a + 1..] {
                if la == lb || ma == mb {
                    return Err(Error::Coupling(format!(
                        "pairs ({la}, {ma}) and ({lb}, {mb}) share a level in the same slot"
                    )));
                }
            }
        }
        let (l0, m0) = self.pairs[0];
        for k in 0..data.grid().samples() {
            let g0 = data.gap(l0, m0, k);
            for &(l, m) in &self.pairs[1..] {
                let d = (data.gap(l, m, k) - g0).abs();
                if d > gap_tol {
                    return Err(Error::Coupling(format!(
                        "pairs ({l0}, {m0}) and ({l}, {m}) fall out of resonance at sample {k} (mismatch {d:e})"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

/// Groups the coherences `(l, m)`, `l < m`, into resonant blocks. Every
/// coherence appears in exactly one group; singletons are uncoupled. Chains
/// of pairwise-coupled coherences form one group.
pub fn detect_coupled_pairs(data: &InstantaneousData, gap_tol: f64) -> Vec<CoupledCoherenceSystem> {
    let n = data.dim();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|l| ((l + 1)..n).map(move |m| (l, m)))
        .collect();
    let samples = data.grid().samples();
    let mut parent: Vec<usize> = (0..pairs.len()).collect();
    for a in 0..pairs.len() {
        for b in (a + 1)..pairs.len() {
            let (la, ma) = pairs[a];
            let (lb, mb) = pairs[b];
            let resonant =
                (0..samples).all(|k| (data.gap(la, ma, k) - data.gap(lb, mb, k)).abs() <= gap_tol);
            if !resonant {
                continue;
            }
            let linked = data.coeffs.iter().any(|t| {
                t.get(la, ma, lb, mb).norm() > COUPLING_FLOOR
                    || t.get(lb, mb, la, ma).norm() > COUPLING_FLOOR
            });
            if linked {
                let ra = find(&mut parent, a);
                let rb = find(&mut parent, b);
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for (idx, &p) in pairs.iter().enumerate() {
        let root = find(&mut parent, idx);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, g)) => g.push(p),
            None => groups.push((root, vec![p])),
        }
    }
    groups
        .into_iter()
        .map(|(_, pairs)| CoupledCoherenceSystem { pairs })
        .collect()
}

/// `rho_ij(t) = exp(i dynamical + i geometric) exp(int c(i, j, i, j) dt) rho_ij(0)`
/// for a coherence not resonantly coupled to any other.
pub fn coherence_solution_uncoupled(
    data: &InstantaneousData,
    i: usize,
    j: usize,
    rho0_ij: C64,
    t: f64,
) -> Result<C64> {
    data.check_level(i)?;
    data.check_level(j)?;
    if i == j {
        return Err(Error::Param("a coherence needs two distinct levels".into()));
    }
    data.check_time(t)?;
    let groups = detect_coupled_pairs(data, data.default_gap_tol());
    if let Some(g) = groups.iter().find(|g| g.contains(i, j)) {
        if g.len() > 1 {
            return Err(Error::Coupling(format!(
                "coherence ({i}, {j}) is resonantly coupled to {} others: {:?}",
                g.len() - 1,
                g.pairs
            )));
        }
    }
    Ok(uncoupled_unchecked(data, i, j, rho0_ij, t))
}

fn uncoupled_unchecked(data: &InstantaneousData, i: usize, j: usize, rho0_ij: C64, t: f64) -> C64 {
    let phase = data.dynamical_phase(i, j, t) + data.geometric_phase(i, j, t);
    rho0_ij * cis(phase) * data.dissipative_integral(i, j, t).exp()
}

/// Resonant block: with `beta_i = int (a_{m_i} - a_{l_i}) dt`,
///
/// ```text
/// A_ik(t) = c(l_i, m_i, l_k, m_k) exp(i (beta_k - beta_i))
/// rho_i(t) = exp(-i int (E_{l_i} - E_{m_i}) + i beta_i) [T exp(int A)]_ik rho_k(0)
/// ```
///
/// The time-ordered product uses steps of at most `dt`, aligned with the
/// sample grid of `data`.
pub fn coherence_solution_coupled(
    data: &InstantaneousData,
    sys: &CoupledCoherenceSystem,
    rho0: &[C64],
    t: f64,
    dt: f64,
) -> Result<Vec<C64>> {
    sys.validate(data, data.default_gap_tol())?;
    data.check_time(t)?;
    let m = sys.len();
    if rho0.len() != m {
        return Err(Error::Dimension(format!(
            "{} initial coherences for a block of {m}",
            rho0.len()
        )));
    }
    let pairs = sys.pairs.clone();
    let a_fn = |s: f64| -> CMatrix {
        let beta: Vec<f64> = pairs
            .iter()
            .map(|&(l, mm)| data.geometric_phase(l, mm, s))
            .collect();
        CMatrix::from_fn(m, m, |i, k| {
            let (li, mi) = pairs[i];
            let (lk, mk) = pairs[k];
            let coeff = data.coeff_entry_at(li, mi, lk, mk, s);
            if coeff == c(0.0, 0.0) {
                coeff
            } else {
                coeff * cis(beta[k] - beta[i])
            }
        })
    };
    let grid = data.grid();
    let t0 = grid.t0();
    let mut u = CMatrix::identity(m, m);
    let mut start = t0;
    let mut k = 1;
    while start < t {
        let knot = if k < grid.samples() { grid.time(k) } else { t };
        let end = knot.min(t);
        if end > start {
            u = time_ordered_exp(&a_fn, start, end, dt)? * u;
        }
        start = end;
        k += 1;
    }
    let x0 = nalgebra::DVector::from_column_slice(rho0);
    let x = u * x0;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(i, &(l, mm))| {
            let phase = data.dynamical_phase(l, mm, t) + data.geometric_phase(l, mm, t);
            cis(phase) * x[i]
        })
        .collect())
}

/// Full adiabatic-limit state on every sample of `data`'s grid: populations
/// from the population system, coherences from the uncoupled formula or, for
/// resonant blocks, the coupled one. The result is tagged instantaneous and
/// not re-validated.
pub fn closed_form_states(
    data: &InstantaneousData,
    rho0_h: &DensityMatrix,
) -> Result<Vec<DensityMatrix>> {
    let n = data.dim();
    if rho0_h.dim() != n {
        return Err(Error::Dimension(format!(
            "initial state has dimension {}, data has {n}",
            rho0_h.dim()
        )));
    }
    if rho0_h.basis() != Basis::Instantaneous {
        return Err(Error::Tag(format!(
            "closed forms start from an instantaneous-basis state, got {:?}",
            rho0_h.basis()
        )));
    }
    let grid = data.grid();
    let sys = PopulationSystem::from_data(data)?;
    let pops = population_trajectory(&sys, &rho0_h.populations(), &grid)?;
    let groups = detect_coupled_pairs(data, data.default_gap_tol());
    let mut out: Vec<CMatrix> = pops
        .iter()
        .map(|p| CMatrix::from_fn(n, n, |i, j| if i == j { c(p[i], 0.0) } else { c(0.0, 0.0) }))
        .collect();
    for group in &groups {
        let rho0: Vec<C64> = group.pairs.iter().map(|&(l, m)| rho0_h.get(l, m)).collect();
        for (k, t) in grid.times().enumerate() {
            let values = if group.len() == 1 {
                let (l, m) = group.pairs[0];
                vec![uncoupled_unchecked(data, l, m, rho0[0], t)]
            } else {
                coherence_solution_coupled(data, group, &rho0, t, grid.dt())?
            };
            for (&(l, m), v) in group.pairs.iter().zip(values) {
                out[k][(l, m)] = v;
                out[k][(m, l)] = v.conj();
            }
        }
    }
    Ok(out
        .into_iter()
        .map(|m| DensityMatrix::from_parts_unchecked(m, Basis::Instantaneous))
        .collect())
}
