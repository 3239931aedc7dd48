//! Instantaneous eigenframes, gauge fixing, Berry connections and geometric
//! phase differences.

use crate::error::{Error, Result};
use crate::matrix::{self, c, CMatrix, C64};
use crate::model::Model;
use crate::path::{cumulative_trapezoid, TimeGrid};

/// Minimum `|<u_i(t_m)|u_i(t_{m+1})>|` accepted between consecutive samples.
pub const MIN_OVERLAP: f64 = 0.5;

/// Eigen-decomposition of `H(t)`: energies ascending, eigenvectors as
/// columns of `frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub t: f64,
    pub energies: Vec<f64>,
    pub frame: CMatrix,
    pub gap_min: f64,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// `<u_i(self)|u_i(other)>`.
    pub fn overlap(&self, other: &Spectrum, i: usize) -> C64 {
        matrix::inner_columns(&self.frame, i, &other.frame, i)
    }

    fn rephase_column(&mut self, i: usize, phase: C64) {
        let mut col = self.frame.column_mut(i);
        col *= phase;
    }
}

/// Default degeneracy threshold `1e-8 * max |H_ij|`.
pub fn default_gap_tol(h: &CMatrix) -> f64 {
    1e-8 * matrix::max_abs(h)
}

pub fn eigendecompose(h: &CMatrix, gap_tol: f64) -> Result<Spectrum> {
    eigendecompose_at(h, 0.0, gap_tol)
}

/// Eigen-decomposition tagged with the sample time `t`.
pub fn eigendecompose_at(h: &CMatrix, t: f64, gap_tol: f64) -> Result<Spectrum> {
    if h.nrows() != h.ncols() {
        return Err(Error::Dimension(format!(
            "hamiltonian must be square, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    if !matrix::is_finite(h) {
        return Err(Error::NonFinite("hamiltonian"));
    }
    let (energies, frame) = matrix::hermitian_eigen(h);
    let mut gap_min = f64::INFINITY;
    for (level, w) in energies.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if gap < gap_tol || (gap_tol == 0.0 && gap == 0.0) {
            return Err(Error::Degeneracy {
                level,
                next: level + 1,
                gap,
                gap_tol,
            });
        }
        gap_min = gap_min.min(gap);
    }
    Ok(Spectrum {
        t,
        energies,
        frame,
        gap_min,
    })
}

fn check_pair(prev: &Spectrum, cur: &Spectrum) -> Result<()> {
    if prev.dim() != cur.dim() {
        return Err(Error::Dimension(format!(
            "spectra of dimension {} and {}",
            prev.dim(),
            cur.dim()
        )));
    }
    Ok(())
}

/// Rephases every column of `cur` so that `<u_i(prev)|u_i(cur)>` is real and
/// positive.
pub fn smooth_gauge(prev: &Spectrum, cur: &Spectrum) -> Result<Spectrum> {
    check_pair(prev, cur)?;
    let mut out = cur.clone();
    for i in 0..cur.dim() {
        let ov = prev.overlap(cur, i);
        let mag = ov.norm();
        if mag < MIN_OVERLAP {
            return Err(Error::Continuity {
                level: i,
                sample: 0,
                overlap: mag,
            });
        }
        out.rephase_column(i, ov.conj() / mag);
    }
    Ok(out)
}

/// How the free phase of each eigenvector is fixed along a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GaugePolicy {
    /// For each level, the component of largest modulus at the first
    /// sample is made real and positive at every sample. Single valued on
    /// closed loops, so `int a_i dt` carries the full geometric phase.
    #[default]
    Anchored,
    /// Each sample is aligned with the previous one by [`smooth_gauge`].
    /// The connection then vanishes and the phase of a closed loop appears
    /// only as the holonomy `<u(T)|u(0)>`; use
    /// [`pancharatnam_phase_difference`] for loop phases in this gauge.
    ParallelTransport,
}

/// Gauge-fixed spectra on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    grid: TimeGrid,
    spectra: Vec<Spectrum>,
    policy: GaugePolicy,
}

impl FrameSeries {
    /// Diagonalizes `H(t)` on `grid` with the default degeneracy threshold.
    pub fn build(model: &Model, grid: &TimeGrid, policy: GaugePolicy) -> Result<Self> {
        Self::build_with(model, grid, policy, None)
    }

    pub fn build_with(
        model: &Model,
        grid: &TimeGrid,
        policy: GaugePolicy,
        gap_tol: Option<f64>,
    ) -> Result<Self> {
        let spectra = grid
            .times()
            .map(|t| {
                let h = model.hamiltonian(t);
                let tol = gap_tol.unwrap_or_else(|| default_gap_tol(&h));
                eigendecompose_at(&h, t, tol)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_spectra(*grid, spectra, policy)
    }

    /// Gauge-fixes raw spectra and checks continuity between samples.
    pub fn from_spectra(
        grid: TimeGrid,
        mut spectra: Vec<Spectrum>,
        policy: GaugePolicy,
    ) -> Result<Self> {
        if spectra.len() != grid.samples() {
            return Err(Error::GridMismatch(format!(
                "{} spectra for a grid of {} samples",
                spectra.len(),
                grid.samples()
            )));
        }
        let n = spectra[0].dim();
        match policy {
            GaugePolicy::Anchored => {
                let anchors: Vec<usize> = (0..n)
                    .map(|i| {
                        let col = spectra[0].frame.column(i);
                        let best = col.iter().fold(0.0, |acc: f64, z| acc.max(z.norm()));
                        (0..n)
                            .find(|&r| col[r].norm() >= best * (1.0 - 1e-12))
                            .unwrap_or(0)
                    })
                    .collect();
                for (m, spec) in spectra.iter_mut().enumerate() {
                    if spec.dim() != n {
                        return Err(Error::Dimension("spectra change dimension".into()));
                    }
                    for (i, &r) in anchors.iter().enumerate() {
                        let z = spec.frame[(r, i)];
                        let mag = z.norm();
                        if mag < 1e-12 {
                            return Err(Error::Continuity {
                                level: i,
                                sample: m,
                                overlap: mag,
                            });
                        }
                        spec.rephase_column(i, z.conj() / mag);
                    }
                }
            }
            GaugePolicy::ParallelTransport => {
                for m in 1..spectra.len() {
                    let fixed =
                        smooth_gauge(&spectra[m - 1], &spectra[m]).map_err(|e| match e {
                            Error::Continuity { level, overlap, .. } => Error::Continuity {
                                level,
                                sample: m,
                                overlap,
                            },
                            other => other,
                        })?;
                    spectra[m] = fixed;
                }
            }
        }
        for m in 1..spectra.len() {
            for i in 0..n {
                let ov = spectra[m - 1].overlap(&spectra[m], i);
                if ov.norm() < MIN_OVERLAP || ov.re <= 0.0 {
                    return Err(Error::Continuity {
                        level: i,
                        sample: m,
                        overlap: ov.re,
                    });
                }
            }
        }
        Ok(Self {
            grid,
            spectra,
            policy,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn spectra(&self) -> &[Spectrum] {
        &self.spectra
    }

    pub fn spectrum(&self, m: usize) -> &Spectrum {
        &self.spectra[m]
    }

    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.spectra[0].dim()
    }

    pub fn policy(&self) -> GaugePolicy {
        self.policy
    }

    /// `E_i(t_m)` for all samples.
    pub fn energies_of(&self, i: usize) -> Vec<f64> {
        self.spectra.iter().map(|s| s.energies[i]).collect()
    }

    /// Smallest adjacent gap over the series.
    pub fn gap_min(&self) -> f64 {
        self.spectra
            .iter()
            .map(|s| s.gap_min)
            .fold(f64::INFINITY, f64::min)
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
}

/// `a_i(t_m) = Im <u_i | d u_i / dt>` sampled on the series grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BerryConnection {
    pub values: Vec<f64>,
    /// Largest `|Re <u_i | d u_i / dt>|`, which vanishes for normalized
    /// vectors up to discretization error.
    pub max_real_part: f64,
}

/// Central differences; second-order one-sided differences at the two ends.
pub fn berry_connection(series: &FrameSeries, i: usize) -> Result<BerryConnection> {
    series.check_level(i)?;
    let s = &series.spectra;
    let dt = series.grid.dt();
    let n = s.len();
    let mut values = Vec::with_capacity(n);
    let mut max_real_part: f64 = 0.0;
    for m in 0..n {
        let d = if n == 2 {
            (s[m].overlap(&s[1], i) - s[m].overlap(&s[0], i)) / dt
        } else if m == 0 {
            // second-order one-sided differences at the ends
            (s[0].overlap(&s[1], i) * 4.0 - s[0].overlap(&s[2], i) - c(3.0, 0.0)) / (2.0 * dt)
        } else if m + 1 == n {
            (c(3.0, 0.0) - s[m].overlap(&s[m - 1], i) * 4.0 + s[m].overlap(&s[m - 2], i))
                / (2.0 * dt)
        } else {
            (s[m].overlap(&s[m + 1], i) - s[m].overlap(&s[m - 1], i)) / (2.0 * dt)
        };
        values.push(d.im);
        max_real_part = max_real_part.max(d.re.abs());
    }
    Ok(BerryConnection {
        values,
        max_real_part,
    })
}

/// Cumulative `int_0^{t_m} (a_j - a_i) dt` at every sample.
pub fn geometric_phase_series(series: &FrameSeries, i: usize, j: usize) -> Result<Vec<f64>> {
    let ai = berry_connection(series, i)?;
    let aj = berry_connection(series, j)?;
    let diff: Vec<f64> = aj
        .values
        .iter()
        .zip(&ai.values)
        .map(|(b, a)| b - a)
        .collect();
    Ok(cumulative_trapezoid(&diff, series.grid.dt()))
}

/// `int (a_j - a_i) dt` over the whole series (trapezoid rule).
pub fn geometric_phase_difference(series: &FrameSeries, i: usize, j: usize) -> Result<f64> {
    Ok(*geometric_phase_series(series, i, j)?.last().unwrap())
}

/// Gauge-invariant loop phase `arg prod_m <u(t_m)|u(t_{m+1})> <u(t_M)|u(t_0)>`
/// of one level, in (-pi, pi].
pub fn pancharatnam_phase(series: &FrameSeries, i: usize) -> Result<f64> {
    series.check_level(i)?;
    let s = &series.spectra;
    let mut prod = c(1.0, 0.0);
    for w in s.windows(2) {
        let ov = w[0].overlap(&w[1], i);
        prod *= ov / ov.norm();
    }
    let close = s[s.len() - 1].overlap(&s[0], i);
    if close.norm() < MIN_OVERLAP {
        return Err(Error::Continuity {
            level: i,
            sample: s.len() - 1,
            overlap: close.norm(),
        });
    }
    prod *= close;
    Ok(prod.arg())
}

/// Closed-loop phase difference `(phase_j - phase_i)` wrapped to (-pi, pi].
pub fn pancharatnam_phase_difference(series: &FrameSeries, i: usize, j: usize) -> Result<f64> {
    Ok(matrix::wrap_angle(
        pancharatnam_phase(series, j)? - pancharatnam_phase(series, i)?,
    ))
}
