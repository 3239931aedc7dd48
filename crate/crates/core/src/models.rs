//! Spin-1/2 in a precessing magnetic field, with a dephasing or a thermal
//! reservoir acting in the frame that diagonalizes the rotating-frame
//! Hamiltonian.
//!
//! Frames, all related by unitary conjugation:
//!
//! ```text
//! lab (Fixed):       H = muB sigma . n(theta, phi),  phi = omega t
//! Rotating:          rho_lab = R(phi) rho_rot R(phi)^dagger,  R = diag(e^{-i phi/2}, e^{i phi/2})
//! Diagonal:          rho_rot = D rho_D D,  D = (sqrt(1+Lambda) sz + sqrt(1-Lambda) sx) / sqrt(2)
//! Instantaneous:     rho_lab = U rho^H U^dagger,  U = [u_lower, u_upper]
//! ```
//!
//! `u_upper = (cos(theta/2), sin(theta/2) e^{i phi})`,
//! `u_lower = (-sin(theta/2) e^{-i phi}, cos(theta/2))`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::density::{Basis, DensityMatrix};
use crate::error::{Error, Result};
use crate::liouville::{DissipatorSpec, LindbladTerm};
use crate::matrix::{self, c, cis, CMatrix};
use crate::model::{HamiltonianFn, Model};
use crate::path::{ParameterPath, Schedule};

pub const LOWER: usize = 0;
pub const UPPER: usize = 1;

/// Smallest admissible distance of `theta` from the poles.
pub const MIN_THETA: f64 = 1e-6;
/// Largest admissible `k / lambda1`.
pub const WEAK_COUPLING_LIMIT: f64 = 0.05;
/// Largest `omega / muB` accepted by the oracles.
pub const ADIABATIC_LIMIT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinModelParams {
    /// Product of magnetic moment and field strength.
    pub mu_b: f64,
    /// Cone half-angle of the precessing field, in `(0, pi)`.
    pub theta: f64,
    /// Precession frequency.
    pub omega: f64,
    /// Dissipation rate.
    pub k: f64,
    /// Thermal occupancy; zero for pure dephasing.
    pub n_bar: f64,
}

impl SpinModelParams {
    pub fn new(mu_b: f64, theta: f64, omega: f64, k: f64, n_bar: f64) -> Result<Self> {
        let p = Self {
            mu_b,
            theta,
            omega,
            k,
            n_bar,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu_b, self.theta, self.omega, self.k, self.n_bar]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Param("spin parameters must be finite".into()));
        }
        if !(self.mu_b > 0.0) {
            return Err(Error::Param(format!(
                "mu_b must be positive, got {}",
                self.mu_b
            )));
        }
        if !(self.theta >= MIN_THETA && self.theta <= PI - MIN_THETA) {
            return Err(Error::Param(format!(
                "theta must lie in (0, pi) away from the poles, got {}",
                self.theta
            )));
        }
        if !(self.omega > 0.0) {
            return Err(Error::Param(format!(
                "omega must be positive, got {}",
                self.omega
            )));
        }
        if !(self.k >= 0.0) {
            return Err(Error::Param(format!("k must be >= 0, got {}", self.k)));
        }
        if !(self.n_bar >= 0.0) {
            return Err(Error::Param(format!(
                "n_bar must be >= 0, got {}",
                self.n_bar
            )));
        }
        let ratio = self.k / self.lambda1();
        if ratio > WEAK_COUPLING_LIMIT {
            return Err(Error::Param(format!(
                "weak coupling requires k / lambda1 <= {WEAK_COUPLING_LIMIT}, got {ratio:e}"
            )));
        }
        Ok(())
    }

    /// `sqrt((muB cos theta - omega/2)^2 + muB^2 sin^2 theta)`.
    pub fn lambda1(&self) -> f64 {
        let a = self.mu_b * self.theta.cos() - 0.5 * self.omega;
        let b = self.mu_b * self.theta.sin();
        a.hypot(b)
    }

    /// `(muB cos theta - omega/2) / lambda1`.
    pub fn big_lambda(&self) -> f64 {
        (self.mu_b * self.theta.cos() - 0.5 * self.omega) / self.lambda1()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    /// Guard for the closed-form oracles.
    pub fn check_oracle_regime(&self) -> Result<()> {
        let adiabatic = self.omega / self.mu_b;
        let weak = self.k / self.lambda1();
        if adiabatic > ADIABATIC_LIMIT || weak > WEAK_COUPLING_LIMIT {
            return Err(Error::Regime(format!(
                "oracle needs omega/muB <= {ADIABATIC_LIMIT} and k/lambda1 <= {WEAK_COUPLING_LIMIT}, \
                 got {adiabatic:e} and {weak:e}"
            )));
        }
        Ok(())
    }
}

/// Reservoir attached to the spin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinReservoir {
    Closed,
    Dephasing,
    Thermal,
}

/// Unit vector with polar angle `theta` and azimuth `phi`.
pub fn field_direction(theta: f64, phi: f64) -> [f64; 3] {
    [
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    ]
}

/// `muB sigma . n`.
pub fn lab_hamiltonian(mu_b: f64, n: &[f64]) -> CMatrix {
    let h = matrix::sigma_x() * c(n[0], 0.0)
        + matrix::sigma_y() * c(n[1], 0.0)
        + matrix::sigma_z() * c(n[2], 0.0);
    h * c(mu_b, 0.0)
}

/// `diag(e^{-i phi/2}, e^{i phi/2})`.
pub fn rotation(phi: f64) -> CMatrix {
    let mut r = CMatrix::zeros(2, 2);
    r[(0, 0)] = cis(-0.5 * phi);
    r[(1, 1)] = cis(0.5 * phi);
    r
}

/// Involution diagonalizing the rotating-frame Hamiltonian: `D H_rot D = lambda1 sz`.
pub fn diagonalizer(p: &SpinModelParams) -> CMatrix {
    let l = p.big_lambda().clamp(-1.0, 1.0);
    let a = ((1.0 + l) / 2.0).sqrt();
    let b = ((1.0 - l) / 2.0).sqrt();
    matrix::sigma_z() * c(a, 0.0) + matrix::sigma_x() * c(b, 0.0)
}

/// Instantaneous eigenvectors `[u_lower, u_upper]` of `H_lab(t)`.
pub fn instantaneous_frame(p: &SpinModelParams, t: f64) -> CMatrix {
    let phi = p.omega * t;
    let (s, co) = (0.5 * p.theta).sin_cos();
    let mut u = CMatrix::zeros(2, 2);
    u[(0, LOWER)] = cis(-phi) * (-s);
    u[(1, LOWER)] = c(co, 0.0);
    u[(0, UPPER)] = c(co, 0.0);
    u[(1, UPPER)] = cis(phi) * s;
    u
}

/// Closed precession loop `n(theta, 2 pi s)` with period `2 pi / omega`.
pub fn precession_path(p: &SpinModelParams) -> Result<ParameterPath> {
    let theta = p.theta;
    ParameterPath::new(
        3,
        Arc::new(move |s| field_direction(theta, 2.0 * PI * s).to_vec()),
        Schedule::Linear,
        p.period(),
    )?
    .closed()
}

fn jump_operators(p: &SpinModelParams, reservoir: SpinReservoir, phi: f64) -> Vec<LindbladTerm> {
    let d = diagonalizer(p);
    let w = rotation(phi) * &d;
    let lab = |o: CMatrix| &w * o * w.adjoint();
    let mut terms = Vec::new();
    let mut push = |op: CMatrix, rate: f64| {
        if rate > 0.0 {
            terms.push(LindbladTerm::new(op, rate).expect("validated rate"));
        }
    };
    match reservoir {
        SpinReservoir::Closed => {}
        SpinReservoir::Dephasing => push(lab(matrix::sigma_z()), 0.5 * p.k),
        SpinReservoir::Thermal => {
            push(lab(matrix::sigma_minus()), 2.0 * p.k * (p.n_bar + 1.0));
            push(lab(matrix::sigma_plus()), 2.0 * p.k * p.n_bar);
        }
    }
    terms
}

/// Lab-frame jump operators at time `t` on the uniform precession loop.
pub fn lindblad_terms(p: &SpinModelParams, reservoir: SpinReservoir, t: f64) -> Vec<LindbladTerm> {
    jump_operators(p, reservoir, p.omega * t)
}

/// Spin model driven along `path`, whose points are field directions.
///
/// The reservoir frame uses `D` built from the path's mean drive frequency,
/// and the jump operators follow the azimuth of the current field direction.
pub fn spin_model_on_path(
    p: &SpinModelParams,
    reservoir: SpinReservoir,
    path: ParameterPath,
) -> Result<Model> {
    p.validate()?;
    if path.k_dim() != 3 {
        return Err(Error::Path(format!(
            "spin models need 3-component field directions, got {}",
            path.k_dim()
        )));
    }
    if reservoir == SpinReservoir::Dephasing && p.n_bar != 0.0 {
        return Err(Error::Param(format!(
            "dephasing model requires n_bar = 0, got {}",
            p.n_bar
        )));
    }
    let q = SpinModelParams {
        omega: path.drive_frequency(),
        ..*p
    };
    q.validate()?;
    let mu_b = p.mu_b;
    let h: HamiltonianFn = Arc::new(move |_, k| lab_hamiltonian(mu_b, k));
    let dissipator = if reservoir == SpinReservoir::Closed || p.k == 0.0 {
        DissipatorSpec::None
    } else {
        DissipatorSpec::Lindblad(Arc::new(move |_, k| {
            jump_operators(&q, reservoir, k[1].atan2(k[0]))
        }))
    };
    Model::new(2, h, dissipator, path)
}

pub fn spin_model(p: &SpinModelParams, reservoir: SpinReservoir) -> Result<Model> {
    spin_model_on_path(p, reservoir, precession_path(p)?)
}

pub fn spin_closed_model(p: &SpinModelParams) -> Result<Model> {
    spin_model(p, SpinReservoir::Closed)
}

/// Dephasing at rate `k/2` through `sz` in the diagonal frame.
pub fn spin_dephasing_model(p: &SpinModelParams) -> Result<Model> {
    spin_model(p, SpinReservoir::Dephasing)
}

/// Thermal bath: decay `2k(n+1)` through `sigma_-`, excitation `2kn` through
/// `sigma_+`, both in the diagonal frame.
pub fn spin_thermal_model(p: &SpinModelParams) -> Result<Model> {
    spin_model(p, SpinReservoir::Thermal)
}

fn check_instantaneous(rho: &DensityMatrix) -> Result<()> {
    if rho.dim() != 2 {
        return Err(Error::Dimension(format!(
            "spin oracle needs a 2x2 state, got {}",
            rho.dim()
        )));
    }
    if rho.basis() != Basis::Instantaneous {
        return Err(Error::Tag(format!(
            "oracle takes an instantaneous-basis state, got {:?}",
            rho.basis()
        )));
    }
    Ok(())
}

fn oracle_state(
    p: &SpinModelParams,
    rho0: &DensityMatrix,
    t: f64,
    upper: f64,
    coherence_decay: f64,
) -> Result<DensityMatrix> {
    let phase = -2.0 * p.mu_b * t - p.omega * (1.0 - p.theta.cos()) * t;
    let ul = rho0.get(UPPER, LOWER) * cis(phase) * (-coherence_decay * t).exp();
    let mut m = CMatrix::zeros(2, 2);
    m[(UPPER, UPPER)] = c(upper, 0.0);
    m[(LOWER, LOWER)] = c(1.0 - upper, 0.0);
    m[(UPPER, LOWER)] = ul;
    m[(LOWER, UPPER)] = ul.conj();
    DensityMatrix::with_basis(m, Basis::Instantaneous)
}

/// Adiabatic closed form of the dephasing model in the instantaneous basis.
pub fn dephasing_oracle(
    p: &SpinModelParams,
    rho0_h: &DensityMatrix,
    t: f64,
) -> Result<DensityMatrix> {
    p.check_oracle_regime()?;
    check_instantaneous(rho0_h)?;
    let upper = rho0_h.get(UPPER, UPPER).re;
    oracle_state(p, rho0_h, t, upper, p.k)
}

/// Adiabatic closed form of the thermal model in the instantaneous basis.
pub fn thermal_oracle(
    p: &SpinModelParams,
    rho0_h: &DensityMatrix,
    t: f64,
) -> Result<DensityMatrix> {
    p.check_oracle_regime()?;
    check_instantaneous(rho0_h)?;
    let g = 1.0 + 2.0 * p.n_bar;
    let stationary = p.n_bar / g;
    let upper0 = rho0_h.get(UPPER, UPPER).re;
    let upper = (upper0 - stationary) * (-2.0 * p.k * g * t).exp() + stationary;
    oracle_state(p, rho0_h, t, upper, p.k * g)
}

/// Unitary `W` with `rho_lab = W rho_basis W^dagger`.
fn to_lab_unitary(p: &SpinModelParams, t: f64, basis: Basis) -> CMatrix {
    let phi = p.omega * t;
    match basis {
        Basis::Fixed => matrix::identity(2),
        Basis::Rotating => rotation(phi),
        Basis::Diagonal => rotation(phi) * diagonalizer(p),
        Basis::Instantaneous => instantaneous_frame(p, t),
    }
}

/// Re-expresses a spin state given in basis `from` in basis `to` at time `t`.
pub fn frame_transform(
    rho: &DensityMatrix,
    p: &SpinModelParams,
    t: f64,
    from: Basis,
    to: Basis,
) -> Result<DensityMatrix> {
    if rho.basis() != from {
        return Err(Error::Tag(format!(
            "state is tagged {:?}, transform expects {from:?}",
            rho.basis()
        )));
    }
    if rho.dim() != 2 {
        return Err(Error::Dimension(format!(
            "spin frames are 2x2, got {}",
            rho.dim()
        )));
    }
    if from == to {
        return Ok(rho.clone());
    }
    let w_from = to_lab_unitary(p, t, from);
    let w_to = to_lab_unitary(p, t, to);
    Ok(rho.conjugated(&(w_from.adjoint() * w_to), to))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::{integrate, to_instantaneous_basis};
    use crate::matrix::{hermitian_eigen, max_abs, C64};
    use crate::path::TimeGrid;
    use crate::spectral::{FrameSeries, GaugePolicy};

    fn params(omega: f64, k: f64, n_bar: f64) -> SpinModelParams {
        SpinModelParams::new(1.0, PI / 3.0, omega, k, n_bar).unwrap()
    }

    fn lindblad_action(terms: &[LindbladTerm], rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(2, 2);
        for term in terms {
            let l = term.op();
            let ld = l.adjoint();
            let ldl = &ld * l;
            let jump = l * rho * &ld;
            let anti = (&ldl * rho + rho * &ldl) * c(0.5, 0.0);
            out += (jump - anti) * c(term.rate(), 0.0);
        }
        out
    }

    fn random_state(seed: u64) -> CMatrix {
        let x = |n: u64| ((seed * 7919 + n * 104729) % 1000) as f64 / 1000.0 - 0.5;
        let a = crate::matrix::from_real(2, 2, &[x(1), x(2), x(3), x(4)])
            + crate::matrix::from_real(2, 2, &[x(5), x(6), x(7), x(8)]) * C64::new(0.0, 1.0);
        let m = &a * a.adjoint();
        let tr = crate::matrix::trace(&m);
        m / tr
    }

    // Paper ordering: index 0 = upper level.
    fn paper_frame(p: &SpinModelParams, t: f64) -> CMatrix {
        let u = instantaneous_frame(p, t);
        let mut v = CMatrix::zeros(2, 2);
        v.set_column(0, &u.column(UPPER));
        v.set_column(1, &u.column(LOWER));
        v
    }

    fn sigma_n(p: &SpinModelParams, phi: f64) -> CMatrix {
        let (st, ct) = p.theta.sin_cos();
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = c(ct, 0.0);
        m[(0, 1)] = cis(-phi) * (-st);
        m[(1, 0)] = cis(phi) * (-st);
        m[(1, 1)] = c(-ct, 0.0);
        m
    }

    fn sigma_plus_t(p: &SpinModelParams, phi: f64) -> CMatrix {
        let (s, co) = (0.5 * p.theta).sin_cos();
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = c(0.5 * p.theta.sin(), 0.0);
        m[(0, 1)] = cis(-phi) * (co * co);
        m[(1, 0)] = cis(phi) * (-s * s);
        m[(1, 1)] = c(-0.5 * p.theta.sin(), 0.0);
        m * cis(phi)
    }

    fn in_paper_frame(
        p: &SpinModelParams,
        reservoir: SpinReservoir,
        t: f64,
        rho_p: &CMatrix,
    ) -> CMatrix {
        let v = paper_frame(p, t);
        let lab = &v * rho_p * v.adjoint();
        v.adjoint() * lindblad_action(&lindblad_terms(p, reservoir, t), &lab) * &v
    }

    #[test]
    fn lab_hamiltonian_has_eigenvalues_plus_minus_mu_b() {
        let p = SpinModelParams::new(1.7, 1.1, 0.01, 0.0, 0.0).unwrap();
        let model = spin_closed_model(&p).unwrap();
        let (e, _) = hermitian_eigen(&model.hamiltonian(0.0));
        assert!((e[0] + 1.7).abs() < 1e-12 && (e[1] - 1.7).abs() < 1e-12);
    }

    #[test]
    fn degenerate_theta_rejected() {
        for theta in [0.0, 1e-9, PI, -0.3] {
            let err = SpinModelParams::new(1.0, theta, 0.01, 0.0, 0.0).unwrap_err();
            assert!(matches!(err, Error::Param(_)), "{err:?}");
        }
    }

    #[test]
    fn strong_coupling_rejected() {
        let err = SpinModelParams::new(1.0, 1.0, 0.01, 0.2, 0.0).unwrap_err();
        assert!(matches!(err, Error::Param(_)));
    }

    #[test]
    fn dephasing_requires_zero_occupancy() {
        let p = params(0.01, 0.01, 0.5);
        assert!(matches!(spin_dephasing_model(&p), Err(Error::Param(_))));
        assert!(spin_thermal_model(&p).is_ok());
    }

    #[test]
    fn diagonalizer_is_involution() {
        let p = params(0.01, 0.0, 0.0);
        let d = diagonalizer(&p);
        assert!(max_abs(&(&d * &d - matrix::identity(2))) < 1e-12);
    }

    #[test]
    fn diagonalizer_diagonalizes_rotating_hamiltonian() {
        let p = params(0.3, 0.0, 0.0);
        let h_rot = lab_hamiltonian(p.mu_b, &field_direction(p.theta, 0.0))
            - matrix::sigma_z() * c(0.5 * p.omega, 0.0);
        let d = diagonalizer(&p);
        let target = matrix::sigma_z() * c(p.lambda1(), 0.0);
        assert!(max_abs(&(&d * h_rot * &d - target)) < 1e-12);
    }

    #[test]
    fn big_lambda_static_limit() {
        for theta in [PI / 3.0, 2.0 * PI / 3.0, 0.4] {
            let p = SpinModelParams::new(2.0, theta, 1e-12, 0.0, 0.0).unwrap();
            assert!((p.lambda1() - 2.0).abs() < 1e-11);
            assert!((p.big_lambda() - theta.cos()).abs() < 1e-11);
            assert!(p.big_lambda().abs() <= 1.0);
        }
    }

    #[test]
    fn instantaneous_frame_diagonalizes_lab_hamiltonian() {
        let p = params(0.2, 0.0, 0.0);
        for t in [0.0, 1.3, 7.7] {
            let u = instantaneous_frame(&p, t);
            let h = lab_hamiltonian(p.mu_b, &field_direction(p.theta, p.omega * t));
            let d = u.adjoint() * h * &u;
            let target = crate::matrix::diag_real(&[-1.0, 1.0]);
            assert!(max_abs(&(d - target)) < 1e-12);
        }
    }

    #[test]
    fn instantaneous_hamiltonian_matches_closed_form() {
        let p = params(0.2, 0.0, 0.0);
        let t = 2.1;
        let phi = p.omega * t;
        let v = paper_frame(&p, t);
        let dt = 1e-6;
        let dv = (paper_frame(&p, t + dt) - paper_frame(&p, t - dt)) / c(2.0 * dt, 0.0);
        let h = lab_hamiltonian(p.mu_b, &field_direction(p.theta, phi));
        let h_eff = v.adjoint() * h * &v - v.adjoint() * dv * C64::new(0.0, 1.0);
        let expected = matrix::sigma_z() * c(p.mu_b + 0.5 * p.omega, 0.0)
            - sigma_n(&p, phi) * c(0.5 * p.omega, 0.0);
        assert!(max_abs(&(h_eff - expected)) < 1e-8);
    }

    #[test]
    fn dephasing_expansion_termwise() {
        let p = params(0.37, 0.04, 0.0);
        let l = p.big_lambda();
        let r = (1.0 - l * l).sqrt();
        for (n, t) in [0.0, 2.3, 11.0].into_iter().enumerate() {
            let phi = p.omega * t;
            let rho = random_state(n as u64 + 1);
            let sn = sigma_n(&p, phi);
            let sp = sigma_plus_t(&p, phi);
            let sm = sp.adjoint();
            let e = |x: f64| cis(x);
            let expansion = &sn * &rho * &sn * c(l * l, 0.0)
                + ((&sn * &rho * &sp + &sp * &rho * &sn) * e(-phi)
                    + (&sn * &rho * &sm + &sm * &rho * &sn) * e(phi))
                    * c(l * r, 0.0)
                + (&sp * &rho * &sp * e(-2.0 * phi)
                    + &sm * &rho * &sm * e(2.0 * phi)
                    + &sp * &rho * &sm
                    + &sm * &rho * &sp)
                    * c(1.0 - l * l, 0.0)
                - &rho;
            let lhs = in_paper_frame(&p, SpinReservoir::Dephasing, t, &rho);
            assert!(max_abs(&(lhs - expansion * c(0.5 * p.k, 0.0))) < 1e-10);
        }
    }

    fn thermal_expansion(p: &SpinModelParams, phi: f64, rho: &CMatrix) -> CMatrix {
        let l = p.big_lambda();
        let r = (1.0 - l * l).sqrt();
        let sn = sigma_n(p, phi);
        let sp = sigma_plus_t(p, phi);
        let sm = sp.adjoint();
        let e = |x: f64| cis(x);
        let sym = rho * c(-2.0, 0.0)
            + (&sn * rho * &sn - &sp * rho * &sp * e(-2.0 * phi) - &sm * rho * &sm * e(2.0 * phi))
                * c(1.0 - l * l, 0.0)
            + (&sp * rho * &sm + &sm * rho * &sp) * c(1.0 + l * l, 0.0)
            - ((&sn * rho * &sm + &sm * rho * &sn) * e(phi)
                + (&sp * rho * &sn + &sn * rho * &sp) * e(-phi))
                * c(l * r, 0.0);
        let x = &sn * c(l, 0.0) + (&sp * e(-phi) + &sm * e(phi)) * c(r, 0.0);
        let anti = rho * &x
            + &x * rho
            + (&sp * rho * &sm - &sm * rho * &sp) * c(2.0 * l, 0.0)
            + ((&sn * rho * &sp - &sp * rho * &sn) * e(-phi)
                + (&sm * rho * &sn - &sn * rho * &sm) * e(phi))
                * c(r, 0.0);
        sym * c(0.5 * (2.0 * p.n_bar + 1.0), 0.0) - anti * c(0.5, 0.0)
    }

    #[test]
    fn thermal_expansion_termwise() {
        let p = params(0.37, 0.04, 0.7);
        for (n, t) in [0.0, 2.3, 11.0].into_iter().enumerate() {
            let phi = p.omega * t;
            let rho = random_state(n as u64 + 11);
            let lhs = in_paper_frame(&p, SpinReservoir::Thermal, t, &rho);
            let rhs = thermal_expansion(&p, phi, &rho) * c(p.k, 0.0);
            assert!(max_abs(&(lhs - rhs)) < 1e-10);
        }
    }

    #[test]
    fn frame_round_trips() {
        let p = params(0.01, 0.0, 0.0);
        let tags = [
            Basis::Fixed,
            Basis::Rotating,
            Basis::Diagonal,
            Basis::Instantaneous,
        ];
        let t = 37.0;
        for from in tags {
            let rho = DensityMatrix::with_basis(random_state(5), from).unwrap();
            for to in tags {
                let there = frame_transform(&rho, &p, t, from, to).unwrap();
                assert_eq!(there.basis(), to);
                let back = frame_transform(&there, &p, t, to, from).unwrap();
                assert!(max_abs(&(back.matrix() - rho.matrix())) < 1e-12);
            }
        }
    }

    #[test]
    fn frame_transform_checks_tag() {
        let p = params(0.01, 0.0, 0.0);
        let rho = DensityMatrix::with_basis(random_state(2), Basis::Rotating).unwrap();
        let err = frame_transform(&rho, &p, 0.0, Basis::Fixed, Basis::Diagonal).unwrap_err();
        assert!(matches!(err, Error::Tag(_)));
    }

    #[test]
    fn anchored_frames_match_analytic_gauge() {
        let p = params(0.05, 0.0, 0.0);
        let model = spin_closed_model(&p).unwrap();
        let grid = TimeGrid::new(0.0, p.period(), 0.5).unwrap();
        let frames = FrameSeries::build(&model, &grid, GaugePolicy::Anchored).unwrap();
        for (m, t) in grid.times().enumerate() {
            let diff = frames.spectrum(m).frame.clone() - instantaneous_frame(&p, t);
            assert!(max_abs(&diff) < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn diagonal_route_matches_instantaneous_projection() {
        let p = params(0.05, 0.01, 0.0);
        let model = spin_dephasing_model(&p).unwrap();
        let grid = TimeGrid::new(0.0, 20.0, 0.01).unwrap();
        let rho0_h = DensityMatrix::from_bloch(1.0, 0.0, 0.0, Basis::Instantaneous).unwrap();
        let rho0 = frame_transform(&rho0_h, &p, 0.0, Basis::Instantaneous, Basis::Fixed).unwrap();
        let traj = integrate(&model, &rho0, &grid).unwrap();
        let frames = FrameSeries::build(&model, &grid, GaugePolicy::Anchored).unwrap();
        let inst = to_instantaneous_basis(&traj, &frames).unwrap();
        let inst_states = inst.states_instant.unwrap();
        for m in [0, 700, 2000] {
            let t = grid.time(m);
            let rho_d =
                frame_transform(&traj.states[m], &p, t, Basis::Fixed, Basis::Diagonal).unwrap();
            let rho_h =
                frame_transform(&rho_d, &p, t, Basis::Diagonal, Basis::Instantaneous).unwrap();
            assert!(max_abs(&(rho_h.matrix() - inst_states[m].matrix())) < 1e-9);
        }
    }

    #[test]
    fn oracle_examples() {
        let p = params(0.01, 0.01, 0.0);
        let rho0 = DensityMatrix::from_bloch(1.0, 0.0, 0.0, Basis::Instantaneous).unwrap();
        let same = dephasing_oracle(&p, &rho0, 0.0).unwrap();
        assert!(max_abs(&(same.matrix() - rho0.matrix())) < 1e-15);
        let decayed = dephasing_oracle(&p, &rho0, 100.0).unwrap();
        let ratio = decayed.get(UPPER, LOWER).norm() / rho0.get(UPPER, LOWER).norm();
        assert!((ratio - (-1.0f64).exp()).abs() < 1e-12);
        assert!((decayed.get(UPPER, UPPER).re - 0.5).abs() < 1e-15);

        let closed = params(0.01, 0.0, 0.0);
        let after = dephasing_oracle(&closed, &rho0, closed.period()).unwrap();
        let arg = (after.get(UPPER, LOWER) / rho0.get(UPPER, LOWER)).arg();
        let expected = -2.0 * closed.period() - 2.0 * PI * (1.0 - closed.theta.cos());
        assert!(crate::matrix::wrap_angle(arg - expected).abs() < 1e-9);
        assert!((after.get(UPPER, LOWER).norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn thermal_oracle_examples() {
        let p = params(0.01, 0.01, 1.0);
        let excited =
            DensityMatrix::with_basis(crate::matrix::diag_real(&[0.0, 1.0]), Basis::Instantaneous)
                .unwrap();
        let t = 3.0 / (2.0 * p.k * 3.0);
        let rho = thermal_oracle(&p, &excited, t).unwrap();
        let exact = (2.0 / 3.0) * (-3.0f64).exp() + 1.0 / 3.0;
        assert!((rho.get(UPPER, UPPER).re - exact).abs() < 1e-12);
        assert!((rho.get(UPPER, UPPER).re - 0.36650).abs() < 1e-4);
        let late = thermal_oracle(&p, &excited, 1e5).unwrap();
        assert!((late.get(UPPER, UPPER).re - 1.0 / 3.0).abs() < 1e-12);

        let cold = params(0.01, 0.01, 0.0);
        let sup = DensityMatrix::from_bloch(1.0, 0.0, 0.0, Basis::Instantaneous).unwrap();
        let a = thermal_oracle(&cold, &sup, 50.0).unwrap();
        let b = dephasing_oracle(&cold, &sup, 50.0).unwrap();
        assert!((a.get(UPPER, LOWER) - b.get(UPPER, LOWER)).norm() < 1e-14);
    }

    #[test]
    fn oracles_enforce_regime() {
        let p = params(0.1, 0.01, 0.0);
        let rho0 = DensityMatrix::from_bloch(1.0, 0.0, 0.0, Basis::Instantaneous).unwrap();
        assert!(matches!(
            dephasing_oracle(&p, &rho0, 1.0),
            Err(Error::Regime(_))
        ));
        assert!(matches!(
            thermal_oracle(&p, &rho0, 1.0),
            Err(Error::Regime(_))
        ));
        let lab = DensityMatrix::from_bloch(1.0, 0.0, 0.0, Basis::Fixed).unwrap();
        let ok = params(0.01, 0.01, 0.0);
        assert!(matches!(
            dephasing_oracle(&ok, &lab, 1.0),
            Err(Error::Tag(_))
        ));
    }

    #[test]
    fn zero_temperature_fixed_point_is_diagonal_ground_state() {
        let p = params(0.1, 0.05 * 0.9, 0.0);
        let terms = jump_operators(&p, SpinReservoir::Thermal, 0.0);
        let w = diagonalizer(&p);
        let ground_d = crate::matrix::diag_real(&[0.0, 1.0]);
        let ground_lab = &w * ground_d * w.adjoint();
        assert!(max_abs(&lindblad_action(&terms, &ground_lab)) < 1e-14);
    }

    #[test]
    fn detailed_balance_in_diagonal_frame() {
        let p = SpinModelParams::new(1.0, PI / 3.0, 0.1, 0.04, 0.6).unwrap();
        let model = spin_thermal_model(&p).unwrap();
        let rho0 = DensityMatrix::from_bloch(0.0, 0.0, 1.0, Basis::Fixed).unwrap();
        let t_end = 400.0;
        let grid = TimeGrid::new(0.0, t_end, 0.04).unwrap();
        let traj = crate::liouville::integrate_with(
            &model,
            &rho0,
            &grid,
            crate::liouville::IntegrateOptions {
                record_stride: grid.samples() - 1,
                check_step: true,
            },
        )
        .unwrap();
        let last = traj.states.last().unwrap();
        let rho_d = frame_transform(last, &p, t_end, Basis::Fixed, Basis::Diagonal).unwrap();
        let ratio = rho_d.get(0, 0).re / rho_d.get(1, 1).re;
        assert!(
            (ratio - p.n_bar / (p.n_bar + 1.0)).abs() < 1e-6,
            "ratio {ratio}"
        );
        assert!(rho_d.get(0, 1).norm() < 1e-6);
    }

    #[test]
    fn closed_limits_of_both_models_coincide() {
        let p = params(0.05, 0.0, 0.0);
        let a = spin_dephasing_model(&p).unwrap();
        let b = spin_thermal_model(&p).unwrap();
        let rho0 = DensityMatrix::from_bloch(0.3, -0.2, 0.5, Basis::Fixed).unwrap();
        let grid = TimeGrid::new(0.0, 10.0, 0.01).unwrap();
        let ta = integrate(&a, &rho0, &grid).unwrap();
        let tb = integrate(&b, &rho0, &grid).unwrap();
        for (x, y) in ta.states.iter().zip(&tb.states) {
            assert_eq!(x.matrix(), y.matrix());
        }
    }
}
