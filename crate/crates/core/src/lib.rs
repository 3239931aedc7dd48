//! Density-matrix dynamics of driven, weakly dissipative N-level systems in
//! the adiabatic limit.
//!
//! The crate integrates the Lindblad master equation in a fixed basis,
//! re-expresses trajectories in the instantaneous eigenbasis of `H(t)`, and
//! evaluates closed-form adiabatic solutions for populations and coherences.
//! The [`phases`] module splits the accumulated phase of each coherence into
//! dynamical, geometric and dissipative parts and decides whether the
//! dissipative part is geometric (depends only on the parameter path) or
//! time dependent.
//!
//! Conventions: `hbar = 1`; energies are sorted ascending, so level `0` is the
//! ground state; for a coherence `rho_ij` in the instantaneous basis,
//!
//! ```text
//! rho_ij(t) / rho_ij(0) = exp(i * dynamical + i * geometric + dissipative_log)
//! dynamical = -int (E_i - E_j) dt,   geometric = int (a_j - a_i) dt,
//! a_i = Im <u_i | d u_i / dt>.
//! ```

pub mod adiabatic;
pub mod cli;
pub mod density;
pub mod error;
pub mod liouville;
pub mod matrix;
pub mod model;
pub mod models;
pub mod path;
pub mod phases;
pub mod spectral;

pub use density::{bloch_vector, Basis, DensityMatrix};
pub use error::{Error, Result};
pub use liouville::{CoefficientTensor, DissipatorSpec, LindbladTerm, Trajectory};
pub use matrix::{CMatrix, CVector, C64};
pub use model::Model;
pub use path::{ParameterPath, Schedule, TimeGrid};
pub use spectral::{FrameSeries, GaugePolicy, Spectrum};
