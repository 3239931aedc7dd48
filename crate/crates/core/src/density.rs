//! Validated density matrices and the two-level Bloch representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, c, CMatrix, CVector, C64};

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;

/// Which frame a density matrix is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    /// Fixed (laboratory) basis.
    Fixed,
    /// Instantaneous eigenbasis of H(t), levels ordered by ascending energy.
    Instantaneous,
    /// Frame in which the effective (rotating-frame) Hamiltonian is diagonal.
    Diagonal,
    /// Frame co-rotating with the drive.
    Rotating,
}

/// Hermitian, unit-trace, positive semidefinite N x N matrix (N >= 2).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: CMatrix,
    basis: Basis,
}

impl DensityMatrix {
    /// Validates `mat` as a density matrix in the fixed basis.
    ///
    /// The Hermitian part `(M + M^dagger)/2` is taken before the trace and
    /// positivity checks.
    pub fn new(mat: CMatrix) -> Result<Self> {
        Self::with_basis(mat, Basis::Fixed)
    }

    pub fn with_basis(mat: CMatrix, basis: Basis) -> Result<Self> {
        Self::validated(mat, basis, TRACE_TOL, POSITIVITY_TOL)
    }

    pub(crate) fn validated(
        mat: CMatrix,
        basis: Basis,
        trace_tol: f64,
        positivity_tol: f64,
    ) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::Dimension(format!(
                "density matrix must be square, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.nrows() < 2 {
            return Err(Error::Dimension(format!(
                "density matrix dimension must be >= 2, got {}",
                mat.nrows()
            )));
        }
        if !matrix::is_finite(&mat) {
            return Err(Error::NonFinite("density matrix"));
        }
        let mat = matrix::hermitian_part(&mat);
        let deviation = (matrix::trace(&mat) - c(1.0, 0.0)).norm();
        if deviation > trace_tol {
            return Err(Error::Trace { deviation });
        }
        let min_eigenvalue = matrix::min_eigenvalue(&mat);
        if min_eigenvalue < -positivity_tol {
            return Err(Error::Positivity {
                min_eigenvalue,
                tolerance: positivity_tol,
            });
        }
        Ok(Self { mat, basis })
    }

    /// Projector onto the normalized state `psi`.
    pub fn pure(psi: &CVector, basis: Basis) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(Error::Param("zero state vector".into()));
        }
        let v = psi / c(norm, 0.0);
        Self::with_basis(&v * v.adjoint(), basis)
    }

    pub fn maximally_mixed(dim: usize, basis: Basis) -> Result<Self> {
        Self::with_basis(matrix::identity(dim) * c(1.0 / dim as f64, 0.0), basis)
    }

    /// Inverse of [`bloch_vector`].
    pub fn from_bloch(x: f64, y: f64, z: f64, basis: Basis) -> Result<Self> {
        let mat = CMatrix::from_row_slice(
            2,
            2,
            &[
                c(0.5 * (1.0 + z), 0.0),
                c(0.5 * x, -0.5 * y),
                c(0.5 * x, 0.5 * y),
                c(0.5 * (1.0 - z), 0.0),
            ],
        );
        Self::with_basis(mat, basis)
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.mat[(i, j)]
    }

    pub fn purity(&self) -> f64 {
        matrix::trace(&(&self.mat * &self.mat)).re
    }

    pub fn populations(&self) -> Vec<f64> {
        self.mat.diagonal().iter().map(|z| z.re).collect()
    }

    /// `U^dagger rho U`, tagged with `basis`. Unitary conjugation preserves
    /// every invariant, so no re-validation beyond Hermitization is needed.
    pub fn conjugated(&self, unitary: &CMatrix, basis: Basis) -> Self {
        let mat = unitary.adjoint() * &self.mat * unitary;
        Self {
            mat: matrix::hermitian_part(&mat),
            basis,
        }
    }

    pub(crate) fn from_parts_unchecked(mat: CMatrix, basis: Basis) -> Self {
        Self { mat, basis }
    }
}

/// Bloch vector `(x, y, z)` with `rho = (I + x sx + y sy + z sz) / 2`, i.e.
/// `x = 2 Re rho_01`, `y = -2 Im rho_01`, `z = rho_00 - rho_11`.
pub fn bloch_vector(rho: &DensityMatrix) -> Result<[f64; 3]> {
    if rho.dim() != 2 {
        return Err(Error::Dimension(format!(
            "Bloch vector needs a two-level state, got dimension {}",
            rho.dim()
        )));
    }
    let off = rho.get(0, 1);
    Ok([
        2.0 * off.re,
        -2.0 * off.im,
        rho.get(0, 0).re - rho.get(1, 1).re,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(a: f64, b: f64) -> CMatrix {
        matrix::diag_real(&[a, b])
    }

    #[test]
    fn accepts_pure_and_mixed() {
        assert!(DensityMatrix::new(diag(1.0, 0.0)).is_ok());
        assert!(DensityMatrix::new(diag(0.5, 0.5)).is_ok());
    }

    #[test]
    fn rejects_negative_population() {
        let err = DensityMatrix::new(diag(1.2, -0.2)).unwrap_err();
        assert!(matches!(err, Error::Positivity { .. }));
    }

    #[test]
    fn rejects_bad_trace_and_shape() {
        assert!(matches!(
            DensityMatrix::new(diag(0.6, 0.6)).unwrap_err(),
            Error::Trace { .. }
        ));
        assert!(matches!(
            DensityMatrix::new(CMatrix::zeros(2, 3)).unwrap_err(),
            Error::Dimension(_)
        ));
        assert!(matches!(
            DensityMatrix::new(matrix::diag_real(&[1.0])).unwrap_err(),
            Error::Dimension(_)
        ));
    }

    #[test]
    fn hermitizes_small_drift() {
        let mut m = diag(0.5, 0.5);
        m[(0, 1)] = c(0.25, 1e-13);
        m[(1, 0)] = c(0.25, 0.0);
        let rho = DensityMatrix::new(m).unwrap();
        assert!(matrix::hermiticity_defect(rho.matrix()) == 0.0);
    }

    #[test]
    fn bloch_examples() {
        let up = DensityMatrix::new(diag(1.0, 0.0)).unwrap();
        assert_eq!(bloch_vector(&up).unwrap(), [0.0, 0.0, 1.0]);
        let mixed = DensityMatrix::new(diag(0.5, 0.5)).unwrap();
        assert_eq!(bloch_vector(&mixed).unwrap(), [0.0, 0.0, 0.0]);
        let mut m = diag(0.5, 0.5);
        m[(0, 1)] = c(0.5, 0.0);
        m[(1, 0)] = c(0.5, 0.0);
        let plus = DensityMatrix::new(m).unwrap();
        assert_eq!(bloch_vector(&plus).unwrap(), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn bloch_rejects_qutrit() {
        let rho = DensityMatrix::maximally_mixed(3, Basis::Fixed).unwrap();
        assert!(matches!(bloch_vector(&rho), Err(Error::Dimension(_))));
    }

    fn random_state(dim: usize, entries: &[f64], weights: &[f64]) -> CMatrix {
        // rho = sum_k w_k |psi_k><psi_k| / sum w
        let mut rho = CMatrix::zeros(dim, dim);
        let total: f64 = weights.iter().sum();
        for (k, w) in weights.iter().enumerate() {
            let psi = CVector::from_iterator(
                dim,
                (0..dim).map(|r| c(entries[2 * (k * dim + r)], entries[2 * (k * dim + r) + 1])),
            );
            let n = psi.norm();
            let psi = psi / c(n, 0.0);
            rho += &psi * psi.adjoint() * c(w / total, 0.0);
        }
        rho
    }

    proptest! {
        #[test]
        fn valid_states_are_accepted(
            dim in 2usize..5,
            entries in proptest::collection::vec(-1.0f64..1.0, 50),
            weights in proptest::collection::vec(0.01f64..1.0, 3),
        ) {
            let rho = random_state(dim, &entries, &weights);
            let dm = DensityMatrix::new(rho).unwrap();
            prop_assert!((matrix::trace(dm.matrix()).re - 1.0).abs() <= TRACE_TOL);
            prop_assert!(matrix::min_eigenvalue(dm.matrix()) >= -POSITIVITY_TOL);
        }

        #[test]
        fn negative_eigenvalue_is_rejected(
            dim in 2usize..5,
            entries in proptest::collection::vec(-1.0f64..1.0, 50),
            weights in proptest::collection::vec(0.01f64..1.0, 3),
            dip in 1e-6f64..0.5,
        ) {
            let rho = random_state(dim, &entries, &weights);
            let (vals, vecs) = matrix::hermitian_eigen(&rho);
            // push the smallest eigenvalue below zero, keep the trace
            let v0 = vecs.column(0).into_owned();
            let v1 = vecs.column(dim - 1).into_owned();
            let shift = vals[0] + dip;
            let bad = rho - &v0 * v0.adjoint() * c(shift, 0.0) + &v1 * v1.adjoint() * c(shift, 0.0);
            prop_assert!(
                matches!(
                    DensityMatrix::new(bad),
                    Err(Error::Positivity { .. })
                ),
                "a negative eigenvalue was accepted"
            );
        }

        #[test]
        fn bloch_roundtrip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            let r = (x * x + y * y + z * z).sqrt();
            let scale = if r > 1.0 { 1.0 / r } else { 1.0 };
            let (x, y, z) = (x * scale, y * scale, z * scale);
            let rho = DensityMatrix::from_bloch(x, y, z, Basis::Fixed).unwrap();
            let b = bloch_vector(&rho).unwrap();
            prop_assert!((b[0] - x).abs() <= 1e-12);
            prop_assert!((b[1] - y).abs() <= 1e-12);
            prop_assert!((b[2] - z).abs() <= 1e-12);
            prop_assert!((b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt() <= 1.0 + 1e-8);
            let again = DensityMatrix::from_bloch(b[0], b[1], b[2], Basis::Fixed).unwrap();
            prop_assert!(matrix::max_abs(&(again.matrix() - rho.matrix())) <= 1e-12);
        }
    }
}
