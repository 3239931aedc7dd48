use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::liouville::{CoefficientTensor, DissipatorSpec};
use crate::matrix::{self, CMatrix};
use crate::path::ParameterPath;

pub type HamiltonianFn = Arc<dyn Fn(f64, &[f64]) -> CMatrix + Send + Sync>;

const HERMITIAN_TOL: f64 = 1e-12;
const CHECK_SAMPLES: usize = 17;

/// A driven N-level system: `H(t, k)`, a dissipator and the parameter path
/// `k(t)` that drives both.
#[derive(Clone)]
pub struct Model {
    dim: usize,
    hamiltonian_fn: HamiltonianFn,
    dissipator: DissipatorSpec,
    path: ParameterPath,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("dim", &self.dim)
            .field("dissipator", &self.dissipator)
            .field("path", &self.path)
            .finish()
    }
}

impl Model {
    /// Checks shapes and Hermiticity of `H` on a handful of sample times, and
    /// trace/Hermiticity preservation of the dissipator at `t = 0`.
    pub fn new(
        dim: usize,
        hamiltonian_fn: HamiltonianFn,
        dissipator: DissipatorSpec,
        path: ParameterPath,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Dimension(format!(
                "model dimension must be >= 2, got {dim}"
            )));
        }
        let model = Self {
            dim,
            hamiltonian_fn,
            dissipator,
            path,
        };
        for t in model.check_times() {
            let h = model.hamiltonian(t);
            if h.nrows() != dim || h.ncols() != dim {
                return Err(Error::Dimension(format!(
                    "hamiltonian is {}x{}, model dimension is {dim}",
                    h.nrows(),
                    h.ncols()
                )));
            }
            if !matrix::is_finite(&h) {
                return Err(Error::NonFinite("hamiltonian"));
            }
            let defect = matrix::hermiticity_defect(&h);
            if defect > HERMITIAN_TOL {
                return Err(Error::Param(format!(
                    "hamiltonian not Hermitian at t = {t}: defect {defect:e}"
                )));
            }
        }
        let tensor = model.dissipator_tensor(0.0)?;
        tensor.check_physical(1e-10)?;
        Ok(model)
    }

    fn check_times(&self) -> Vec<f64> {
        let span = if self.path.is_static() {
            1.0
        } else {
            self.path.period()
        };
        (0..CHECK_SAMPLES)
            .map(|m| span * m as f64 / (CHECK_SAMPLES - 1) as f64)
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn path(&self) -> &ParameterPath {
        &self.path
    }

    pub fn dissipator(&self) -> &DissipatorSpec {
        &self.dissipator
    }

    pub fn hamiltonian(&self, t: f64) -> CMatrix {
        (self.hamiltonian_fn)(t, &self.path.params_at(t))
    }

    /// Dissipator coefficients in the fixed basis at time `t`.
    pub fn dissipator_tensor(&self, t: f64) -> Result<CoefficientTensor> {
        self.dissipator.tensor(self.dim, t, &self.path.params_at(t))
    }

    /// Same Hamiltonian and dissipator driven along another path.
    pub fn with_path(&self, path: ParameterPath) -> Self {
        Self {
            path,
            ..self.clone()
        }
    }

    pub fn with_dissipator(&self, dissipator: DissipatorSpec) -> Self {
        Self {
            dissipator,
            ..self.clone()
        }
    }

    /// Largest spectral norm of `H` over sample times spanning one period.
    pub fn max_hamiltonian_norm(&self) -> f64 {
        self.check_times()
            .into_iter()
            .map(|t| matrix::hermitian_norm(&self.hamiltonian(t)))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::LindbladTerm;
    use crate::matrix::{c, sigma_z};

    #[test]
    fn rejects_non_hermitian_hamiltonian() {
        let h: HamiltonianFn = Arc::new(|_, _| {
            let mut m = sigma_z();
            m[(0, 1)] = c(0.1, 0.0);
            m
        });
        let err = Model::new(2, h, DissipatorSpec::None, ParameterPath::fixed(vec![])).unwrap_err();
        assert!(matches!(err, Error::Param(_)));
    }

    #[test]
    fn rejects_wrong_shape() {
        let h: HamiltonianFn = Arc::new(|_, _| sigma_z());
        let err = Model::new(3, h, DissipatorSpec::None, ParameterPath::fixed(vec![])).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn norm_of_static_model() {
        let h: HamiltonianFn = Arc::new(|_, _| sigma_z() * c(2.0, 0.0));
        let model = Model::new(
            2,
            h,
            DissipatorSpec::constant_lindblad(vec![LindbladTerm::new(sigma_z(), 0.1).unwrap()]),
            ParameterPath::fixed(vec![]),
        )
        .unwrap();
        assert!((model.max_hamiltonian_norm() - 2.0).abs() < 1e-14);
    }
}
