//! Small dense complex linear algebra on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn sigma_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
}

pub fn sigma_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)])
}

pub fn sigma_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)])
}

/// `|1><0|` in the two-level computational basis: maps index 0 to index 1.
pub fn sigma_minus() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
}

pub fn sigma_plus() -> CMatrix {
    sigma_minus().adjoint()
}

pub fn from_real(nrows: usize, ncols: usize, rows: &[f64]) -> CMatrix {
    let entries: Vec<C64> = rows.iter().map(|&x| c(x, 0.0)).collect();
    CMatrix::from_row_slice(nrows, ncols, &entries)
}

pub fn diag_real(values: &[f64]) -> CMatrix {
    let n = values.len();
    let mut out = CMatrix::zeros(n, n);
    for (i, &v) in values.iter().enumerate() {
        out[(i, i)] = c(v, 0.0);
    }
    out
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Largest entrywise deviation from Hermiticity.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Row-sum (infinity) norm; an upper bound on the spectral norm.
pub fn inf_norm(m: &CMatrix) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn expm(m: &CMatrix) -> CMatrix {
    m.clone().exp()
}

pub fn expm_real(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().exp()
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted ascending.
///
/// The 2x2 case uses the closed form; larger matrices go through `nalgebra`.
pub fn hermitian_eigen(h: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = h.nrows();
    if n == 2 {
        return hermitian_eigen_2x2(h);
    }
    let eig = SymmetricEigen::new(hermitian_part(h));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }
    (values, vectors)
}

fn hermitian_eigen_2x2(h: &CMatrix) -> (Vec<f64>, CMatrix) {
    let a = h[(0, 0)].re;
    let d = h[(1, 1)].re;
    let b = (h[(0, 1)] + h[(1, 0)].conj()) * 0.5;
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let radius = half.hypot(b.norm());
    let values = vec![mean - radius, mean + radius];
    let mut vectors = CMatrix::zeros(2, 2);
    if b.norm() <= f64::EPSILON * radius.max(f64::MIN_POSITIVE) {
        // already diagonal
        if a <= d {
            vectors[(0, 0)] = c(1.0, 0.0);
            vectors[(1, 1)] = c(1.0, 0.0);
        } else {
            vectors[(1, 0)] = c(1.0, 0.0);
            vectors[(0, 1)] = c(1.0, 0.0);
        }
        return (values, vectors);
    }
    for (col, &lambda) in values.iter().enumerate() {
        // (H - lambda) v = 0 has two row-derived solutions; keep the longer one.
        let v1 = [b, c(lambda - a, 0.0)];
        let v2 = [c(lambda - d, 0.0), b.conj()];
        let n1 = (v1[0].norm_sqr() + v1[1].norm_sqr()).sqrt();
        let n2 = (v2[0].norm_sqr() + v2[1].norm_sqr()).sqrt();
        let (v, nv) = if n1 >= n2 { (v1, n1) } else { (v2, n2) };
        vectors[(0, col)] = v[0] / nv;
        vectors[(1, col)] = v[1] / nv;
    }
    (values, vectors)
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    if m.nrows() == 2 {
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let b = (m[(0, 1)] + m[(1, 0)].conj()) * 0.5;
        return 0.5 * (a + d) - (0.5 * (a - d)).hypot(b.norm());
    }
    SymmetricEigen::new(hermitian_part(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Spectral norm of a Hermitian matrix (largest |eigenvalue|).
pub fn hermitian_norm(h: &CMatrix) -> f64 {
    let (values, _) = hermitian_eigen(h);
    values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `<a|b>` for column vectors given as matrix columns.
pub fn inner_columns(a: &CMatrix, col_a: usize, b: &CMatrix, col_b: usize) -> C64 {
    a.column(col_a).dotc(&b.column(col_b))
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::PI;
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}
