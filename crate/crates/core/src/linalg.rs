//! Small dense helpers shared by the model and the filters.

use nalgebra::{DMatrix, SMatrix, SVector};

use crate::error::{Error, Result};

pub type Vec2 = SVector<f64, 2>;
pub type Vec3 = SVector<f64, 3>;
pub type Vec4 = SVector<f64, 4>;
pub type Mat2 = SMatrix<f64, 2, 2>;
pub type Mat3 = SMatrix<f64, 3, 3>;
pub type Mat4 = SMatrix<f64, 4, 4>;
pub type Mat2x3 = SMatrix<f64, 2, 3>;
pub type Mat3x4 = SMatrix<f64, 3, 4>;

/// Eigenvalues below this are clamped when a covariance must be made PSD.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Relative size of a negative eigenvalue (against the spectral radius) that
/// is still treated as rounding noise rather than genuine indefiniteness.
pub const INDEFINITE_TOLERANCE: f64 = 1e-6;

/// Eigen-decomposition of a symmetric matrix: `(eigenvalues, eigenvectors)`.
pub fn symmetric_eigen<const N: usize>(a: &SMatrix<f64, N, N>) -> (SVector<f64, N>, SMatrix<f64, N, N>) {
    let eig = DMatrix::from_column_slice(N, N, a.as_slice()).symmetric_eigen();
    (
        SVector::from_column_slice(eig.eigenvalues.as_slice()),
        SMatrix::from_column_slice(eig.eigenvectors.as_slice()),
    )
}

pub fn symmetrize<const N: usize>(a: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (a + a.transpose()) * 0.5
}

pub fn is_finite<const R: usize, const C: usize>(a: &SMatrix<f64, R, C>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Symmetrizes `a` and clamps its eigenvalues at [`EIGEN_FLOOR`].
///
/// Fails when the most negative eigenvalue is larger in magnitude than
/// [`INDEFINITE_TOLERANCE`] times the largest absolute eigenvalue, or when
/// the matrix holds non-finite entries.
pub fn floor_eigenvalues<const N: usize>(
    a: &SMatrix<f64, N, N>,
    what: &str,
) -> Result<SMatrix<f64, N, N>>
{
    if !is_finite(a) {
        return Err(Error::Conditioning(format!("{what}: non-finite entries")));
    }
    let sym = symmetrize(a);
    let (values, vectors) = symmetric_eigen(&sym);
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = values.min();
    if min < -INDEFINITE_TOLERANCE * scale {
        return Err(Error::Conditioning(format!(
            "{what}: indefinite (min eigenvalue {min:e}, scale {scale:e})"
        )));
    }
    if min >= EIGEN_FLOOR {
        return Ok(sym);
    }
    let clamped = values.map(|v| v.max(EIGEN_FLOOR));
    let rebuilt = vectors * SMatrix::from_diagonal(&clamped) * vectors.transpose();
    Ok(symmetrize(&rebuilt))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse<const N: usize>(a: &SMatrix<f64, N, N>, what: &str) -> Result<SMatrix<f64, N, N>> {
    let chol = symmetrize(a)
        .cholesky()
        .ok_or_else(|| Error::Conditioning(format!("{what}: not positive definite")))?;
    let inv = chol.inverse();
    if !is_finite(&inv) {
        return Err(Error::Conditioning(format!("{what}: inverse not finite")));
    }
    Ok(symmetrize(&inv))
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn spd_solve<const N: usize>(
    a: &SMatrix<f64, N, N>,
    b: &SVector<f64, N>,
    what: &str,
) -> Result<SVector<f64, N>> {
    let chol = symmetrize(a)
        .cholesky()
        .ok_or_else(|| Error::Conditioning(format!("{what}: normal matrix not positive definite")))?;
    let x = chol.solve(b);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning(format!("{what}: solution not finite")));
    }
    Ok(x)
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_eigenvalue<const N: usize>(a: &SMatrix<f64, N, N>) -> f64
{
    symmetric_eigen(&symmetrize(a)).0.min()
}

/// Matrix square root of a symmetric PSD matrix; tiny negative eigenvalues
/// from rounding are treated as zero.
pub fn psd_sqrt<const N: usize>(a: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N>
{
    let (values, vectors) = symmetric_eigen(&symmetrize(a));
    let roots = values.map(|v| v.max(0.0).sqrt());
    vectors * SMatrix::from_diagonal(&roots) * vectors.transpose()
}

/// Kronecker product of two 2×2 matrices.
pub fn kron2(a: &Mat2, b: &Mat2) -> Mat4 {
    let mut out = Mat4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Column-stacking vectorization of a 2×2 matrix.
pub fn vect2(a: &Mat2) -> Vec4 {
    Vec4::new(a[(0, 0)], a[(1, 0)], a[(0, 1)], a[(1, 1)])
}

pub fn from_rows<const N: usize>(rows: &[[f64; N]; N]) -> SMatrix<f64, N, N> {
    SMatrix::from_fn(|i, j| rows[i][j])
}

pub fn to_rows<const N: usize>(m: &SMatrix<f64, N, N>) -> [[f64; N]; N] {
    let mut out = [[0.0; N]; N];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    out
}
