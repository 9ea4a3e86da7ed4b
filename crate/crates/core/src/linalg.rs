//! Small dense helpers shared by the solvers.
//!
//! Everything here works on `DMatrix<f64>`; problem sizes are desk scale
//! (state dimension up to a few dozen), so no attempt is made to exploit
//! structure beyond symmetry.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Tolerance for positive semi-definiteness tests.
pub const PSD_TOL: f64 = 1e-10;

const EIG_EPS: f64 = 1e-14;
const EIG_MAX_ITER: usize = 10_000;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - m'`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

pub fn is_psd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= -PSD_TOL
}

/// Moore-Penrose pseudoinverse of a symmetric matrix.
///
/// Eigenvalues with magnitude at most `1e-10 * max(1, |lambda|_max)` are
/// treated as zero.
pub fn pinv_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if n == 1 {
        let v = m[(0, 0)];
        let inv = if v.abs() > 1e-10 * v.abs().max(1.0) { 1.0 / v } else { 0.0 };
        return DMatrix::from_element(1, 1, inv);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.amax().max(1.0);
    let cutoff = 1e-10 * scale;
    let inv = eig
        .eigenvalues
        .map(|l| if l.abs() > cutoff { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-major vectorization.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<f64>, rows: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, v.len() / rows, v.as_slice())
}

/// Orthonormal (Frobenius) basis of the symmetric `d x d` matrices,
/// ordered by (i, j) with i <= j.
pub fn sym_basis(d: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    let w = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..d {
        for i in 0..=j {
            let mut e = DMatrix::zeros(d, d);
            if i == j {
                e[(i, i)] = 1.0;
            } else {
                e[(i, j)] = w;
                e[(j, i)] = w;
            }
            out.push(e);
        }
    }
    out
}

/// Coordinates of a symmetric matrix in the basis of [`sym_basis`].
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let s = std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, i)]);
            } else {
                out.push(0.5 * s * (m[(i, j)] + m[(j, i)]));
            }
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`svec`].
pub fn smat(v: &DVector<f64>, d: usize) -> DMatrix<f64> {
    let w = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                m[(i, j)] = w * v[k];
                m[(j, i)] = w * v[k];
            }
            k += 1;
        }
    }
    m
}

/// Matrix of a linear map on symmetric `d x d` matrices, in `svec` coordinates.
///
/// The map must send symmetric matrices to symmetric matrices.
pub fn sym_operator_matrix<F>(d: usize, op: F) -> DMatrix<f64>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let basis = sym_basis(d);
    let k = basis.len();
    let mut out = DMatrix::zeros(k, k);
    for (col, e) in basis.iter().enumerate() {
        out.set_column(col, &svec(&op(e)));
    }
    out
}

/// Largest real part among the eigenvalues of a general real square matrix.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    if !all_finite(m) {
        return Err(Error::NonFinite("spectral abscissa input".into()));
    }
    let schur = Schur::try_new(m.clone(), EIG_EPS, EIG_MAX_ITER)
        .ok_or_else(|| Error::Eigen("real Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Orthonormal basis (columns) of the numerical null space of a symmetric
/// PSD matrix: eigenvectors whose eigenvalue is at most `rel_cutoff * max(lambda)`
/// or at most `abs_floor`.
pub fn psd_null_space(m: &DMatrix<f64>, rel_cutoff: f64, abs_floor: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let top = eig.eigenvalues.max().max(0.0);
    let cutoff = (rel_cutoff * top).max(abs_floor);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| eig.eigenvalues[i] <= cutoff)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}
