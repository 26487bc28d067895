//! Dense linear-algebra helpers built on nalgebra's SVD.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex;
use num_traits::Zero;

use crate::scalar::{lit, Real};

/// Default relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

pub fn singular_values<T: ComplexField>(m: &DMatrix<T>) -> DVector<T::RealField> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    m.clone().svd(false, false).singular_values
}

/// Numerical rank with threshold `rel_tol * sigma_max`.
pub fn rank<T: ComplexField>(m: &DMatrix<T>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let smax = sv.iter().cloned().fold(T::RealField::zero(), rmax);
    if smax == T::RealField::zero() {
        return 0;
    }
    let thr = smax.clone() * nalgebra::convert::<f64, T::RealField>(rel_tol);
    sv.iter().filter(|s| **s > thr).count()
}

fn rmax<R: nalgebra::RealField>(a: R, b: R) -> R {
    if a >= b {
        a
    } else {
        b
    }
}

fn rmin<R: nalgebra::RealField>(a: R, b: R) -> R {
    if a <= b {
        a
    } else {
        b
    }
}

/// Orthonormal basis (as columns) of the null space of a real matrix.
pub fn null_space<T: Real>(m: &DMatrix<T>, rel_tol: f64) -> DMatrix<T> {
    let ncols = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(ncols, ncols);
    }
    // pad to a square system so that V is complete
    let rows = m.nrows().max(ncols);
    let mut padded = DMatrix::zeros(rows, ncols);
    padded.view_mut((0, 0), (m.nrows(), ncols)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().fold(T::zero(), |a, &b| a.max(b));
    let thr = smax * lit::<T>(rel_tol);
    let cols: Vec<DVector<T>> = (0..ncols)
        .filter(|&i| smax == T::zero() || svd.singular_values[i] <= thr)
        .map(|i| vt.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(ncols, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of the column space.
pub fn range_basis<T: Real>(m: &DMatrix<T>, rel_tol: f64) -> DMatrix<T> {
    let n = m.nrows();
    if m.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.iter().fold(T::zero(), |a, &b| a.max(b));
    if smax == T::zero() {
        return DMatrix::zeros(n, 0);
    }
    let thr = smax * lit::<T>(rel_tol);
    let cols: Vec<DVector<T>> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > thr)
        .map(|i| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Minimal-norm least-squares solution of `a x = b` via the pseudo-inverse.
pub fn lstsq_min_norm<T: ComplexField>(a: &DMatrix<T>, b: &DVector<T>, rel_tol: f64) -> DVector<T> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd
        .singular_values
        .iter()
        .cloned()
        .fold(T::RealField::zero(), rmax);
    if smax == T::RealField::zero() {
        return DVector::zeros(a.ncols());
    }
    let eps = smax * nalgebra::convert::<f64, T::RealField>(rel_tol);
    svd.solve(b, eps).expect("svd factors present")
}

/// Ratio of extreme singular values (infinite when singular).
pub fn condition_number<T: ComplexField>(m: &DMatrix<T>) -> f64 {
    let sv = singular_values(m);
    if sv.is_empty() {
        return 1.0;
    }
    let smax = sv.iter().cloned().fold(T::RealField::zero(), rmax);
    let smin = sv.iter().cloned().fold(smax.clone(), rmin);
    let to = |x: T::RealField| -> f64 { nalgebra::try_convert::<T::RealField, f64>(x).unwrap_or(f64::NAN) };
    if smin == T::RealField::zero() {
        f64::INFINITY
    } else {
        to(smax) / to(smin)
    }
}

/// Largest absolute entry.
pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
}

pub fn max_abs_vec<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
}

pub fn to_complex<T: Real>(m: &DMatrix<T>) -> DMatrix<Complex<T>> {
    m.map(|x| Complex::new(x, T::zero()))
}

/// Block-diagonal direct sum.
pub fn direct_sum<T: Real>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Kronecker product.
pub fn kron<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    a.kronecker(b)
}

/// Row-major flattening.
pub fn flatten_row_major<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect()
}

pub fn from_row_major<T: Real>(rows: usize, cols: usize, v: &[T]) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols, |i, j| v[i * cols + j])
}

/// Real matrix from nested rows.
pub fn from_rows<T: Real>(rows: &[Vec<f64>]) -> DMatrix<T> {
    let r = rows.len();
    let c = rows.first().map(|x| x.len()).unwrap_or(0);
    DMatrix::from_fn(r, c, |i, j| lit(rows[i][j]))
}

pub fn to_rows<T: Real>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| crate::scalar::to_f64(m[(i, j)])).collect())
        .collect()
}
