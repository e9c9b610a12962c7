//! Small dense helpers shared by the solvers. Matrices here are at most a
//! handful of rows, so clarity wins over blocking.

use nalgebra::{DMatrix, DVector};

use crate::Scalar;

pub fn is_diagonal<T: Scalar>(a: &DMatrix<T>) -> bool {
    a.is_square()
        && (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] == T::zero()))
}

/// Largest absolute asymmetry `max |a_ij - a_ji|`.
pub fn asymmetry<T: Scalar>(a: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize<T: Scalar>(a: &mut DMatrix<T>) {
    let half = T::lit(0.5);
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            let v = (a[(i, j)] + a[(j, i)]) * half;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues<T: Scalar>(a: &DMatrix<T>) -> Vec<T> {
    if a.nrows() == 1 {
        return vec![a[(0, 0)]];
    }
    let mut ev: Vec<T> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    ev
}

pub fn min_eigenvalue<T: Scalar>(a: &DMatrix<T>) -> T {
    sym_eigenvalues(a)[0]
}

/// Symmetric square root of a PSD matrix; negative eigenvalues are clipped.
/// Diagonal inputs take an exact elementwise path.
pub fn psd_sqrt<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    if is_diagonal(a) {
        let mut s = DMatrix::zeros(a.nrows(), a.ncols());
        for i in 0..a.nrows() {
            s[(i, i)] = a[(i, i)].max(T::zero()).sqrt();
        }
        return s;
    }
    let eig = a.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(T::zero()).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Clips eigenvalues below zero to zero.
pub fn clip_psd<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    if a.nrows() == 1 {
        return DMatrix::from_element(1, 1, a[(0, 0)].max(T::zero()));
    }
    let eig = a.clone().symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(T::zero()));
    let mut out =
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse<T: Scalar>(a: &DMatrix<T>) -> Option<DMatrix<T>> {
    if a.nrows() == 1 {
        let v = a[(0, 0)];
        return (v > T::zero()).then(|| DMatrix::from_element(1, 1, T::one() / v));
    }
    let mut inv = a.clone().cholesky()?.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

/// Lower Cholesky factor of an SPD matrix.
pub fn cholesky_lower<T: Scalar>(a: &DMatrix<T>) -> Option<DMatrix<T>> {
    if a.nrows() == 1 {
        let v = a[(0, 0)];
        return (v > T::zero()).then(|| DMatrix::from_element(1, 1, v.sqrt()));
    }
    Some(a.clone().cholesky()?.unpack())
}

/// `out += scale * a * x` for column-major `a`.
#[inline]
pub fn mat_vec_acc<T: Scalar>(out: &mut [T], a: &DMatrix<T>, x: &[T], scale: T) {
    let rows = a.nrows();
    let data = a.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        let s = xj * scale;
        let col = &data[j * rows..(j + 1) * rows];
        for (o, &aij) in out.iter_mut().zip(col) {
            *o += aij * s;
        }
    }
}

/// `xᵀ a y`.
#[inline]
pub fn quad_form<T: Scalar>(x: &[T], a: &DMatrix<T>, y: &[T]) -> T {
    let mut acc = T::zero();
    for (j, &yj) in y.iter().enumerate() {
        let mut col = T::zero();
        for (i, &xi) in x.iter().enumerate() {
            col += xi * a[(i, j)];
        }
        acc += col * yj;
    }
    acc
}

pub fn dvec<T: Scalar>(values: &[f64]) -> DVector<T> {
    DVector::from_iterator(values.len(), values.iter().map(|&v| T::lit(v)))
}
