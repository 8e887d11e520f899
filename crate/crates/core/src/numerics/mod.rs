//! Dense row-major matrices and the handful of kernels the split models need.

mod matrix;
mod scalar;

pub use matrix::Matrix;
pub use scalar::Scalar;

use crate::error::{Error, Result};

/// Norm below which a row is treated as the zero vector by [`row_cosine`].
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Standard matrix product `a · b`.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.rows() {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[(i, p)];
            if aip == T::zero() {
                continue;
            }
            for (o, &bpj) in out_row.iter_mut().zip(b.row(p)) {
                *o = *o + aip * bpj;
            }
        }
    }
    Ok(Matrix::from_parts(m, n, out))
}

/// `aᵀ · b` without materializing the transpose.
pub fn t_matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows() != b.rows() {
        return Err(Error::shape("t_matmul", a.shape(), b.shape()));
    }
    let (m, n) = (a.cols(), b.cols());
    let mut out = vec![T::zero(); m * n];
    for r in 0..a.rows() {
        let b_row = b.row(r);
        for (i, &ari) in a.row(r).iter().enumerate() {
            if ari == T::zero() {
                continue;
            }
            for (o, &brj) in out[i * n..(i + 1) * n].iter_mut().zip(b_row) {
                *o = *o + ari * brj;
            }
        }
    }
    Ok(Matrix::from_parts(m, n, out))
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_t<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.cols() {
        return Err(Error::shape("matmul_t", a.shape(), b.shape()));
    }
    let (m, n) = (a.rows(), b.rows());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let a_row = a.row(i);
        for j in 0..n {
            out.push(dot(a_row, b.row(j)));
        }
    }
    Ok(Matrix::from_parts(m, n, out))
}

pub fn dot<T: Scalar>(u: &[T], v: &[T]) -> T {
    u.iter().zip(v).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm<T: Scalar>(u: &[T]) -> T {
    dot(u, u).sqrt()
}

/// Cosine similarity of two equal-length vectors with the zero-norm
/// convention: both (near) zero gives 1, exactly one gives 0. Clamped to
/// `[-1, 1]`.
pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> T {
    let eps = T::lit(ZERO_NORM_EPS);
    let (nu, nv) = (norm(u), norm(v));
    match (nu < eps, nv < eps) {
        (true, true) => T::one(),
        (true, false) | (false, true) => T::zero(),
        (false, false) => (dot(u, v) / (nu * nv)).max(-T::one()).min(T::one()),
    }
}

/// Per-row cosine similarity between two matrices of the same shape.
pub fn row_cosine<T: Scalar>(u: &Matrix<T>, v: &Matrix<T>) -> Result<Vec<T>> {
    if u.shape() != v.shape() {
        return Err(Error::shape("row_cosine", u.shape(), v.shape()));
    }
    Ok((0..u.rows()).map(|k| cosine(u.row(k), v.row(k))).collect())
}

/// Multiplies row `k` of `m` by `w[k]`.
pub fn scale_rows<T: Scalar>(m: &Matrix<T>, w: &[T]) -> Result<Matrix<T>> {
    if w.len() != m.rows() {
        return Err(Error::shape("scale_rows", m.shape(), (w.len(), 1)));
    }
    let mut out = m.clone();
    for (k, &wk) in w.iter().enumerate() {
        out.row_mut(k).iter_mut().for_each(|x| *x = *x * wk);
    }
    Ok(out)
}
