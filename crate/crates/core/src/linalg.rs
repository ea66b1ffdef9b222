//! Dense row-major matrices and the two factorizations the rest of the crate
//! relies on: thin SVD and symmetric eigendecomposition.
//!
//! Factorizations are delegated to `faer`; this module only converts to and
//! from its column-major storage and normalizes the output ordering.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use faer::Mat;

use crate::error::{Error, Result};

/// Dense real matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries, rejecting bad lengths and
    /// non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Shape {
                rows,
                cols,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix::new"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Convenience constructor for literals. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self::new(r, c, rows.concat()).expect("invalid literal matrix")
    }

    pub fn column(values: &[f64]) -> Self {
        Self::new(values.len(), 1, values.to_vec()).expect("invalid column vector")
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of entries, `rows * cols`.
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col_to_vec(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Matrix product. Panics on inner-dimension mismatch.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.rows, rhs.rows, "t_matmul row mismatch");
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = rhs.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Matrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (a, v) in acc.iter_mut().zip(self.row(i)) {
                *a += v * v;
            }
        }
        acc.into_iter().map(f64::sqrt).collect()
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Matrix) {
        debug_assert_eq!(self.shape(), x.shape());
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
    }

    /// Symmetric part `(A + Aᵀ)/2` of a square matrix.
    pub fn sym(&self) -> Matrix {
        assert_eq!(self.rows, self.cols, "sym of a non-square matrix");
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            0.5 * (self[(i, j)] + self[(j, i)])
        })
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)])
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

macro_rules! elementwise {
    ($tr:ident, $method:ident, $op:tt, $tra:ident, $ma:ident) => {
        impl $tr<&Matrix> for &Matrix {
            type Output = Matrix;
            fn $method(self, rhs: &Matrix) -> Matrix {
                assert_eq!(self.shape(), rhs.shape(), "elementwise shape mismatch");
                Matrix {
                    rows: self.rows,
                    cols: self.cols,
                    data: self.data.iter().zip(&rhs.data).map(|(a, b)| a $op b).collect(),
                }
            }
        }
        impl $tr<Matrix> for Matrix {
            type Output = Matrix;
            fn $method(self, rhs: Matrix) -> Matrix {
                (&self).$method(&rhs)
            }
        }
        impl $tr<&Matrix> for Matrix {
            type Output = Matrix;
            fn $method(mut self, rhs: &Matrix) -> Matrix {
                self.$ma(rhs);
                self
            }
        }
        impl $tra<&Matrix> for Matrix {
            fn $ma(&mut self, rhs: &Matrix) {
                assert_eq!(self.shape(), rhs.shape(), "elementwise shape mismatch");
                for (a, b) in self.data.iter_mut().zip(&rhs.data) {
                    *a = *a $op b;
                }
            }
        }
    };
}

elementwise!(Add, add, +, AddAssign, add_assign);
elementwise!(Sub, sub, -, SubAssign, sub_assign);

impl Mul<f64> for &Matrix {
    type Output = Matrix;
    fn mul(self, s: f64) -> Matrix {
        self.scale(s)
    }
}

impl Mul<f64> for Matrix {
    type Output = Matrix;
    fn mul(mut self, s: f64) -> Matrix {
        self.scale_mut(s);
        self
    }
}

impl Neg for &Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

/// Thin singular value decomposition `a = u · diag(s) · vᵀ`.
///
/// For `a` of shape `p×r` with `k = min(p, r)`: `u` is `p×k`, `v` is `r×k`,
/// and `s` is sorted in non-increasing order.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.s.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.v.transpose())
    }
}

pub fn thin_svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::NonFinite("thin_svd input"));
    }
    let svd = a
        .to_faer()
        .thin_svd()
        .map_err(|e| Error::NumericalFailure(format!("SVD did not converge: {e:?}")))?;
    let (u, sv, v) = (svd.U(), svd.S(), svd.V());
    let k = a.rows().min(a.cols());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));

    let s: Vec<f64> = order.iter().map(|&i| sv[i]).collect();
    let u = Matrix::from_fn(a.rows(), k, |i, j| u[(i, order[j])]);
    let v = Matrix::from_fn(a.cols(), k, |i, j| v[(i, order[j])]);
    if !(u.is_finite() && v.is_finite() && s.iter().all(|x| x.is_finite())) {
        return Err(Error::NumericalFailure(
            "SVD produced non-finite factors".into(),
        ));
    }
    Ok(Svd { u, s, v })
}

/// Eigendecomposition of a symmetric matrix, eigenvalues non-increasing.
/// Column `j` of the returned matrix is the eigenvector of `values[j]`.
pub fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch {
            expected: (a.rows(), a.rows()),
            found: a.shape(),
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("sym_eigen input"));
    }
    let eig = a
        .sym()
        .to_faer()
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::NumericalFailure(format!("eigen-solver did not converge: {e:?}")))?;
    let (vals, vecs) = (eig.S(), eig.U());
    let n = a.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]));
    let values = order.iter().map(|&i| vals[i]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| vecs[(i, order[j])]);
    Ok((values, vectors))
}

/// `a^{-1/2}` for a symmetric positive-definite matrix.
pub fn inv_sqrt_spd(a: &Matrix) -> Result<Matrix> {
    let (values, q) = sym_eigen(a)?;
    if values.iter().any(|&l| l <= 0.0) {
        return Err(Error::NumericalFailure(
            "matrix is not positive definite".into(),
        ));
    }
    let n = a.rows();
    let scaled = Matrix::from_fn(n, n, |i, j| q[(i, j)] / values[j].sqrt());
    Ok(scaled.matmul(&q.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{sample_gaussian, RngStream};

    fn orth_residual(q: &Matrix) -> f64 {
        (q.t_matmul(q) - Matrix::identity(q.cols())).norm()
    }

    #[test]
    fn new_rejects_bad_input() {
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Matrix::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn products_agree_with_naive_loops() {
        let s = RngStream::new(3);
        let a = sample_gaussian(&s.spawn(0), 4, 3);
        let b = sample_gaussian(&s.spawn(1), 3, 5);
        let c = a.matmul(&b);
        for i in 0..4 {
            for j in 0..5 {
                let want: f64 = (0..3).map(|k| a[(i, k)] * b[(k, j)]).sum();
                assert!((c[(i, j)] - want).abs() < 1e-14);
            }
        }
        let d = sample_gaussian(&s.spawn(2), 4, 2);
        let atd = a.t_matmul(&d);
        assert!((atd - a.transpose().matmul(&d)).norm() < 1e-14);
    }

    #[test]
    fn svd_identity() {
        let svd = thin_svd(&Matrix::identity(3)).unwrap();
        assert_eq!(svd.s.len(), 3);
        for s in &svd.s {
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert!((svd.reconstruct() - Matrix::identity(3)).norm() < 1e-14);
    }

    #[test]
    fn svd_diagonal_sorted() {
        let svd = thin_svd(&Matrix::diag(&[1.0, 3.0, 2.0])).unwrap();
        assert_eq!(svd.s, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn svd_random_tall_reconstructs() {
        let a = sample_gaussian(&RngStream::new(11), 10, 3);
        let svd = thin_svd(&a).unwrap();
        assert!((svd.reconstruct() - &a).norm() / a.norm() <= 1e-12);
        assert!(orth_residual(&svd.u) < 1e-12);
        assert!(orth_residual(&svd.v) < 1e-12);
        assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_wide_and_rank_deficient() {
        let a = sample_gaussian(&RngStream::new(12), 3, 7);
        let svd = thin_svd(&a).unwrap();
        assert_eq!(svd.u.shape(), (3, 3));
        assert_eq!(svd.v.shape(), (7, 3));
        assert!((svd.reconstruct() - &a).norm() / a.norm() <= 1e-12);

        let mut r1 = Matrix::zeros(4, 3);
        for i in 0..4 {
            for j in 0..3 {
                r1[(i, j)] = (i + 1) as f64 * (j as f64 - 1.5);
            }
        }
        let svd = thin_svd(&r1).unwrap();
        assert!(svd.s[1] < 1e-12 * svd.s[0]);
        assert!((svd.reconstruct() - &r1).norm() / r1.norm() <= 1e-12);
    }

    #[test]
    fn svd_exact_rank_two_reconstructs() {
        let rows = [
            [
                1.4489835919408993,
                1.089638965162896,
                1.4270190904956341,
                1.5243210744891995,
            ],
            [
                -0.6154325262408982,
                0.36718059423704213,
                0.022113696306214736,
                2.6494566178569676,
            ],
            [
                0.6489791295879183,
                0.11337203320048433,
                0.3555601530128499,
                -0.8055151791009847,
            ],
            [
                0.07768025733872029,
                -0.07361599952571074,
                -0.02343204776419633,
                -0.4427392583278792,
            ],
            [
                0.22918824736858703,
                -0.0032361307653850785,
                0.09281292039009795,
                -0.45636162694057336,
            ],
        ];
        let a = Matrix::from_fn(5, 4, |i, j| rows[i][j]);
        let svd = thin_svd(&a).unwrap();
        assert!((&svd.reconstruct() - &a).norm() < 1e-13);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = Matrix::zeros(2, 2);
        a.as_mut_slice()[0] = f64::INFINITY;
        assert!(matches!(thin_svd(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn eigen_and_inverse_sqrt() {
        let g = sample_gaussian(&RngStream::new(5), 6, 4);
        let a = g.t_matmul(&g) + Matrix::identity(4);
        let (vals, q) = sym_eigen(&a).unwrap();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        assert!(orth_residual(&q) < 1e-12);
        let m = inv_sqrt_spd(&a).unwrap();
        let back = m.matmul(&a).matmul(&m);
        assert!((back - Matrix::identity(4)).norm() < 1e-12);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn svd_reconstruction_property(rows in 1usize..=50, cols in 1usize..=20, seed in 0u64..10_000) {
            let a = sample_gaussian(&RngStream::new(seed), rows, cols);
            let svd = thin_svd(&a).unwrap();
            proptest::prop_assert!((svd.reconstruct() - &a).norm() <= 1e-10 * a.norm());
            proptest::prop_assert!(orth_residual(&svd.u) <= 1e-12);
            proptest::prop_assert!(orth_residual(&svd.v) <= 1e-12);
        }
    }
}
