//! Principal subspace extraction on the Stiefel manifold:
//! `f(x) = −(1/2N) Σ_j Tr(xᵀ H_j x)`.

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Matrix};
use crate::manifold::ManifoldKind;
use crate::rng::{sample_gaussian, RngStream};

use super::Problem;

#[derive(Clone, Debug)]
enum KpcaData {
    /// Rows `h_j` with `H_j = h_j h_jᵀ`.
    Samples(Matrix),
    Matrices(Vec<Matrix>),
}

#[derive(Clone, Debug)]
pub struct KpcaProblem {
    data: KpcaData,
    manifold: ManifoldKind,
}

impl KpcaProblem {
    /// `samples` is `N×p`; each row `h_j` contributes `H_j = h_j h_jᵀ`.
    pub fn from_samples(samples: Matrix, r: usize) -> Result<Self> {
        let manifold = ManifoldKind::stiefel(samples.cols(), r)?;
        Ok(Self {
            data: KpcaData::Samples(samples),
            manifold,
        })
    }

    pub fn from_matrices(h: Vec<Matrix>, r: usize) -> Result<Self> {
        let Some(first) = h.first() else {
            return Err(Error::InvalidConfig(
                "kPCA needs at least one matrix".into(),
            ));
        };
        let p = first.rows();
        for (j, m) in h.iter().enumerate() {
            if m.shape() != (p, p) {
                return Err(Error::DimensionMismatch {
                    expected: (p, p),
                    found: m.shape(),
                });
            }
            let asym = (m - &m.transpose()).max_abs();
            if asym > 1e-12 {
                return Err(Error::InvalidConfig(format!(
                    "H_{j} is not symmetric (max asymmetry {asym:e})"
                )));
            }
        }
        Ok(Self {
            data: KpcaData::Matrices(h),
            manifold: ManifoldKind::stiefel(p, r)?,
        })
    }

    /// `n` Gaussian samples in `ℝ^p` with standard deviations `2/√(1+i)`
    /// along the coordinate axes.
    pub fn synthetic(p: usize, r: usize, n: usize, stream: &RngStream) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig(
                "kPCA needs at least one sample".into(),
            ));
        }
        let z = sample_gaussian(stream, n, p);
        let samples = Matrix::from_fn(n, p, |j, i| z[(j, i)] * 2.0 / (1.0 + i as f64).sqrt());
        Self::from_samples(samples, r)
    }

    pub fn dim(&self) -> usize {
        self.manifold.shape().0
    }

    /// `Σ_j w_j H_j`.
    pub fn weighted_matrix(&self, weights: &[(usize, f64)]) -> Matrix {
        let p = self.dim();
        let mut h = Matrix::zeros(p, p);
        match &self.data {
            KpcaData::Samples(s) => {
                for &(j, w) in weights {
                    let row = s.row(j);
                    for a in 0..p {
                        for b in 0..p {
                            h[(a, b)] += w * row[a] * row[b];
                        }
                    }
                }
            }
            KpcaData::Matrices(ms) => {
                for &(j, w) in weights {
                    h.axpy(w, &ms[j]);
                }
            }
        }
        h
    }

    /// `H̄ = (1/N) Σ_j H_j`.
    pub fn mean_matrix(&self) -> Matrix {
        let n = self.n_samples();
        let w = 1.0 / n as f64;
        self.weighted_matrix(&(0..n).map(|j| (j, w)).collect::<Vec<_>>())
    }

    /// Spectral optimum of the full objective: `f* = −½ Σ_{i≤r} λ_i(H̄)`.
    pub fn kpca_reference_optimum(&self) -> Result<(f64, Matrix)> {
        spectral_optimum(&self.mean_matrix(), self.manifold.shape().1)
    }
}

fn spectral_optimum(h: &Matrix, r: usize) -> Result<(f64, Matrix)> {
    let (values, vectors) = sym_eigen(h)?;
    let f_star = -0.5 * values[..r].iter().sum::<f64>();
    let x_star = Matrix::from_fn(h.rows(), r, |i, j| vectors[(i, j)]);
    Ok((f_star, x_star))
}

impl Problem for KpcaProblem {
    fn name(&self) -> &str {
        "kpca"
    }

    fn manifold(&self) -> &ManifoldKind {
        &self.manifold
    }

    fn n_samples(&self) -> usize {
        match &self.data {
            KpcaData::Samples(s) => s.rows(),
            KpcaData::Matrices(m) => m.len(),
        }
    }

    fn term(&self, x: &Matrix, j: usize) -> f64 {
        match &self.data {
            KpcaData::Samples(s) => {
                let h = s.row(j);
                let (p, r) = x.shape();
                let mut acc = 0.0;
                for c in 0..r {
                    let proj: f64 = (0..p).map(|i| h[i] * x[(i, c)]).sum();
                    acc += proj * proj;
                }
                -0.5 * acc
            }
            KpcaData::Matrices(ms) => -0.5 * x.dot(&ms[j].matmul(x)),
        }
    }

    fn add_term_grad(&self, x: &Matrix, j: usize, weight: f64, out: &mut Matrix) {
        match &self.data {
            KpcaData::Samples(s) => {
                let h = s.row(j);
                let (p, r) = x.shape();
                for c in 0..r {
                    let proj: f64 = (0..p).map(|i| h[i] * x[(i, c)]).sum();
                    for i in 0..p {
                        out[(i, c)] -= weight * h[i] * proj;
                    }
                }
            }
            KpcaData::Matrices(ms) => out.axpy(-weight, &ms[j].matmul(x)),
        }
    }

    fn reference_optimum(&self, weights: &[(usize, f64)]) -> Result<Option<(f64, Matrix)>> {
        spectral_optimum(&self.weighted_matrix(weights), self.manifold.shape().1).map(Some)
    }

    /// Signed coordinate of each sample along the leading eigenvector of `H̄`.
    fn partition_keys(&self) -> Option<Vec<f64>> {
        let KpcaData::Samples(s) = &self.data else {
            return None;
        };
        let (_, vectors) = sym_eigen(&self.mean_matrix()).ok()?;
        Some(
            (0..s.rows())
                .map(|j| {
                    s.row(j)
                        .iter()
                        .enumerate()
                        .map(|(i, h)| h * vectors[(i, 0)])
                        .sum()
                })
                .collect(),
        )
    }
}
