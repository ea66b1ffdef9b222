//! Least-squares regression over fixed-rank matrices:
//! `f(x) = mean_s (⟨A_s, x⟩ − b_s)²` with `rank(x) = R`.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::manifold::ManifoldKind;
use crate::rng::{sample_gaussian, RngStream};

use super::Problem;

#[derive(Clone, Debug)]
pub struct FixedRankRegressionProblem {
    designs: Vec<Matrix>,
    targets: Vec<f64>,
    truth: Matrix,
    noise: f64,
    manifold: ManifoldKind,
}

impl FixedRankRegressionProblem {
    pub fn new(
        designs: Vec<Matrix>,
        targets: Vec<f64>,
        truth: Matrix,
        noise: f64,
        manifold: ManifoldKind,
    ) -> Result<Self> {
        if designs.is_empty() || designs.len() != targets.len() {
            return Err(Error::InvalidConfig(format!(
                "{} designs for {} targets",
                designs.len(),
                targets.len()
            )));
        }
        for a in designs.iter().chain(std::iter::once(&truth)) {
            manifold.check_shape(a)?;
        }
        Ok(Self {
            designs,
            targets,
            truth,
            noise,
            manifold,
        })
    }

    /// Ground truth `x* = U Vᵀ / √R` with Gaussian factors, Gaussian designs
    /// with unit-variance entries, and targets `⟨A_s, x*⟩ + noise·N(0,1)`.
    pub fn synthetic(
        rows: usize,
        cols: usize,
        rank: usize,
        n_samples: usize,
        noise: f64,
        gamma: f64,
        stream: &RngStream,
    ) -> Result<Self> {
        let manifold = ManifoldKind::fixed_rank(rows, cols, rank, gamma)?;
        if n_samples == 0 {
            return Err(Error::InvalidConfig("need at least one sample".into()));
        }
        let u = sample_gaussian(&stream.spawn(0), rows, rank);
        let v = sample_gaussian(&stream.spawn(1), cols, rank);
        let truth = u.matmul(&v.transpose()).scale(1.0 / (rank as f64).sqrt());
        let mut designs = Vec::with_capacity(n_samples);
        let mut targets = Vec::with_capacity(n_samples);
        for s in 0..n_samples as u64 {
            let a = sample_gaussian(&stream.spawn(2).spawn(s), rows, cols);
            let e = sample_gaussian(&stream.spawn(3).spawn(s), 1, 1)[(0, 0)];
            targets.push(a.dot(&truth) + noise * e);
            designs.push(a);
        }
        Self::new(designs, targets, truth, noise, manifold)
    }

    pub fn truth(&self) -> &Matrix {
        &self.truth
    }
}

impl Problem for FixedRankRegressionProblem {
    fn name(&self) -> &str {
        "lowrank"
    }

    fn manifold(&self) -> &ManifoldKind {
        &self.manifold
    }

    fn n_samples(&self) -> usize {
        self.designs.len()
    }

    fn term(&self, x: &Matrix, j: usize) -> f64 {
        let r = self.designs[j].dot(x) - self.targets[j];
        r * r
    }

    fn add_term_grad(&self, x: &Matrix, j: usize, weight: f64, out: &mut Matrix) {
        let r = self.designs[j].dot(x) - self.targets[j];
        out.axpy(weight * 2.0 * r, &self.designs[j]);
    }

    /// Known only without noise, where the ground truth attains zero loss.
    fn reference_optimum(&self, _weights: &[(usize, f64)]) -> Result<Option<(f64, Matrix)>> {
        Ok((self.noise == 0.0).then(|| (0.0, self.truth.clone())))
    }

    fn partition_keys(&self) -> Option<Vec<f64>> {
        Some(self.targets.clone())
    }
}
