//! Benchmark objectives.
//!
//! Every built-in problem is a finite sum over samples, `f(x) = mean_j f_j(x)`.
//! A [`Problem`] exposes the per-sample terms; [`Objective`] fixes a weighting
//! of the samples (the federated objective is the unweighted mean of client
//! means), and [`ShardOracle`] turns one client's shard into a stochastic
//! zeroth-order oracle whose `ξ` is a minibatch drawn with replacement.

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimator::FunctionOracle;
use crate::linalg::Matrix;
use crate::manifold::ManifoldKind;
use crate::rng::RngStream;

pub mod attack;
pub mod io;
pub mod kpca;
pub mod lowrank;
pub mod partition;

pub use attack::{SphereAttackProblem, VictimClassifier};
pub use kpca::KpcaProblem;
pub use lowrank::FixedRankRegressionProblem;
pub use partition::{partition_dataset, Partition, PartitionScheme};

/// Finite-sum objective over a manifold.
pub trait Problem: Sync {
    fn name(&self) -> &str;

    fn manifold(&self) -> &ManifoldKind;

    fn n_samples(&self) -> usize;

    /// Loss of sample `j` at `x`. `j` is assumed valid.
    fn term(&self, x: &Matrix, j: usize) -> f64;

    /// Adds `weight · ∇f_j(x)` to `out`. `j` is assumed valid.
    fn add_term_grad(&self, x: &Matrix, j: usize, weight: f64, out: &mut Matrix);

    /// Global optimum of `Σ_j w_j f_j` when it is known in closed form.
    fn reference_optimum(&self, _weights: &[(usize, f64)]) -> Result<Option<(f64, Matrix)>> {
        Ok(None)
    }

    /// Optional per-sample keys used to sort samples for sharded partitions.
    fn partition_keys(&self) -> Option<Vec<f64>> {
        None
    }

    /// Mean of the indexed terms.
    fn value(&self, x: &Matrix, indices: &[usize]) -> Result<f64> {
        self.check(x, indices)?;
        let sum: f64 = indices.iter().map(|&j| self.term(x, j)).sum();
        Ok(sum / indices.len() as f64)
    }

    /// Gradient of [`Problem::value`].
    fn euclid_grad(&self, x: &Matrix, indices: &[usize]) -> Result<Matrix> {
        self.check(x, indices)?;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        let w = 1.0 / indices.len() as f64;
        for &j in indices {
            self.add_term_grad(x, j, w, &mut g);
        }
        Ok(g)
    }

    fn check(&self, x: &Matrix, indices: &[usize]) -> Result<()> {
        self.manifold().check_shape(x)?;
        if indices.is_empty() {
            return Err(Error::InvalidConfig("empty sample index set".into()));
        }
        let n = self.n_samples();
        if let Some(&bad) = indices.iter().find(|&&j| j >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        Ok(())
    }
}

/// `Σ_j w_j f_j(x)` for a fixed weighting of the samples of a problem.
pub struct Objective<'a> {
    pub problem: &'a dyn Problem,
    weights: Vec<(usize, f64)>,
}

impl<'a> Objective<'a> {
    /// Uniform mean over all samples.
    pub fn full(problem: &'a dyn Problem) -> Self {
        let n = problem.n_samples();
        let w = 1.0 / n as f64;
        Self {
            problem,
            weights: (0..n).map(|j| (j, w)).collect(),
        }
    }

    /// `(1/n) Σ_i mean_{j∈S_i} f_j`, the unweighted average of client means.
    pub fn client_average(problem: &'a dyn Problem, shards: &[Vec<usize>]) -> Result<Self> {
        if shards.is_empty() || shards.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidConfig(
                "every client needs at least one sample".into(),
            ));
        }
        let n = shards.len() as f64;
        let mut weights = Vec::new();
        for shard in shards {
            problem.check(
                &Matrix::zeros(problem.manifold().shape().0, problem.manifold().shape().1),
                shard,
            )?;
            let w = 1.0 / (n * shard.len() as f64);
            weights.extend(shard.iter().map(|&j| (j, w)));
        }
        Ok(Self { problem, weights })
    }

    pub fn weights(&self) -> &[(usize, f64)] {
        &self.weights
    }

    pub fn manifold(&self) -> &ManifoldKind {
        self.problem.manifold()
    }

    pub fn value(&self, x: &Matrix) -> f64 {
        self.weights
            .iter()
            .map(|&(j, w)| w * self.problem.term(x, j))
            .sum()
    }

    pub fn euclid_grad(&self, x: &Matrix) -> Matrix {
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for &(j, w) in &self.weights {
            self.problem.add_term_grad(x, j, w, &mut g);
        }
        g
    }

    pub fn reference_optimum(&self) -> Result<Option<(f64, Matrix)>> {
        self.problem.reference_optimum(&self.weights)
    }
}

/// Stochastic oracle for one shard. With `minibatch = None` the oracle is
/// the deterministic shard mean; otherwise each evaluation averages a
/// minibatch drawn uniformly with replacement from the shard using the
/// sample stream, so `E_ξ F(x, ξ) = f_i(x)` exactly.
pub struct ShardOracle<'a> {
    problem: &'a dyn Problem,
    shard: Vec<usize>,
    minibatch: Option<usize>,
}

impl<'a> ShardOracle<'a> {
    pub fn new(
        problem: &'a dyn Problem,
        shard: Vec<usize>,
        minibatch: Option<usize>,
    ) -> Result<Self> {
        let (p, r) = problem.manifold().shape();
        problem.check(&Matrix::zeros(p, r), &shard)?;
        if minibatch == Some(0) {
            return Err(Error::InvalidConfig("minibatch must be >= 1".into()));
        }
        Ok(Self {
            problem,
            shard,
            minibatch,
        })
    }

    pub fn full(problem: &'a dyn Problem) -> Self {
        Self {
            problem,
            shard: (0..problem.n_samples()).collect(),
            minibatch: None,
        }
    }

    pub fn shard(&self) -> &[usize] {
        &self.shard
    }
}

impl FunctionOracle for ShardOracle<'_> {
    fn eval(&self, x: &Matrix, sample: &RngStream) -> f64 {
        match self.minibatch {
            None => {
                let s: f64 = self.shard.iter().map(|&j| self.problem.term(x, j)).sum();
                s / self.shard.len() as f64
            }
            Some(b) => {
                let mut rng = sample.rng();
                let mut s = 0.0;
                for _ in 0..b {
                    let j = self.shard[rng.random_range(0..self.shard.len())];
                    s += self.problem.term(x, j);
                }
                s / b as f64
            }
        }
    }

    fn exact_euclid_grad(&self, x: &Matrix) -> Option<Matrix> {
        let mut g = Matrix::zeros(x.rows(), x.cols());
        let w = 1.0 / self.shard.len() as f64;
        for &j in &self.shard {
            self.problem.add_term_grad(x, j, w, &mut g);
        }
        Some(g)
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shard_minibatch_is_unbiased() {
        let prob = KpcaProblem::synthetic(5, 2, 12, &RngStream::new(1)).unwrap();
        let shard = vec![0, 3, 4, 9];
        let oracle = ShardOracle::new(&prob, shard.clone(), Some(2)).unwrap();
        let x = prob.manifold().random_point(&RngStream::new(2)).unwrap();
        let root = RngStream::new(3);
        let n = 200_000;
        let mean: f64 = (0..n)
            .map(|i| oracle.eval(x.value(), &root.spawn(i)))
            .sum::<f64>()
            / n as f64;
        let exact = prob.value(x.value(), &shard).unwrap();
        assert!(
            (mean - exact).abs() < 5e-3 * exact.abs().max(1.0),
            "{mean} vs {exact}"
        );
        // deterministic given the stream
        assert_eq!(
            oracle.eval(x.value(), &root.spawn(7)),
            oracle.eval(x.value(), &root.spawn(7))
        );
    }

    #[test]
    fn shard_oracle_validates_indices() {
        let prob = KpcaProblem::synthetic(4, 2, 3, &RngStream::new(1)).unwrap();
        assert!(matches!(
            ShardOracle::new(&prob, vec![0, 5], None),
            Err(Error::IndexOutOfRange { index: 5, len: 3 })
        ));
    }

    #[test]
    fn client_average_matches_global_for_equal_shards() {
        let prob = KpcaProblem::synthetic(6, 2, 12, &RngStream::new(4)).unwrap();
        let shards: Vec<Vec<usize>> = (0..4).map(|i| (3 * i..3 * i + 3).collect()).collect();
        let obj = Objective::client_average(&prob, &shards).unwrap();
        let full = Objective::full(&prob);
        let x = prob.manifold().random_point(&RngStream::new(5)).unwrap();
        let per_client: f64 = shards
            .iter()
            .map(|s| s.len() as f64 * prob.value(x.value(), s).unwrap())
            .sum::<f64>()
            / 12.0;
        assert!((obj.value(x.value()) - full.value(x.value())).abs() < 1e-12);
        assert!((per_client - full.value(x.value())).abs() < 1e-12);
        assert!((obj.euclid_grad(x.value()) - full.euclid_grad(x.value())).norm() < 1e-12);
    }
}
