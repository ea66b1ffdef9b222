//! Zeroth-order Riemannian gradient estimators.
//!
//! Both estimators only query function values. The projection estimator
//! perturbs `x` directly in the ambient space along uniform unit-sphere
//! directions and maps the perturbed point back with the manifold
//! projection:
//!
//! ```text
//! G^P(x) = (p·r / m) Σ_j [F(𝒫(x + μ u_j), ξ_j) − F(x, ξ_j)] / μ · u_j,   u_j ~ Unif(S^{pr−1})
//! ```
//!
//! The retraction estimator is the baseline: Gaussian directions projected
//! onto the tangent space and pushed through the polar retraction, with no
//! dimension prefactor:
//!
//! ```text
//! G^R(x) = (1 / m) Σ_j [F(Retr_x(μ u_j), ξ_j) − F(x, ξ_j)] / μ · u_j,   u_j = P_{T_x}(N(0, I))
//! ```
//!
//! Sample `j` of an estimate drawn from stream `s` takes its direction from
//! `s/j/0` and its data sample from `s/j/1`.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::manifold::ManifoldPoint;
use crate::rng::{sample_gaussian, sample_unit_sphere, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EstimatorVariant {
    /// Ambient sphere directions and the manifold projection.
    Projection,
    /// Tangent Gaussian directions and the polar retraction.
    RetractionPolar,
}

impl EstimatorVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Projection => "projection",
            Self::RetractionPolar => "retraction",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingConfig {
    /// Smoothing radius μ.
    pub mu: f64,
    /// Number of directions `m` averaged per estimate.
    pub batch: usize,
    pub variant: EstimatorVariant,
}

impl SmoothingConfig {
    pub fn projection(mu: f64, batch: usize) -> Self {
        Self {
            mu,
            batch,
            variant: EstimatorVariant::Projection,
        }
    }

    pub fn retraction(mu: f64, batch: usize) -> Self {
        Self {
            mu,
            batch,
            variant: EstimatorVariant::RetractionPolar,
        }
    }

    /// `min(1e-4, 1/(p·r·n·τ·K))`.
    pub fn default_mu(
        ambient_dim: usize,
        n_clients: usize,
        local_steps: usize,
        rounds: usize,
    ) -> f64 {
        let denom = (ambient_dim * n_clients.max(1) * local_steps.max(1) * rounds.max(1)) as f64;
        (1.0 / denom).min(1e-4)
    }

    fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("estimator batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Stochastic zeroth-order oracle `F(x, ξ)`.
///
/// `eval` must be a deterministic function of the point and the stream; the
/// stream stands for the data sample `ξ`. Optimization code never calls
/// `exact_euclid_grad`, which exists for diagnostics.
pub trait FunctionOracle: Sync {
    fn eval(&self, x: &Matrix, sample: &RngStream) -> f64;

    /// `∇f(x) = E_ξ[∇F(x, ξ)]`, when known.
    fn exact_euclid_grad(&self, _x: &Matrix) -> Option<Matrix> {
        None
    }
}

impl<O: FunctionOracle + ?Sized> FunctionOracle for &O {
    fn eval(&self, x: &Matrix, sample: &RngStream) -> f64 {
        (**self).eval(x, sample)
    }
    fn exact_euclid_grad(&self, x: &Matrix) -> Option<Matrix> {
        (**self).exact_euclid_grad(x)
    }
}

impl<O: FunctionOracle + ?Sized> FunctionOracle for Box<O> {
    fn eval(&self, x: &Matrix, sample: &RngStream) -> f64 {
        (**self).eval(x, sample)
    }
    fn exact_euclid_grad(&self, x: &Matrix) -> Option<Matrix> {
        (**self).exact_euclid_grad(x)
    }
}

/// `F ≡ c`.
#[derive(Clone, Copy, Debug)]
pub struct ConstantOracle(pub f64);

impl FunctionOracle for ConstantOracle {
    fn eval(&self, _x: &Matrix, _sample: &RngStream) -> f64 {
        self.0
    }
    fn exact_euclid_grad(&self, x: &Matrix) -> Option<Matrix> {
        Some(Matrix::zeros(x.rows(), x.cols()))
    }
}

/// `F(x) = ⟨c, x⟩`.
#[derive(Clone, Debug)]
pub struct LinearOracle(pub Matrix);

impl FunctionOracle for LinearOracle {
    fn eval(&self, x: &Matrix, _sample: &RngStream) -> f64 {
        self.0.dot(x)
    }
    fn exact_euclid_grad(&self, _x: &Matrix) -> Option<Matrix> {
        Some(self.0.clone())
    }
}

/// Adds a random linear term `⟨ζ, x⟩` with `ζ ~ N(0, σ²/(p·r) I)` drawn
/// from the sample stream, so that `E‖∇F − ∇f‖² = σ²` and both evaluations
/// of a paired difference see the same `ζ`.
#[derive(Clone, Debug)]
pub struct NoisyOracle<O> {
    pub inner: O,
    pub sigma: f64,
}

impl<O: FunctionOracle> FunctionOracle for NoisyOracle<O> {
    fn eval(&self, x: &Matrix, sample: &RngStream) -> f64 {
        let base = self.inner.eval(x, &sample.spawn(0));
        let zeta = sample_gaussian(&sample.spawn(1), x.rows(), x.cols());
        let scale = self.sigma / (x.len() as f64).sqrt();
        base + scale * zeta.dot(x)
    }
    fn exact_euclid_grad(&self, x: &Matrix) -> Option<Matrix> {
        self.inner.exact_euclid_grad(x)
    }
}

/// Counts evaluations of the wrapped oracle.
#[derive(Debug, Default)]
pub struct CountingOracle<O> {
    pub inner: O,
    calls: AtomicU64,
}

impl<O> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<O: FunctionOracle> FunctionOracle for CountingOracle<O> {
    fn eval(&self, x: &Matrix, sample: &RngStream) -> f64 {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.eval(x, sample)
    }
    fn exact_euclid_grad(&self, x: &Matrix) -> Option<Matrix> {
        self.inner.exact_euclid_grad(x)
    }
}

/// Deterministic oracle from a closure over the point.
pub struct FnOracle<F>(pub F);

impl<F: Fn(&Matrix) -> f64 + Sync> FunctionOracle for FnOracle<F> {
    fn eval(&self, x: &Matrix, _sample: &RngStream) -> f64 {
        (self.0)(x)
    }
}

fn checked_eval(oracle: &dyn FunctionOracle, x: &Matrix, sample: &RngStream) -> Result<f64> {
    let v = oracle.eval(x, sample);
    if !v.is_finite() {
        return Err(Error::NonFinite("oracle evaluation"));
    }
    Ok(v)
}

/// Projection-based estimate at `x`.
pub fn estimate_grad_projection(
    x: &ManifoldPoint,
    oracle: &dyn FunctionOracle,
    cfg: &SmoothingConfig,
    stream: &RngStream,
) -> Result<Matrix> {
    if cfg.variant != EstimatorVariant::Projection {
        return Err(Error::VariantMismatch(cfg.variant));
    }
    cfg.validate()?;
    let gamma = x.manifold().gamma();
    if cfg.mu > gamma {
        return Err(Error::SmoothingOutOfTube { mu: cfg.mu, gamma });
    }
    let (p, r) = x.manifold().shape();
    let mut acc = Matrix::zeros(p, r);
    for j in 0..cfg.batch as u64 {
        let child = stream.spawn(j);
        let u = sample_unit_sphere(&child.spawn(0), p, r);
        let coeff = projection_difference(x, oracle, cfg.mu, &u, &child.spawn(1))?;
        acc.axpy(coeff, &u);
    }
    acc.scale_mut((p * r) as f64 / cfg.batch as f64);
    Ok(acc)
}

/// `[F(𝒫(x + μu), ξ) − F(x, ξ)] / μ` for one direction.
fn projection_difference(
    x: &ManifoldPoint,
    oracle: &dyn FunctionOracle,
    mu: f64,
    u: &Matrix,
    sample: &RngStream,
) -> Result<f64> {
    let mut perturbed = x.value().clone();
    perturbed.axpy(mu, u);
    let moved = x.manifold().project_value(&perturbed)?;
    let f_plus = checked_eval(oracle, &moved, sample)?;
    let f_0 = checked_eval(oracle, x.value(), sample)?;
    Ok((f_plus - f_0) / mu)
}

/// Projection estimate with caller-supplied directions and data samples.
/// Directions are used as given, without normalization.
pub fn estimate_grad_projection_with(
    x: &ManifoldPoint,
    oracle: &dyn FunctionOracle,
    mu: f64,
    directions: &[Matrix],
    samples: &[RngStream],
) -> Result<Matrix> {
    assert_eq!(directions.len(), samples.len());
    assert!(!directions.is_empty());
    let (p, r) = x.manifold().shape();
    let mut acc = Matrix::zeros(p, r);
    for (u, xi) in directions.iter().zip(samples) {
        x.manifold().check_shape(u)?;
        let coeff = projection_difference(x, oracle, mu, u, xi)?;
        acc.axpy(coeff, u);
    }
    acc.scale_mut((p * r) as f64 / directions.len() as f64);
    Ok(acc)
}

/// Retraction-based baseline estimate at `x`.
pub fn estimate_grad_retraction(
    x: &ManifoldPoint,
    oracle: &dyn FunctionOracle,
    cfg: &SmoothingConfig,
    stream: &RngStream,
) -> Result<Matrix> {
    if cfg.variant != EstimatorVariant::RetractionPolar {
        return Err(Error::VariantMismatch(cfg.variant));
    }
    cfg.validate()?;
    let (p, r) = x.manifold().shape();
    let mut acc = Matrix::zeros(p, r);
    for j in 0..cfg.batch as u64 {
        let child = stream.spawn(j);
        let u = x.tangent_project(&sample_gaussian(&child.spawn(0), p, r))?;
        let coeff = retraction_difference(x, oracle, cfg.mu, &u, &child.spawn(1))?;
        acc.axpy(coeff, &u);
    }
    acc.scale_mut(1.0 / cfg.batch as f64);
    Ok(acc)
}

fn retraction_difference(
    x: &ManifoldPoint,
    oracle: &dyn FunctionOracle,
    mu: f64,
    u: &Matrix,
    sample: &RngStream,
) -> Result<f64> {
    let moved = x.retract_polar(&u.scale(mu))?;
    let f_plus = checked_eval(oracle, moved.value(), sample)?;
    let f_0 = checked_eval(oracle, x.value(), sample)?;
    Ok((f_plus - f_0) / mu)
}

/// Retraction estimate with caller-supplied tangent directions.
pub fn estimate_grad_retraction_with(
    x: &ManifoldPoint,
    oracle: &dyn FunctionOracle,
    mu: f64,
    directions: &[Matrix],
    samples: &[RngStream],
) -> Result<Matrix> {
    assert_eq!(directions.len(), samples.len());
    assert!(!directions.is_empty());
    let (p, r) = x.manifold().shape();
    let mut acc = Matrix::zeros(p, r);
    for (u, xi) in directions.iter().zip(samples) {
        let coeff = retraction_difference(x, oracle, mu, u, xi)?;
        acc.axpy(coeff, u);
    }
    acc.scale_mut(1.0 / directions.len() as f64);
    Ok(acc)
}

/// Dispatches on `cfg.variant`.
pub fn estimate_grad(
    x: &ManifoldPoint,
    oracle: &dyn FunctionOracle,
    cfg: &SmoothingConfig,
    stream: &RngStream,
) -> Result<Matrix> {
    match cfg.variant {
        EstimatorVariant::Projection => estimate_grad_projection(x, oracle, cfg, stream),
        EstimatorVariant::RetractionPolar => estimate_grad_retraction(x, oracle, cfg, stream),
    }
}

const REDUCTION_CHUNK: u64 = 2048;

/// Sum of `f(i)` for `i in 0..n`, computed in fixed-size chunks so the
/// floating-point result does not depend on the number of worker threads.
pub(crate) fn ordered_sum<F>(n: u64, shape: (usize, usize), f: F) -> Result<Matrix>
where
    F: Fn(u64) -> Result<Matrix> + Sync,
{
    let chunks = n.div_ceil(REDUCTION_CHUNK);
    let partials: Vec<Matrix> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Matrix::zeros(shape.0, shape.1);
            for i in c * REDUCTION_CHUNK..((c + 1) * REDUCTION_CHUNK).min(n) {
                acc += &f(i)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = Matrix::zeros(shape.0, shape.1);
    for part in &partials {
        total += part;
    }
    Ok(total)
}

fn exact_riemannian_grad(x: &ManifoldPoint, oracle: &dyn FunctionOracle) -> Result<Matrix> {
    let g = oracle
        .exact_euclid_grad(x.value())
        .ok_or(Error::MissingExactGradient)?;
    x.riemannian_gradient(&g)
}

/// Bias of the single-direction estimator for each smoothing radius.
///
/// Returns `(μ, ‖mean of n_samples estimates − grad f(x)‖)`. The same
/// sample streams are reused for every `μ`.
pub fn probe_bias(
    x: &ManifoldPoint,
    oracle: &dyn FunctionOracle,
    variant: EstimatorVariant,
    mu_list: &[f64],
    n_samples: u64,
    stream: &RngStream,
) -> Result<Vec<(f64, f64)>> {
    let grad = exact_riemannian_grad(x, oracle)?;
    let shape = x.manifold().shape();
    mu_list
        .iter()
        .map(|&mu| {
            let cfg = SmoothingConfig {
                mu,
                batch: 1,
                variant,
            };
            let sum = ordered_sum(n_samples, shape, |i| {
                estimate_grad(x, oracle, &cfg, &stream.spawn(i))
            })?;
            let mean = sum.scale(1.0 / n_samples as f64);
            Ok((mu, (&mean - &grad).norm()))
        })
        .collect()
}

/// Same quantity as [`probe_bias`], estimated with the first-order term of
/// each single-direction estimate as a control variate.
///
/// That term is `c⟨grad f, u⟩u` with the same direction `u` and the
/// variant's prefactor `c`, and its mean is exactly `grad f(x)`. Subtracting
/// it removes the `O(1/√n_samples)` sampling floor of the plain mean, so
/// small biases remain measurable.
pub fn probe_bias_control_variate(
    x: &ManifoldPoint,
    oracle: &dyn FunctionOracle,
    variant: EstimatorVariant,
    mu_list: &[f64],
    n_samples: u64,
    stream: &RngStream,
) -> Result<Vec<(f64, f64)>> {
    let grad = exact_riemannian_grad(x, oracle)?;
    let (p, r) = x.manifold().shape();
    mu_list
        .iter()
        .map(|&mu| {
            let cfg = SmoothingConfig {
                mu,
                batch: 1,
                variant,
            };
            let sum = ordered_sum(n_samples, (p, r), |i| {
                let s = stream.spawn(i);
                let g = estimate_grad(x, oracle, &cfg, &s)?;
                // the direction estimate_grad drew for its only sample
                let dir = s.spawn(0).spawn(0);
                let (u, c) = match variant {
                    EstimatorVariant::Projection => {
                        (sample_unit_sphere(&dir, p, r), (p * r) as f64)
                    }
                    EstimatorVariant::RetractionPolar => {
                        (x.tangent_project(&sample_gaussian(&dir, p, r))?, 1.0)
                    }
                };
                let mut d = g;
                d.axpy(-c * grad.dot(&u), &u);
                Ok(d)
            })?;
            Ok((mu, sum.scale(1.0 / n_samples as f64).norm()))
        })
        .collect()
}

/// Empirical `E‖G − grad f(x)‖²` over `n_repeats` independent estimates.
pub fn probe_variance(
    x: &ManifoldPoint,
    oracle: &dyn FunctionOracle,
    cfg: &SmoothingConfig,
    n_repeats: u64,
    stream: &RngStream,
) -> Result<f64> {
    let grad = exact_riemannian_grad(x, oracle)?;
    let total = ordered_sum(n_repeats, (1, 1), |i| {
        let g = estimate_grad(x, oracle, cfg, &stream.spawn(i))?;
        Ok(Matrix::from_rows(&[&[(&g - &grad).norm_sq()]]))
    })?;
    Ok(total[(0, 0)] / n_repeats as f64)
}

/// `p·r · mean_i ⟨g, u_i⟩ u_i` over `n_draws` unit-sphere directions; equals
/// `g` in expectation for every fixed `g`.
pub fn sphere_smoothing_mean(g: &Matrix, n_draws: u64, stream: &RngStream) -> Result<Matrix> {
    let (p, r) = g.shape();
    let sum = ordered_sum(n_draws, (p, r), |i| {
        let u = sample_unit_sphere(&stream.spawn(i), p, r);
        Ok(u.scale(g.dot(&u)))
    })?;
    Ok(sum.scale((p * r) as f64 / n_draws as f64))
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}
