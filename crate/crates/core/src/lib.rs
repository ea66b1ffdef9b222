//! Projection-based zeroth-order Riemannian optimization.
//!
//! The crate provides matrix manifolds with nearest-point projections
//! ([`manifold`]), zeroth-order gradient estimators that only query function
//! values ([`estimator`]), benchmark objectives ([`problems`]), and a
//! deterministic simulator of federated optimization with drift-correcting
//! control variates ([`fedsim`]).
//!
//! ```
//! use prozo::{estimate_grad, ConstantOracle, ManifoldKind, RngStream, SmoothingConfig};
//!
//! let sphere = ManifoldKind::sphere(3, 1).unwrap();
//! let x = sphere.random_point(&RngStream::new(7)).unwrap();
//! let cfg = SmoothingConfig::projection(1e-3, 4);
//! let g = estimate_grad(&x, &ConstantOracle(2.0), &cfg, &RngStream::new(8)).unwrap();
//! assert_eq!(g.norm(), 0.0);
//! ```

// `!(a <= b)` comparisons are used so that NaN takes the failure branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod fedsim;
pub mod linalg;
pub mod manifold;
pub mod problems;
pub mod rng;
pub mod selftest;
pub mod tol;

pub use error::{Error, Result};
pub use estimator::{
    estimate_grad, estimate_grad_projection, estimate_grad_retraction, log_log_slope, probe_bias,
    probe_bias_control_variate, probe_variance, sphere_smoothing_mean, ConstantOracle,
    CountingOracle, EstimatorVariant, FnOracle, FunctionOracle, LinearOracle, NoisyOracle,
    SmoothingConfig,
};
pub use fedsim::{
    client_local_round, client_local_round_with, correction_update, gradient_mapping_sq,
    run_centralized_rgd, run_centralized_zo, run_federated, run_federated_with_oracles,
    server_aggregate, trace_to_csv, CentralizedConfig, CentralizedOutput, ClientState, Metrics,
    RunConfig, RunOutput, StreamLayout, TraceRecord,
};
pub use linalg::Matrix;
pub use manifold::{ManifoldKind, ManifoldPoint};
pub use problems::{
    partition_dataset, FixedRankRegressionProblem, KpcaProblem, Objective, Partition,
    PartitionScheme, Problem, ShardOracle, SphereAttackProblem, VictimClassifier,
};
pub use rng::RngStream;
