//! Federated zeroth-order optimization with projection-based local steps
//! and control-variate drift correction.
//!
//! Each round `k`, every client starts from `𝒫(x^k)` and runs `τ` local steps
//!
//! ```text
//! ẑ^{t+1} = ẑ^t − η (G_i^{k,t} + c_i^k),     z^{t+1} = 𝒫(ẑ^{t+1}),
//! ```
//!
//! where `G_i^{k,t}` is a zeroth-order estimate at `z^t`. The server then
//! moves `x^{k+1} = 𝒫(x^k) + η_g (mean_i ẑ_i^{k,τ} − 𝒫(x^k))`, and each
//! client refreshes its correction
//!
//! ```text
//! c_i^{k+1} = (𝒫(x^k) − x^{k+1}) / (η_g η τ) − (1/τ) Σ_t G_i^{k,t}.
//! ```
//!
//! Random streams: client `i` in round `k` at step `t` draws from path
//! `[i, k, t]` under the master seed; the initial point comes from
//! `[2³¹, 0]`. Clients run in parallel and the server reduces them in index
//! order, so results do not depend on the thread count.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{estimate_grad, FunctionOracle, SmoothingConfig};
use crate::linalg::Matrix;
use crate::manifold::{ManifoldKind, ManifoldPoint};
use crate::problems::{Objective, Partition, Problem, ShardOracle};
use crate::rng::RngStream;

const SERVER_STREAM: u64 = 1 << 31;

/// How client sample streams are keyed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StreamLayout {
    /// Client `i` uses path `[i, k, t]`.
    #[default]
    PerClient,
    /// Every client uses client 0's streams; with identical data all
    /// clients then draw the same estimates.
    Shared,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub n_clients: usize,
    pub rounds: usize,
    pub local_steps: usize,
    /// Local step size η.
    pub eta: f64,
    /// Server step size η_g; `None` means `√n`.
    pub eta_g: Option<f64>,
    pub smoothing: SmoothingConfig,
    pub master_seed: u64,
    /// Record a trace line every this many rounds (and after the last one).
    pub metric_interval: usize,
    /// Oracle minibatch size; `None` evaluates the full shard mean.
    pub minibatch: Option<usize>,
    pub stream_layout: StreamLayout,
    /// Fill the `wall_ms` trace column; it stays 0 otherwise so traces are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
    /// Starting point `x^1`; a random manifold point when absent.
    pub x0: Option<Matrix>,
}

impl RunConfig {
    pub fn new(
        n_clients: usize,
        rounds: usize,
        local_steps: usize,
        eta: f64,
        smoothing: SmoothingConfig,
    ) -> Self {
        Self {
            n_clients,
            rounds,
            local_steps,
            eta,
            eta_g: None,
            smoothing,
            master_seed: 0,
            metric_interval: 1,
            minibatch: None,
            stream_layout: StreamLayout::PerClient,
            record_wall_time: false,
            x0: None,
        }
    }

    pub fn eta_g(&self) -> f64 {
        self.eta_g.unwrap_or((self.n_clients as f64).sqrt())
    }

    /// Effective step `η̃ = η_g η τ`.
    pub fn eta_tilde(&self) -> f64 {
        self.eta_g() * self.eta * self.local_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_clients == 0 || self.local_steps == 0 || self.metric_interval == 0 {
            return bad("n_clients, local_steps and metric_interval must be >= 1".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if let Some(g) = self.eta_g {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("eta_g must be positive, got {g}"));
            }
        }
        if self.minibatch == Some(0) {
            return bad("minibatch must be >= 1".into());
        }
        Ok(())
    }

    fn client_stream(&self, client: usize, round: usize) -> RngStream {
        let i = match self.stream_layout {
            StreamLayout::PerClient => client as u64,
            StreamLayout::Shared => 0,
        };
        RngStream::new(self.master_seed)
            .spawn(i)
            .spawn(round as u64)
    }
}

pub(crate) fn initial_point(
    manifold: &ManifoldKind,
    x0: Option<&Matrix>,
    seed: u64,
) -> Result<Matrix> {
    match x0 {
        Some(x) => {
            manifold.check_shape(x)?;
            Ok(x.clone())
        }
        None => Ok(manifold
            .random_point(&RngStream::with_path(seed, &[SERVER_STREAM, 0]))?
            .into_value()),
    }
}

#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    /// Correction `c_i^k`.
    pub correction: Matrix,
    /// Unprojected local iterate `ẑ_i^{k,t}`.
    pub z_hat: Matrix,
    /// `𝒫(ẑ_i^{k,t})`.
    pub z: ManifoldPoint,
    /// Estimates `G_i^{k,t}` of the current round.
    pub history: Vec<Matrix>,
}

impl ClientState {
    /// Zero correction, parked at `start`.
    pub fn new(id: usize, start: &ManifoldPoint) -> Self {
        let (p, r) = start.manifold().shape();
        Self {
            id,
            correction: Matrix::zeros(p, r),
            z_hat: start.value().clone(),
            z: start.clone(),
            history: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServerState {
    /// `x^k`, generally off the manifold.
    pub x: Matrix,
    pub round: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub round: usize,
    /// `f(𝒫(x^k)) − f*`, or the raw value when `f*` is unknown.
    pub f_gap: f64,
    /// `‖𝒢_η̃(𝒫(x^k))‖²`.
    pub grad_map_sq: f64,
    pub oracle_calls: u64,
    pub wall_ms: f64,
}

pub const TRACE_HEADER: &str = "round,f_gap,grad_map_sq,oracle_calls,wall_ms";

/// Trace as CSV text with [`TRACE_HEADER`] and LF line endings.
pub fn trace_to_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&format!(
            "{},{:e},{:e},{},{:e}\n",
            r.round, r.f_gap, r.grad_map_sq, r.oracle_calls, r.wall_ms
        ));
    }
    out
}

/// What the metrics are measured against: a deterministic objective with an
/// exact gradient and, when known, its optimal value.
#[derive(Clone, Copy)]
pub struct Metrics<'a> {
    pub objective: &'a dyn FunctionOracle,
    pub f_star: Option<f64>,
}

impl<'a> Metrics<'a> {
    pub fn new(objective: &'a dyn FunctionOracle, f_star: Option<f64>) -> Self {
        Self { objective, f_star }
    }

    fn record(
        &self,
        manifold: &ManifoldKind,
        x: &Matrix,
        eta_tilde: f64,
        round: usize,
        oracle_calls: u64,
        wall_ms: f64,
    ) -> Result<TraceRecord> {
        let px = manifold.project_value(x)?;
        let f = self.objective.eval(&px, &RngStream::new(0));
        Ok(TraceRecord {
            round,
            f_gap: f - self.f_star.unwrap_or(0.0),
            grad_map_sq: gradient_mapping_sq(manifold, self.objective, x, eta_tilde)?,
            oracle_calls,
            wall_ms,
        })
    }
}

/// Deterministic objective evaluation; the sample stream is ignored.
impl FunctionOracle for Objective<'_> {
    fn eval(&self, x: &Matrix, _sample: &RngStream) -> f64 {
        self.value(x)
    }

    fn exact_euclid_grad(&self, x: &Matrix) -> Option<Matrix> {
        Some(self.euclid_grad(x))
    }
}

/// `‖(𝒫(x) − 𝒫(𝒫(x) − η̃ grad f(𝒫(x)))) / η̃‖²` with the exact gradient.
pub fn gradient_mapping_sq(
    manifold: &ManifoldKind,
    objective: &dyn FunctionOracle,
    x: &Matrix,
    eta_tilde: f64,
) -> Result<f64> {
    let px = manifold.project(x)?;
    let egrad = objective
        .exact_euclid_grad(px.value())
        .ok_or(Error::MissingExactGradient)?;
    let rgrad = px.riemannian_gradient(&egrad)?;
    let mut step = px.value().clone();
    step.axpy(-eta_tilde, &rgrad);
    let next = manifold.project_value(&step)?;
    Ok((px.value() - &next).norm_sq() / (eta_tilde * eta_tilde))
}

/// τ local steps of one client from `start = 𝒫(x^k)`. `stream` is the
/// client's stream for this round; step `t` uses `stream/t`.
pub fn client_local_round(
    client: ClientState,
    start: &ManifoldPoint,
    cfg: &RunConfig,
    oracle: &dyn FunctionOracle,
    stream: &RngStream,
    round: usize,
) -> Result<ClientState> {
    client_local_round_with(client, start, cfg, round, |z, t| {
        estimate_grad(z, oracle, &cfg.smoothing, &stream.spawn(t as u64))
    })
}

/// As [`client_local_round`] with the estimate at `(z^t, t)` supplied by
/// `estimate`.
pub fn client_local_round_with(
    mut client: ClientState,
    start: &ManifoldPoint,
    cfg: &RunConfig,
    round: usize,
    mut estimate: impl FnMut(&ManifoldPoint, usize) -> Result<Matrix>,
) -> Result<ClientState> {
    let manifold = start.manifold();
    let gamma = manifold.gamma();
    let id = client.id;
    let ctx = |e: Error| e.in_round(round, Some(id));
    client.z_hat = start.value().clone();
    client.z = start.clone();
    client.history.clear();
    for t in 0..cfg.local_steps {
        let g = estimate(&client.z, t).map_err(ctx)?;
        client.z_hat.axpy(-cfg.eta, &g);
        client.z_hat.axpy(-cfg.eta, &client.correction);
        client.history.push(g);
        let z = manifold.project(&client.z_hat).map_err(ctx)?;
        let dist = (&client.z_hat - z.value()).norm();
        if !(dist <= gamma) {
            return Err(Error::TubeEscape {
                round,
                client: Some(id),
                step: Some(t),
                dist,
                gamma,
            });
        }
        client.z = z;
    }
    Ok(client)
}

/// `x^{k+1} = 𝒫(x^k) + η_g (mean_i ẑ_i − 𝒫(x^k))`, summing clients in order.
pub fn server_aggregate(start: &Matrix, finals: &[&Matrix], eta_g: f64) -> Result<Matrix> {
    if finals.is_empty() {
        return Err(Error::InvalidConfig(
            "no client results to aggregate".into(),
        ));
    }
    let mut mean = Matrix::zeros(start.rows(), start.cols());
    for z in finals {
        start.same_shape(z)?;
        mean += *z;
    }
    mean.scale_mut(1.0 / finals.len() as f64);
    let mut x = start.clone();
    x.axpy(eta_g, &(&mean - start));
    Ok(x)
}

/// `(𝒫(x^k) − x^{k+1}) / (η_g η τ) − (1/τ) Σ_t G^{k,t}`.
pub fn correction_update(
    client: &ClientState,
    start: &Matrix,
    x_next: &Matrix,
    cfg: &RunConfig,
) -> Matrix {
    let tau = cfg.local_steps as f64;
    let mut c = (start - x_next).scale(1.0 / (cfg.eta_g() * cfg.eta * tau));
    for g in &client.history {
        c.axpy(-1.0 / tau, g);
    }
    c
}

/// Per-round view handed to observers after corrections are refreshed.
pub struct RoundReport<'a> {
    /// 0-based round index `k`.
    pub round: usize,
    /// `𝒫(x^k)`.
    pub start: &'a Matrix,
    /// `x^{k+1}`.
    pub x_next: &'a Matrix,
    /// Client states holding the round's histories and `c_i^{k+1}`.
    pub clients: &'a [ClientState],
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Metrics at the starting point, reported as round 0.
    pub initial: TraceRecord,
    pub trace: Vec<TraceRecord>,
    /// Final manifold point `𝒫(x^{K+1})`.
    pub final_point: Matrix,
}

fn millis(start: Option<Instant>) -> f64 {
    start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3)
}

fn due(round: usize, interval: usize, last: usize) -> bool {
    round % interval == 0 || round == last
}

/// Algorithm driver over explicit per-client oracles.
pub fn run_federated_with_oracles(
    cfg: &RunConfig,
    manifold: &ManifoldKind,
    oracles: &[&dyn FunctionOracle],
    metrics: Metrics<'_>,
    mut observer: impl FnMut(&RoundReport<'_>),
) -> Result<RunOutput> {
    cfg.validate()?;
    if oracles.len() != cfg.n_clients {
        return Err(Error::InvalidConfig(format!(
            "{} oracles for {} clients",
            oracles.len(),
            cfg.n_clients
        )));
    }
    let gamma = manifold.gamma();
    if cfg.smoothing.mu > gamma {
        return Err(Error::SmoothingOutOfTube {
            mu: cfg.smoothing.mu,
            gamma,
        });
    }
    let clock = cfg.record_wall_time.then(Instant::now);
    let eta_tilde = cfg.eta_tilde();
    let calls_per_round = 2 * (cfg.smoothing.batch * cfg.local_steps * cfg.n_clients) as u64;
    let mut server = ServerState {
        x: initial_point(manifold, cfg.x0.as_ref(), cfg.master_seed)?,
        round: 0,
    };
    let initial = metrics.record(manifold, &server.x, eta_tilde, 0, 0, 0.0)?;
    let start0 = manifold.project(&server.x)?;
    let mut clients: Vec<ClientState> = (0..cfg.n_clients)
        .map(|i| ClientState::new(i, &start0))
        .collect();
    let mut trace = Vec::new();

    for k in 0..cfg.rounds {
        let start = manifold
            .project(&server.x)
            .map_err(|e| e.in_round(k, None))?;
        clients = clients
            .into_par_iter()
            .map(|c| {
                let s = cfg.client_stream(c.id, k);
                let o = oracles[c.id];
                client_local_round(c, &start, cfg, o, &s, k)
            })
            .collect::<Result<_>>()?;
        let finals: Vec<&Matrix> = clients.iter().map(|c| &c.z_hat).collect();
        let x_next = server_aggregate(start.value(), &finals, cfg.eta_g())?;
        let dist = manifold
            .dist_to_manifold(&x_next)
            .map_err(|e| e.in_round(k, None))?;
        if !(dist <= gamma) {
            return Err(Error::TubeEscape {
                round: k,
                client: None,
                step: None,
                dist,
                gamma,
            });
        }
        for c in &mut clients {
            c.correction = correction_update(c, start.value(), &x_next, cfg);
        }
        observer(&RoundReport {
            round: k,
            start: start.value(),
            x_next: &x_next,
            clients: &clients,
        });
        server = ServerState {
            x: x_next,
            round: k + 1,
        };
        if due(server.round, cfg.metric_interval, cfg.rounds) {
            let rec = metrics
                .record(
                    manifold,
                    &server.x,
                    eta_tilde,
                    server.round,
                    calls_per_round * server.round as u64,
                    millis(clock),
                )
                .map_err(|e| e.in_round(k, None))?;
            trace.push(rec);
        }
    }
    Ok(RunOutput {
        initial,
        trace,
        final_point: manifold.project_value(&server.x)?,
    })
}

/// Runs the algorithm on a partitioned problem. Metrics are taken on the
/// unweighted average of client objectives.
pub fn run_federated(
    cfg: &RunConfig,
    problem: &dyn Problem,
    partition: &Partition,
) -> Result<RunOutput> {
    if partition.n_clients() != cfg.n_clients {
        return Err(Error::InvalidConfig(format!(
            "partition has {} clients, config has {}",
            partition.n_clients(),
            cfg.n_clients
        )));
    }
    let shards: Vec<ShardOracle<'_>> = partition
        .assignment
        .iter()
        .map(|s| ShardOracle::new(problem, s.clone(), cfg.minibatch))
        .collect::<Result<_>>()?;
    let oracles: Vec<&dyn FunctionOracle> =
        shards.iter().map(|s| s as &dyn FunctionOracle).collect();
    let objective = Objective::client_average(problem, &partition.assignment)?;
    let f_star = objective.reference_optimum()?.map(|(f, _)| f);
    run_federated_with_oracles(
        cfg,
        problem.manifold(),
        &oracles,
        Metrics::new(&objective, f_star),
        |_| {},
    )
}

#[derive(Clone, Debug)]
pub struct CentralizedConfig {
    pub iterations: usize,
    /// Step size of `x ← 𝒫(x − step·G)`.
    pub step: f64,
    pub smoothing: SmoothingConfig,
    pub master_seed: u64,
    pub metric_interval: usize,
    pub record_wall_time: bool,
    pub x0: Option<Matrix>,
}

impl CentralizedConfig {
    pub fn new(iterations: usize, step: f64, smoothing: SmoothingConfig) -> Self {
        Self {
            iterations,
            step,
            smoothing,
            master_seed: 0,
            metric_interval: 1,
            record_wall_time: false,
            x0: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CentralizedOutput {
    pub run: RunOutput,
    pub iterations: usize,
    /// Total time spent building estimates.
    pub estimator_time: Duration,
    /// Total time spent in the update projection.
    pub projection_time: Duration,
}

impl CentralizedOutput {
    pub fn mean_estimator_time(&self) -> Duration {
        self.estimator_time / self.iterations.max(1) as u32
    }
}

/// Zeroth-order descent `x ← 𝒫(x − step·G(x))`. Iteration `k` (0-based)
/// draws from the stream client 0 would use at round `k`, step 0, so a
/// single-step federated run with the same seed sees the same estimates.
pub fn run_centralized_zo(
    cfg: &CentralizedConfig,
    manifold: &ManifoldKind,
    oracle: &dyn FunctionOracle,
    metrics: Metrics<'_>,
) -> Result<CentralizedOutput> {
    if cfg.metric_interval == 0 || !(cfg.step > 0.0) {
        return Err(Error::InvalidConfig(
            "metric_interval >= 1 and step > 0 required".into(),
        ));
    }
    let clock = cfg.record_wall_time.then(Instant::now);
    let root = RngStream::new(cfg.master_seed);
    let calls = 2 * cfg.smoothing.batch as u64;
    let mut x = manifold.project(&initial_point(manifold, cfg.x0.as_ref(), cfg.master_seed)?)?;
    let initial = metrics.record(manifold, x.value(), cfg.step, 0, 0, 0.0)?;
    let mut trace = Vec::new();
    let mut estimator_time = Duration::ZERO;
    let mut projection_time = Duration::ZERO;
    for k in 0..cfg.iterations {
        let t0 = Instant::now();
        let g = estimate_grad(
            &x,
            oracle,
            &cfg.smoothing,
            &root.spawn(0).spawn(k as u64).spawn(0),
        )
        .map_err(|e| e.in_round(k, None))?;
        let t1 = Instant::now();
        let mut next = x.value().clone();
        next.axpy(-cfg.step, &g);
        x = manifold.project(&next).map_err(|e| e.in_round(k, None))?;
        let t2 = Instant::now();
        estimator_time += t1 - t0;
        projection_time += t2 - t1;
        let it = k + 1;
        if due(it, cfg.metric_interval, cfg.iterations) {
            trace.push(metrics.record(
                manifold,
                x.value(),
                cfg.step,
                it,
                calls * it as u64,
                millis(clock),
            )?);
        }
    }
    Ok(CentralizedOutput {
        run: RunOutput {
            initial,
            trace,
            final_point: x.into_value(),
        },
        iterations: cfg.iterations,
        estimator_time,
        projection_time,
    })
}

/// First-order reference `x ← 𝒫(x − η̃ grad f(x))` with exact gradients.
pub fn run_centralized_rgd(
    manifold: &ManifoldKind,
    metrics: Metrics<'_>,
    eta_tilde: f64,
    iterations: usize,
    x0: &Matrix,
) -> Result<RunOutput> {
    let mut x = manifold.project(x0)?;
    let initial = metrics.record(manifold, x.value(), eta_tilde, 0, 0, 0.0)?;
    let mut trace = Vec::with_capacity(iterations);
    for k in 0..iterations {
        let egrad = metrics
            .objective
            .exact_euclid_grad(x.value())
            .ok_or(Error::MissingExactGradient)?;
        let mut next = x.value().clone();
        next.axpy(-eta_tilde, &x.riemannian_gradient(&egrad)?);
        x = manifold.project(&next).map_err(|e| e.in_round(k, None))?;
        trace.push(metrics.record(manifold, x.value(), eta_tilde, k + 1, 0, 0.0)?);
    }
    Ok(RunOutput {
        initial,
        trace,
        final_point: x.into_value(),
    })
}

/// Constants entering the step-size condition. All are estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothnessConstants {
    /// Projection Lipschitz factor `M`.
    pub m: f64,
    /// Riemannian smoothness `L`.
    pub l: f64,
    /// Euclidean gradient bound `χ`.
    pub chi: f64,
    /// Estimator norm bound `χ_G`.
    pub chi_g: f64,
    /// Second-order smoothness `L_𝒫` of the projection.
    pub l_p: f64,
}

impl SmoothnessConstants {
    /// `min{1/(24ML), γ/(6 max{χ_G, χ}), 1/(χ L_𝒫)}`.
    pub fn step_bound(&self, gamma: f64) -> f64 {
        (1.0 / (24.0 * self.m * self.l))
            .min(gamma / (6.0 * self.chi_g.max(self.chi)))
            .min(1.0 / (self.chi * self.l_p))
    }
}

/// Warnings for each term of the step-size condition that `η̃` exceeds.
/// The constants are estimates, so nothing here is fatal.
pub fn step_size_guard(eta_tilde: f64, gamma: f64, c: &SmoothnessConstants) -> Vec<String> {
    let terms = [
        ("1/(24ML)", 1.0 / (24.0 * c.m * c.l)),
        (
            "gamma/(6 max(chi_G, chi))",
            gamma / (6.0 * c.chi_g.max(c.chi)),
        ),
        ("1/(chi L_P)", 1.0 / (c.chi * c.l_p)),
    ];
    let warnings: Vec<String> = terms
        .iter()
        .filter(|(_, bound)| eta_tilde > *bound)
        .map(|(name, bound)| format!("effective step {eta_tilde:e} exceeds {name} = {bound:e}"))
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    warnings
}

/// Samples the constants of [`SmoothnessConstants`] at random manifold
/// points. `χ_G` is the largest estimate norm over `n_draws` estimates, each
/// at a fresh point.
pub fn estimate_constants(
    manifold: &ManifoldKind,
    oracle: &dyn FunctionOracle,
    smoothing: &SmoothingConfig,
    n_draws: u64,
    stream: &RngStream,
) -> Result<SmoothnessConstants> {
    let gamma = manifold.gamma();
    let (p, r) = manifold.shape();
    let grad = |x: &Matrix| {
        oracle
            .exact_euclid_grad(x)
            .ok_or(Error::MissingExactGradient)
    };
    let mut c = SmoothnessConstants {
        m: 0.0,
        l: 0.0,
        chi: 0.0,
        chi_g: 0.0,
        l_p: 0.0,
    };
    let sample = RngStream::new(0);
    for i in 0..n_draws {
        let s = stream.spawn(i);
        let x = manifold.random_point(&s.spawn(0))?;
        let y = manifold.random_point(&s.spawn(1))?;
        let gx = grad(x.value())?;
        c.chi = c.chi.max(gx.norm());
        let g = estimate_grad(&x, oracle, smoothing, &s.spawn(2))?;
        c.chi_g = c.chi_g.max(g.norm());

        // L from the gradient Lipschitz ratio and the quadratic upper bound
        let rx = x.riemannian_gradient(&gx)?;
        let ry = y.riemannian_gradient(&grad(y.value())?)?;
        let d = (y.value() - x.value()).norm();
        if d > 1e-8 {
            c.l = c.l.max((&ry - &rx).norm() / d);
            let fx = oracle.eval(x.value(), &sample);
            let fy = oracle.eval(y.value(), &sample);
            let excess = fy - fx - rx.dot(&(y.value() - x.value()));
            c.l = c.l.max(2.0 * excess / (d * d));
        }

        // M and L_P from perturbations inside the tube
        let u = crate::rng::sample_unit_sphere(&s.spawn(3), p, r).scale(0.9 * gamma);
        let moved = manifold.project_value(&(x.value() + &u))?;
        c.m = c.m.max((&moved - x.value()).norm() / u.norm());
        let h = crate::rng::sample_unit_sphere(&s.spawn(4), p, r).scale(1e-3);
        let base = x.value() + &u.scale(0.5);
        let plus = manifold.project_value(&(&base + &h))?;
        let minus = manifold.project_value(&(&base - &h))?;
        let mid = manifold.project_value(&base)?;
        let second = (&(&plus + &minus) - &mid.scale(2.0)).norm() / h.norm_sq();
        c.l_p = c.l_p.max(second);
    }
    Ok(c)
}

/// Outcome of [`descent_lemma_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentCheck {
    pub trials: usize,
    pub violations: usize,
    /// Largest observed `lhs − rhs`.
    pub worst_excess: f64,
}

/// Spot-checks the descent inequality for a projected Euclidean step with
/// `z = x`:
///
/// ```text
/// f(x⁺) ≤ f(x) + ⟨grad f(x) − v, x⁺ − x⟩ − (1/(2η)) ‖x⁺ − x‖²
///         − (1/(2η) − 3‖v‖/(4γ)) ‖x − x⁺‖² + (L/2) ‖x⁺ − x‖²
/// ```
///
/// over random `(x, v, η)` with `x − ηv` inside the tube.
pub fn descent_lemma_check(
    manifold: &ManifoldKind,
    objective: &dyn FunctionOracle,
    l: f64,
    trials: usize,
    stream: &RngStream,
) -> Result<DescentCheck> {
    use rand::Rng;
    let gamma = manifold.gamma();
    let (p, r) = manifold.shape();
    let sample = RngStream::new(0);
    let mut out = DescentCheck {
        trials,
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
    };
    for i in 0..trials as u64 {
        let s = stream.spawn(i);
        let x = manifold.random_point(&s.spawn(0))?;
        let v = crate::rng::sample_gaussian(&s.spawn(1), p, r);
        // ‖ηv‖ ≤ 0.9γ keeps x − ηv in the tube
        let frac: f64 = s.spawn(2).rng().random_range(0.01..0.9);
        let eta = frac * gamma / v.norm();
        let mut step = x.value().clone();
        step.axpy(-eta, &v);
        let xp = manifold.project_value(&step)?;
        let egrad = objective
            .exact_euclid_grad(x.value())
            .ok_or(Error::MissingExactGradient)?;
        let rg = x.riemannian_gradient(&egrad)?;
        let d = &xp - x.value();
        let dn = d.norm_sq();
        let lhs = objective.eval(&xp, &sample);
        let rhs = objective.eval(x.value(), &sample) + (&rg - &v).dot(&d)
            - dn / (2.0 * eta)
            - (1.0 / (2.0 * eta) - 3.0 * v.norm() / (4.0 * gamma)) * dn
            + 0.5 * l * dn;
        let excess = lhs - rhs;
        out.worst_excess = out.worst_excess.max(excess);
        if excess > 1e-12 * lhs.abs().max(1.0) {
            out.violations += 1;
        }
    }
    Ok(out)
}
