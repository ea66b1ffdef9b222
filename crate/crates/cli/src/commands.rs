//! The four subcommands.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use prozo::problems::attack::inputs_from_csv_str;
use prozo::problems::io::load_matrix_csv;
use prozo::{
    log_log_slope, partition_dataset, probe_bias, probe_bias_control_variate, probe_variance,
    run_centralized_zo, run_federated, sphere_smoothing_mean, CentralizedConfig, ConstantOracle,
    FixedRankRegressionProblem, FunctionOracle, KpcaProblem, Matrix, Metrics, NoisyOracle,
    Objective, PartitionScheme, Problem, RngStream, RunConfig, ShardOracle, SmoothingConfig,
    SphereAttackProblem, TraceRecord, VictimClassifier,
};

use crate::config::{
    ConfigError, ExperimentConfig, ProbeOracle, ProblemKind, SchemeName, SweepPoint,
};
use crate::output::OutputDir;

/// Default attack parameters; `epsilon` was tuned once on the built-in
/// victim and is also written in `configs/attack.toml`.
pub const ATTACK_EPSILON: f64 = 3.0;
pub const ATTACK_C: f64 = 1.0;
pub const ATTACK_KAPPA: f64 = 0.5;

#[derive(Debug)]
pub enum CliError {
    /// Bad config, missing file or IO failure: exit 2.
    Config(String),
    /// Numerical abort: exit 3.
    Numerical(prozo::Error),
    /// A check failed: exit 1.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(e) => write!(f, "numerical abort: {e}"),
            CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<prozo::Error> for CliError {
    fn from(e: prozo::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e)
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("io: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub enum BuiltProblem {
    Kpca(KpcaProblem),
    Lowrank(FixedRankRegressionProblem),
    Attack(SphereAttackProblem),
}

impl BuiltProblem {
    pub fn as_dyn(&self) -> &dyn Problem {
        match self {
            BuiltProblem::Kpca(p) => p,
            BuiltProblem::Lowrank(p) => p,
            BuiltProblem::Attack(p) => p,
        }
    }

    /// Inputs whose prediction the perturbation flips (attack only).
    pub fn flipped(&self, x: &Matrix) -> Option<usize> {
        match self {
            BuiltProblem::Attack(p) => p.manifold().project(x).ok().map(|d| p.flipped(d.value())),
            _ => None,
        }
    }
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn build_problem(cfg: &ExperimentConfig, rank: usize) -> CliResult<BuiltProblem> {
    let p = &cfg.problem;
    let data = RngStream::new(p.data_seed.unwrap_or(1));
    Ok(match p.kind {
        ProblemKind::Kpca => BuiltProblem::Kpca(match &p.dataset {
            Some(path) => KpcaProblem::from_samples(load_matrix_csv(path)?, rank)?,
            None => {
                KpcaProblem::synthetic(p.dim.unwrap_or(10), rank, p.samples.unwrap_or(20), &data)?
            }
        }),
        ProblemKind::Lowrank => BuiltProblem::Lowrank(FixedRankRegressionProblem::synthetic(
            p.rows.unwrap_or(8),
            p.cols.unwrap_or(6),
            rank,
            p.samples.unwrap_or(200),
            p.noise.unwrap_or(0.0),
            p.gamma.unwrap_or(0.1),
            &data,
        )?),
        ProblemKind::Attack => {
            let victim = match &p.victim {
                Some(path) => VictimClassifier::from_csv_str(&read_file(path)?)?,
                None => VictimClassifier::builtin()?,
            };
            let (inputs, labels) = match &p.inputs {
                Some(path) => inputs_from_csv_str(&read_file(path)?)?,
                None => prozo::problems::attack::builtin_inputs()?,
            };
            BuiltProblem::Attack(SphereAttackProblem::new(
                victim,
                inputs,
                labels,
                p.epsilon.unwrap_or(ATTACK_EPSILON),
                p.c.unwrap_or(ATTACK_C),
                p.kappa.unwrap_or(ATTACK_KAPPA),
            )?)
        }
    })
}

fn scheme(cfg: &ExperimentConfig) -> PartitionScheme {
    match cfg.partition.scheme {
        SchemeName::Iid => PartitionScheme::Iid,
        SchemeName::SortedShards => PartitionScheme::SortedShards {
            shards_per_client: cfg.partition.shards_per_client,
        },
        SchemeName::Dirichlet => PartitionScheme::Dirichlet {
            alpha: cfg.partition.alpha,
        },
    }
}

/// Trace with the round-0 row first.
fn trace_csv(initial: &TraceRecord, trace: &[TraceRecord]) -> String {
    let mut rows = Vec::with_capacity(trace.len() + 1);
    rows.push(*initial);
    rows.extend_from_slice(trace);
    prozo::trace_to_csv(&rows)
}

fn reject_sweeps(cfg: &ExperimentConfig, command: &str) -> CliResult<()> {
    if let Some(key) = cfg.swept_keys().keys().next() {
        return Err(CliError::Config(format!(
            "`{key}` is a list, but {command} does not sweep"
        )));
    }
    Ok(())
}

fn variant_tag(v: prozo::EstimatorVariant) -> &'static str {
    match v {
        prozo::EstimatorVariant::Projection => "projection",
        prozo::EstimatorVariant::RetractionPolar => "retraction",
    }
}

pub fn cmd_centralized(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    reject_sweeps(cfg, "centralized")?;
    let step = cfg
        .centralized
        .step
        .ok_or_else(|| CliError::Config("`centralized.step` is required".into()))?;
    let point = cfg.sweep_points()[0];
    let built = build_problem(cfg, point.rank)?;
    let problem = built.as_dyn();
    let out = OutputDir::create(out, cfg.resolved_toml())?;
    let all: Vec<usize> = (0..problem.n_samples()).collect();
    let oracle = ShardOracle::new(problem, all, cfg.run.minibatch)?;
    let objective = Objective::full(problem);
    let f_star = objective.reference_optimum()?.map(|(f, _)| f);
    let iterations = cfg.centralized.iterations;
    let mu = cfg.smoothing.mu.unwrap_or_else(|| {
        SmoothingConfig::default_mu(problem.manifold().ambient_dim(), 1, 1, iterations)
    });
    for &seed in &cfg.output.seeds {
        for &v in &cfg.centralized.variants {
            let variant = prozo::EstimatorVariant::from(v);
            let smoothing = SmoothingConfig {
                mu,
                batch: point.batch,
                variant,
            };
            let mut c = CentralizedConfig::new(iterations, step, smoothing);
            c.master_seed = seed;
            c.metric_interval = cfg.run.metric_interval;
            c.record_wall_time = cfg.output.timing;
            let res = run_centralized_zo(
                &c,
                problem.manifold(),
                &oracle,
                Metrics::new(&objective, f_star),
            )?;
            let tag = variant_tag(variant);
            let name = format!("centralized_{tag}_seed{seed}.csv");
            out.write(
                &name,
                &trace_csv(&res.run.initial, &res.run.trace),
                &[("seed", seed.to_string())],
            )?;
            let last = res.run.trace.last().unwrap_or(&res.run.initial);
            println!(
                "centralized variant={tag} seed={seed} iterations={iterations} initial_f_gap={:e} final_f_gap={:e} mean_estimator_us={:.3} mean_projection_us={:.3}",
                res.run.initial.f_gap,
                last.f_gap,
                res.mean_estimator_time().as_secs_f64() * 1e6,
                res.projection_time.as_secs_f64() * 1e6 / iterations.max(1) as f64,
            );
        }
    }
    Ok(())
}

pub const SUMMARY_HEADER: &str = "n_clients,local_steps,batch,rank,seed,eta,mu,rounds,initial_f_gap,final_f_gap,final_grad_map_sq,mean_grad_map_sq,rounds_to_target,flipped";

struct JobResult {
    row: String,
}

fn run_point(
    cfg: &ExperimentConfig,
    point: SweepPoint,
    seed: u64,
    out: &OutputDir,
) -> CliResult<JobResult> {
    let built = build_problem(cfg, point.rank)?;
    let problem = built.as_dyn();
    let keys = problem.partition_keys();
    let partition = partition_dataset(
        problem.n_samples(),
        point.n_clients,
        scheme(cfg),
        keys.as_deref(),
        &RngStream::new(cfg.partition.seed),
    )?;
    let eta_g = cfg.run.eta_g.unwrap_or((point.n_clients as f64).sqrt());
    let eta = match (cfg.run.eta, cfg.run.eta_tilde) {
        (Some(e), _) => e,
        (None, Some(t)) => t / (eta_g * point.local_steps as f64),
        (None, None) => {
            return Err(CliError::Config(
                "one of `run.eta` or `run.eta_tilde` is required".into(),
            ))
        }
    };
    let rounds = cfg.run.rounds;
    let mu = cfg.smoothing.mu.unwrap_or_else(|| {
        SmoothingConfig::default_mu(
            problem.manifold().ambient_dim(),
            point.n_clients,
            point.local_steps,
            rounds,
        )
    });
    let mut rc = RunConfig::new(
        point.n_clients,
        rounds,
        point.local_steps,
        eta,
        SmoothingConfig {
            mu,
            batch: point.batch,
            variant: cfg.smoothing.variant.into(),
        },
    );
    rc.eta_g = cfg.run.eta_g;
    rc.master_seed = seed;
    rc.metric_interval = cfg.run.metric_interval;
    rc.minibatch = cfg.run.minibatch;
    rc.record_wall_time = cfg.output.timing;
    let res = run_federated(&rc, problem, &partition)?;

    let name = format!("federated_{}_seed{seed}.csv", point.label());
    out.write(
        &name,
        &trace_csv(&res.initial, &res.trace),
        &[
            ("seed", seed.to_string()),
            ("point", format!("\"{}\"", point.label())),
        ],
    )?;
    let last = res.trace.last().unwrap_or(&res.initial);
    let mean_g = if res.trace.is_empty() {
        res.initial.grad_map_sq
    } else {
        res.trace.iter().map(|r| r.grad_map_sq).sum::<f64>() / res.trace.len() as f64
    };
    let to_target = cfg.run.target_gap.and_then(|t| {
        std::iter::once(&res.initial)
            .chain(&res.trace)
            .find(|r| r.f_gap <= t)
            .map(|r| r.round.to_string())
    });
    let flipped = built.flipped(&res.final_point).map(|f| f.to_string());
    let mut row = String::new();
    write!(
        row,
        "{},{},{},{},{seed},{eta:e},{mu:e},{rounds},{:e},{:e},{:e},{mean_g:e},{},{}",
        point.n_clients,
        point.local_steps,
        point.batch,
        point.rank,
        res.initial.f_gap,
        last.f_gap,
        last.grad_map_sq,
        to_target.unwrap_or_default(),
        flipped.unwrap_or_default(),
    )
    .expect("write to String");
    Ok(JobResult { row })
}

pub fn cmd_federated(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    let out = OutputDir::create(out, cfg.resolved_toml())?;
    let jobs: Vec<(SweepPoint, u64)> = cfg
        .sweep_points()
        .into_iter()
        .flat_map(|p| cfg.output.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results: Vec<CliResult<JobResult>> = jobs
        .par_iter()
        .map(|&(p, s)| run_point(cfg, p, s, &out))
        .collect();
    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    for ((p, s), r) in jobs.iter().zip(results) {
        let r = r.inspect_err(|e| log::error!("point {} seed {s}: {e}", p.label()))?;
        println!("federated {} seed={s} {}", p.label(), r.row);
        summary.push_str(&r.row);
        summary.push('\n');
    }
    out.write("summary.csv", &summary, &[])?;
    Ok(())
}

pub fn cmd_probe(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    reject_sweeps(cfg, "probe")?;
    let point = cfg.sweep_points()[0];
    let built = build_problem(cfg, point.rank)?;
    let problem = built.as_dyn();
    let manifold = problem.manifold();
    let (p, r) = manifold.shape();
    let out = OutputDir::create(out, cfg.resolved_toml())?;
    let objective = Objective::full(problem);
    let constant = ConstantOracle(0.0);
    let oracle: &dyn FunctionOracle = match cfg.probe.oracle {
        ProbeOracle::Objective => &objective,
        ProbeOracle::Constant => &constant,
    };
    let noisy = NoisyOracle {
        inner: oracle,
        sigma: cfg.probe.noise_sigma,
    };
    let pr = &cfg.probe;
    for &seed in &cfg.output.seeds {
        let root = RngStream::new(seed);
        let x = manifold.random_point(&root.spawn(0))?;
        let ctx = [("seed", seed.to_string())];

        let egrad = oracle
            .exact_euclid_grad(x.value())
            .ok_or(prozo::Error::MissingExactGradient)?;
        let g = x.riemannian_gradient(&egrad)?;
        let iso = sphere_smoothing_mean(&g, pr.isotropy_draws, &root.spawn(3))?;
        let iso_err = (&iso - &g).norm();
        println!(
            "probe isotropy seed={seed} d={} abs_err={iso_err:e} rel_err={:e}",
            p * r,
            if g.norm() > 0.0 {
                iso_err / g.norm()
            } else {
                0.0
            }
        );

        for &v in &pr.variants {
            let variant = prozo::EstimatorVariant::from(v);
            let tag = variant_tag(variant);
            let bias = probe_bias(
                &x,
                oracle,
                variant,
                &pr.mu_list,
                pr.bias_samples,
                &root.spawn(1),
            )?;
            let bias_cv = probe_bias_control_variate(
                &x,
                oracle,
                variant,
                &pr.mu_list,
                pr.bias_samples,
                &root.spawn(1),
            )?;
            let mut csv = String::from("mu,bias,bias_control_variate\n");
            for ((mu, b), (_, b_cv)) in bias.iter().zip(&bias_cv) {
                writeln!(csv, "{mu:e},{b:e},{b_cv:e}").expect("write to String");
            }
            out.write(&format!("probe_bias_{tag}_seed{seed}.csv"), &csv, &ctx)?;

            let mut var = Vec::new();
            for &m in &pr.batch_list {
                let sc = SmoothingConfig {
                    mu: pr.variance_mu,
                    batch: m,
                    variant,
                };
                var.push((
                    m as f64,
                    probe_variance(&x, &noisy, &sc, pr.repeats, &root.spawn(2))?,
                ));
            }
            let mut csv = String::from("m,mse\n");
            for (m, mse) in &var {
                writeln!(csv, "{m},{mse:e}").expect("write to String");
            }
            out.write(&format!("probe_variance_{tag}_seed{seed}.csv"), &csv, &ctx)?;
            println!(
                "probe variant={tag} seed={seed} bias_slope={:.4} bias_slope_control_variate={:.4} variance_slope={:.4}",
                log_log_slope(&bias),
                log_log_slope(&bias_cv),
                log_log_slope(&var),
            );
        }
    }
    Ok(())
}

pub fn cmd_selftest(inject_failure: Option<&str>) -> CliResult<()> {
    if let Some(name) = inject_failure {
        if !prozo::selftest::check_names().contains(&name) {
            return Err(CliError::Config(format!(
                "no selftest check named `{name}`"
            )));
        }
    }
    let results = prozo::selftest::run_checks(inject_failure);
    let failed = results.iter().filter(|c| !c.passed).count();
    for c in &results {
        println!(
            "{} {} measured={:e} tolerance={:e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance
        );
    }
    println!(
        "selftest: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} selftest check(s) failed"
        )));
    }
    Ok(())
}
