//! Experiment configuration files.
//!
//! A config is a TOML document with the sections below. Unknown keys are
//! errors. Keys marked "sweepable" accept a single value or a list; the
//! federated command runs the cartesian product of all lists.
//!
//! ```toml
//! [problem]
//! kind = "kpca"          # kpca | lowrank | attack
//! samples = 20           # kpca, lowrank: synthetic sample count
//! dim = 10               # kpca: ambient dimension p
//! rank = 2               # sweepable; kpca: columns r, lowrank: rank R
//! dataset = "data.csv"   # kpca: N×p sample matrix instead of synthetic data
//! data_seed = 1          # seed for synthetic data
//!
//! [partition]
//! scheme = "sorted_shards"   # iid | sorted_shards | dirichlet
//! shards_per_client = 1
//!
//! [run]
//! n_clients = [2, 8]     # sweepable
//! local_steps = 5        # sweepable
//! rounds = 300
//! eta_tilde = 0.1        # or `eta`; η = η̃/(η_g τ) per sweep point
//!
//! [smoothing]
//! variant = "projection"
//! mu = 1e-4
//! batch = 10             # sweepable
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// A single value or a list of values.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum Sweep<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> Sweep<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Sweep::One(v) => vec![v.clone()],
            Sweep::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub smoothing: SmoothingSection,
    #[serde(default)]
    pub centralized: CentralizedSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Kpca,
    Lowrank,
    Attack,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub samples: Option<usize>,
    pub dim: Option<usize>,
    pub rank: Option<Sweep<usize>>,
    pub dataset: Option<PathBuf>,
    pub data_seed: Option<u64>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub noise: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub c: Option<f64>,
    pub kappa: Option<f64>,
    pub victim: Option<PathBuf>,
    pub inputs: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    Iid,
    SortedShards,
    Dirichlet,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    #[serde(default)]
    pub scheme: SchemeName,
    #[serde(default = "one")]
    pub shards_per_client: usize,
    #[serde(default = "half")]
    pub alpha: f64,
    /// Seed of the partition draw; fixed across algorithm seeds.
    #[serde(default)]
    pub seed: u64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self {
            scheme: SchemeName::Iid,
            shards_per_client: 1,
            alpha: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "sweep_one")]
    pub n_clients: Sweep<usize>,
    #[serde(default = "sweep_one")]
    pub local_steps: Sweep<usize>,
    #[serde(default = "hundred")]
    pub rounds: usize,
    pub eta: Option<f64>,
    pub eta_tilde: Option<f64>,
    pub eta_g: Option<f64>,
    pub minibatch: Option<usize>,
    #[serde(default = "one")]
    pub metric_interval: usize,
    /// `f_gap` threshold for the summary's `rounds_to_target` column.
    pub target_gap: Option<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            n_clients: sweep_one(),
            local_steps: sweep_one(),
            rounds: 100,
            eta: None,
            eta_tilde: None,
            eta_g: None,
            minibatch: None,
            metric_interval: 1,
            target_gap: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    #[default]
    Projection,
    Retraction,
}

impl From<VariantName> for prozo::EstimatorVariant {
    fn from(v: VariantName) -> Self {
        match v {
            VariantName::Projection => prozo::EstimatorVariant::Projection,
            VariantName::Retraction => prozo::EstimatorVariant::RetractionPolar,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSection {
    #[serde(default)]
    pub variant: VariantName,
    /// Defaults to `min(1e-4, 1/(p·r·n·τ·K))` when absent.
    pub mu: Option<f64>,
    #[serde(default = "sweep_one")]
    pub batch: Sweep<usize>,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        Self {
            variant: VariantName::Projection,
            mu: None,
            batch: sweep_one(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CentralizedSection {
    #[serde(default = "thousand")]
    pub iterations: usize,
    pub step: Option<f64>,
    #[serde(default = "default_variants")]
    pub variants: Vec<VariantName>,
}

impl Default for CentralizedSection {
    fn default() -> Self {
        Self {
            iterations: 1000,
            step: None,
            variants: default_variants(),
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeOracle {
    #[default]
    Objective,
    Constant,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default)]
    pub oracle: ProbeOracle,
    #[serde(default = "default_variants")]
    pub variants: Vec<VariantName>,
    #[serde(default = "default_mu_list")]
    pub mu_list: Vec<f64>,
    #[serde(default = "default_bias_samples")]
    pub bias_samples: u64,
    #[serde(default = "default_batch_list")]
    pub batch_list: Vec<usize>,
    #[serde(default = "default_variance_mu")]
    pub variance_mu: f64,
    #[serde(default = "one_f")]
    pub noise_sigma: f64,
    #[serde(default = "default_repeats")]
    pub repeats: u64,
    #[serde(default = "default_isotropy_draws")]
    pub isotropy_draws: u64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            oracle: ProbeOracle::Objective,
            variants: default_variants(),
            mu_list: default_mu_list(),
            bias_samples: default_bias_samples(),
            batch_list: default_batch_list(),
            variance_mu: default_variance_mu(),
            noise_sigma: 1.0,
            repeats: default_repeats(),
            isotropy_draws: default_isotropy_draws(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Fill the `wall_ms` trace column. Traces are then no longer
    /// reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            timing: false,
        }
    }
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn hundred() -> usize {
    100
}
fn thousand() -> usize {
    1000
}
fn sweep_one() -> Sweep<usize> {
    Sweep::One(1)
}
fn default_variants() -> Vec<VariantName> {
    vec![VariantName::Projection, VariantName::Retraction]
}
fn default_mu_list() -> Vec<f64> {
    vec![0.3, 0.1, 0.03]
}
fn default_bias_samples() -> u64 {
    100_000
}
fn default_batch_list() -> Vec<usize> {
    vec![1, 10, 100]
}
fn default_variance_mu() -> f64 {
    1e-3
}
fn default_repeats() -> u64 {
    2000
}
fn default_isotropy_draws() -> u64 {
    100_000
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Errors the CLI maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Keys of `[problem]` that each kind accepts besides `kind`.
fn allowed_problem_keys(kind: ProblemKind) -> &'static [&'static str] {
    match kind {
        ProblemKind::Kpca => &["samples", "dim", "rank", "dataset", "data_seed"],
        ProblemKind::Lowrank => &[
            "samples",
            "rows",
            "cols",
            "rank",
            "noise",
            "gamma",
            "data_seed",
        ],
        ProblemKind::Attack => &["epsilon", "c", "kappa", "victim", "inputs"],
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.check_problem_keys(text)?;
        for p in [
            &mut cfg.problem.dataset,
            &mut cfg.problem.victim,
            &mut cfg.problem.inputs,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    fn check_problem_keys(&self, text: &str) -> Result<(), ConfigError> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        let Some(problem) = raw.get("problem").and_then(|v| v.as_table()) else {
            return Ok(());
        };
        let allowed = allowed_problem_keys(self.problem.kind);
        for key in problem.keys() {
            if key != "kind" && !allowed.contains(&key.as_str()) {
                return Err(ConfigError(format!(
                    "key `problem.{key}` does not apply to problem kind {:?}",
                    self.problem.kind
                )));
            }
        }
        Ok(())
    }

    /// Checks values and input paths before any computation starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError(m));
        for p in [
            &self.problem.dataset,
            &self.problem.victim,
            &self.problem.inputs,
        ]
        .into_iter()
        .flatten()
        {
            if !p.is_file() {
                return bad(format!("input file {} does not exist", p.display()));
            }
        }
        let r = &self.run;
        match (r.eta, r.eta_tilde) {
            (Some(_), Some(_)) => {
                return bad("set only one of `run.eta` and `run.eta_tilde`".into())
            }
            (Some(v), None) | (None, Some(v)) if !(v > 0.0 && v.is_finite()) => {
                return bad(format!("step size must be positive, got {v}"))
            }
            _ => {}
        }
        let lists: [(&str, Vec<usize>); 4] = [
            ("run.n_clients", r.n_clients.values()),
            ("run.local_steps", r.local_steps.values()),
            ("smoothing.batch", self.smoothing.batch.values()),
            (
                "problem.rank",
                self.problem.rank.as_ref().map_or(vec![1], Sweep::values),
            ),
        ];
        for (key, vals) in lists {
            if vals.is_empty() {
                return bad(format!("`{key}` is an empty list"));
            }
            if vals.contains(&0) {
                return bad(format!("`{key}` values must be >= 1"));
            }
        }
        if r.metric_interval == 0 {
            return bad("`run.metric_interval` must be >= 1".into());
        }
        if let Some(mu) = self.smoothing.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return bad(format!("`smoothing.mu` must be positive, got {mu}"));
            }
        }
        if self.output.seeds.is_empty() {
            return bad("`output.seeds` is empty".into());
        }
        Ok(())
    }

    /// The config with every default filled in, as TOML.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// One point of the federated sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct SweepPoint {
    pub n_clients: usize,
    pub local_steps: usize,
    pub batch: usize,
    pub rank: usize,
}

impl SweepPoint {
    pub fn label(&self) -> String {
        format!(
            "n{}_tau{}_m{}_r{}",
            self.n_clients, self.local_steps, self.batch, self.rank
        )
    }
}

impl ExperimentConfig {
    pub fn default_rank(&self) -> usize {
        match self.problem.kind {
            ProblemKind::Kpca | ProblemKind::Lowrank => 2,
            ProblemKind::Attack => 1,
        }
    }

    /// Cartesian product of the sweepable keys, in a fixed order.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let ranks = self
            .problem
            .rank
            .as_ref()
            .map_or(vec![self.default_rank()], Sweep::values);
        let mut out = Vec::new();
        for n in self.run.n_clients.values() {
            for t in self.run.local_steps.values() {
                for m in self.smoothing.batch.values() {
                    for &rank in &ranks {
                        out.push(SweepPoint {
                            n_clients: n,
                            local_steps: t,
                            batch: m,
                            rank,
                        });
                    }
                }
            }
        }
        out
    }

    /// Sweepable keys that hold more than one value.
    pub fn swept_keys(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        m.insert("run.n_clients", self.run.n_clients.values().len());
        m.insert("run.local_steps", self.run.local_steps.values().len());
        m.insert("smoothing.batch", self.smoothing.batch.values().len());
        m.insert(
            "problem.rank",
            self.problem.rank.as_ref().map_or(1, |r| r.values().len()),
        );
        m.retain(|_, n| *n > 1);
        m
    }
}
