//! Simulation loop, regret accounting, multi-seed aggregation and output.
//!
//! Every episode draws its oracle noise from stream 1 and its policy
//! randomness from stream 2 of `ChaCha8Rng::seed_from_u64(seed)`, so all
//! policies run with the same seed face the same oracle stream.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::CandidateSet;
use crate::environments::{load_tabular, noisy, BtlOracle, Environment, EnvironmentError, Rescale, Utility};
use crate::inference::{fit, ExplorationSchedule, PrefPosterior, PreferenceHistory};
use crate::kernels::{draw_rkhs_sample, BaseKernel, DuelingKernel, Point, PointPair};
use crate::policies::{
    duel_ucb_select, gpts_select, maxminlcb_select, pfts_from_anchored, popbo_select, random_select, PairDecision,
    PolicyError, PolicySpec,
};
use crate::scalar_gp::fit_scalar;

pub const ORACLE_STREAM: u64 = 1;
pub const POLICY_STREAM: u64 = 2;
/// Budget ladder step of the cost-adjusted table.
pub const DEFAULT_BUDGET_STEP: usize = 25;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot parse config: {0}")]
    ConfigParse(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("no completed `{0}` traces for the cost table")]
    MissingPolicy(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    /// Flipped Ackley on an even 1-d grid.
    Ackley {
        #[serde(default = "ackley_lo")]
        lo: f64,
        #[serde(default = "ackley_hi")]
        hi: f64,
        #[serde(default = "ackley_points")]
        points: usize,
    },
    /// A function drawn once from the RKHS of `kernel` (the run kernel if
    /// absent) with norm exactly `norm`, on an even 1-d grid.
    Rkhs {
        #[serde(default = "unit_lo")]
        lo: f64,
        #[serde(default = "unit_hi")]
        hi: f64,
        #[serde(default = "rkhs_points")]
        points: usize,
        #[serde(default = "rkhs_norm")]
        norm: f64,
        #[serde(default)]
        utility_seed: u64,
        #[serde(default)]
        kernel: Option<BaseKernel>,
    },
    /// Rows of a CSV file. Relative paths resolve against the config file.
    Tabular {
        path: PathBuf,
        features: Vec<String>,
        utility: String,
        #[serde(default)]
        rescale: Option<Rescale>,
        /// Min-max scale each feature column to `[0, 1]`.
        #[serde(default)]
        normalize_features: bool,
    },
}

fn ackley_lo() -> f64 {
    -5.0
}
fn ackley_hi() -> f64 {
    5.0
}
fn ackley_points() -> usize {
    40
}
fn unit_lo() -> f64 {
    0.0
}
fn unit_hi() -> f64 {
    1.0
}
fn rkhs_points() -> usize {
    30
}
fn rkhs_norm() -> f64 {
    2.0
}

impl EnvironmentSpec {
    pub fn build(&self, run_kernel: &BaseKernel, base_dir: Option<&Path>) -> Result<Environment, HarnessError> {
        match self {
            Self::Ackley { lo, hi, points } => {
                check_grid(*lo, *hi, *points)?;
                Ok(Environment::new(CandidateSet::linspace(*lo, *hi, *points), Utility::AckleyFlipped)?)
            }
            Self::Rkhs { lo, hi, points, norm, utility_seed, kernel } => {
                check_grid(*lo, *hi, *points)?;
                let grid = CandidateSet::linspace(*lo, *hi, *points);
                let mut rng = ChaCha8Rng::seed_from_u64(*utility_seed);
                let sample = draw_rkhs_sample(kernel.as_ref().unwrap_or(run_kernel), &grid, *norm, &mut rng)
                    .map_err(EnvironmentError::from)?;
                Ok(Environment::new(grid, Utility::Rkhs(sample))?)
            }
            Self::Tabular { path, features, utility, rescale, normalize_features } => {
                let full = match base_dir {
                    Some(d) if path.is_relative() => d.join(path),
                    _ => path.clone(),
                };
                let (set, u) = load_tabular(&full, features, utility, *rescale)?;
                if !normalize_features {
                    return Ok(Environment::new(set, u)?);
                }
                let values: Vec<f64> = set.points().iter().map(|p| u.eval(p)).collect::<Result<_, _>>()?;
                let scaled: Vec<Point> = set
                    .points()
                    .iter()
                    .map(|p| {
                        p.iter()
                            .zip(set.bounds())
                            .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
                            .collect()
                    })
                    .collect();
                let set = CandidateSet::new(scaled).map_err(EnvironmentError::from)?;
                let u = Utility::tabular(&set, values);
                Ok(Environment::new(set, u)?)
            }
        }
    }
}

fn check_grid(lo: f64, hi: f64, points: usize) -> Result<(), HarnessError> {
    if points == 0 || !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(HarnessError::InvalidConfig(format!("bad grid [{lo}, {hi}] with {points} points")));
    }
    Ok(())
}

/// Cost-adjusted comparison settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub ratios: Vec<f64>,
    #[serde(default = "default_budget_step")]
    pub step: usize,
    #[serde(default = "default_preference_policy")]
    pub preference_policy: String,
    #[serde(default = "default_scalar_policy")]
    pub scalar_policy: String,
}

fn default_budget_step() -> usize {
    DEFAULT_BUDGET_STEP
}
fn default_preference_policy() -> String {
    "pfts".into()
}
fn default_scalar_policy() -> String {
    "gpts".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub kernel: BaseKernel,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicySpec>,
    pub horizon: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_norm_bound")]
    pub norm_bound: f64,
    /// Confidence level used for the recorded `β_t(δ)`.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Standard deviation of scalar observation noise.
    #[serde(default = "default_noise")]
    pub scalar_noise_sd: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub cost: Option<CostSpec>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_policies() -> Vec<PolicySpec> {
    vec![PolicySpec::Pfts { schedule: ExplorationSchedule::default() }]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_lambda() -> f64 {
    crate::inference::DEFAULT_LAMBDA
}
fn default_norm_bound() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    0.05
}
fn default_noise() -> f64 {
    1.0
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(s).map_err(|e| HarnessError::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config; relative data paths resolve against its folder.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.policies.is_empty() {
            return bad("at least one policy is required".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.norm_bound >= 0.0 && self.norm_bound.is_finite()) {
            return bad(format!("norm_bound must be nonnegative, got {}", self.norm_bound));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.scalar_noise_sd >= 0.0 && self.scalar_noise_sd.is_finite()) {
            return bad(format!("scalar_noise_sd must be nonnegative, got {}", self.scalar_noise_sd));
        }
        self.kernel.validate().map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.policies {
            if !seen.insert(p.label()) {
                return bad(format!("policy `{}` listed twice", p.label()));
            }
            if let PolicySpec::Gpts { schedule: ExplorationSchedule::Theory { .. }, .. } = p {
                return bad("the theory schedule needs a preference posterior; gpts cannot use it".into());
            }
        }
        if let Some(c) = &self.cost {
            if c.step == 0 || c.ratios.iter().any(|r| !(*r >= 1.0 && r.is_finite())) {
                return bad("cost ratios must be >= 1 and the budget step positive".into());
            }
        }
        Ok(())
    }

    pub fn build_environment(&self) -> Result<Environment, HarnessError> {
        self.environment.build(&self.kernel, self.base_dir.as_deref())
    }

    pub fn policy(&self, label: &str) -> Option<&PolicySpec> {
        self.policies.iter().find(|p| p.label() == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub first: usize,
    pub second: usize,
    /// Preference label `y_t` (1 when `first` won), or the scalar observation.
    pub feedback: f64,
    pub regret: f64,
    pub cumulative: f64,
    /// `σ_{t−1}(x_t, x'_t)`; absent for policies that do not fit the preference model.
    pub sigma: Option<f64>,
    /// `β_t(δ)` of the fitted preference posterior.
    pub beta: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub policy: String,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    /// Set when the episode aborted early; `records` holds the rounds played.
    pub error: Option<String>,
}

impl RegretTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn cumulative(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative)
    }

    pub fn instantaneous(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.regret).collect()
    }
}

pub fn episode_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut oracle = ChaCha8Rng::seed_from_u64(seed);
    oracle.set_stream(ORACLE_STREAM);
    let mut policy = ChaCha8Rng::seed_from_u64(seed);
    policy.set_stream(POLICY_STREAM);
    (oracle, policy)
}

/// Plays `cfg.horizon` rounds of `policy` against `env`.
///
/// The posterior is refitted from scratch on `H_{t−1}` each round. Scalar
/// policies observe `f(x_t) + noise` and are charged the regret of `(x_t, x_t)`.
pub fn run_episode(cfg: &RunConfig, env: &Environment, policy: &PolicySpec, seed: u64) -> RegretTrace {
    let (oracle_rng, mut rng) = episode_rngs(seed);
    let mut oracle = BtlOracle::new(env.utility().clone(), oracle_rng);
    // scalar observations draw from the same oracle stream
    let mut noise_rng = episode_rngs(seed).0;
    let c = env.candidates();
    let dk = DuelingKernel::new(cfg.kernel);
    let mut history = PreferenceHistory::new();
    let mut scalar_points: Vec<Point> = Vec::new();
    let mut scalar_obs: Vec<f64> = Vec::new();
    let mut records = Vec::with_capacity(cfg.horizon);
    let mut cumulative = 0.0;
    let mut previous: Option<usize> = None;

    for t in 1..=cfg.horizon {
        let start = Instant::now();
        let mut step = || -> Result<(PairDecision, Option<PrefPosterior>), HarnessError> {
            let fitted = |h: &PreferenceHistory| {
                fit(h, &dk, cfg.lambda, cfg.norm_bound).map_err(|e| HarnessError::Policy(e.into()))
            };
            Ok(match policy {
                PolicySpec::Pfts { schedule } => {
                    let post = fitted(&history)?;
                    let v = schedule.v_t(t, Some(&post)).map_err(PolicyError::from)?;
                    let ap = post.anchored(c, c.point(0)).map_err(PolicyError::from)?;
                    (pfts_from_anchored(&ap, v, &mut rng)?, Some(post))
                }
                PolicySpec::Gpts { schedule, lambda } => {
                    let sp = fit_scalar(&scalar_points, &scalar_obs, &cfg.kernel, lambda.unwrap_or(cfg.lambda))
                        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
                    let v = schedule.v_t(t, None).map_err(PolicyError::from)?;
                    let i = gpts_select(&sp, c, v, &mut rng)?;
                    (PairDecision::new(i, i), None)
                }
                PolicySpec::Maxminlcb { beta } => {
                    let post = fitted(&history)?;
                    (maxminlcb_select(&post, c, *beta)?, Some(post))
                }
                PolicySpec::Popbo { beta } => {
                    let post = fitted(&history)?;
                    (popbo_select(&post, c, previous, *beta)?, Some(post))
                }
                PolicySpec::DuelUcb { beta } => {
                    let post = fitted(&history)?;
                    let i = duel_ucb_select(&post, c, c.point(0), *beta)?;
                    (PairDecision::new(i, 0), Some(post))
                }
                PolicySpec::Random => (random_select(c, &mut rng)?, None),
            })
        };
        let (decision, post) = match step() {
            Ok(v) => v,
            Err(e) => {
                return RegretTrace {
                    policy: policy.label().into(),
                    seed,
                    records,
                    error: Some(format!("round {t}: {e}")),
                }
            }
        };
        let (i, j) = (decision.first, decision.second);
        let (xi, xj) = (c.point(i).clone(), c.point(j).clone());
        let sigma = post.as_ref().and_then(|p| p.sigma(&PointPair::new(xi.clone(), xj.clone())).ok());
        let beta = post.as_ref().and_then(|p| p.beta(cfg.delta).ok());
        let feedback = if policy.is_scalar() {
            let o = noisy(env.value(i), cfg.scalar_noise_sd, &mut noise_rng);
            scalar_points.push(xi);
            scalar_obs.push(o);
            o
        } else {
            let y = oracle.compare_values(env.value(i), env.value(j));
            history.push(xi, xj, y);
            if y {
                1.0
            } else {
                0.0
            }
        };
        previous = Some(i);
        let regret = env.regret(i, j);
        cumulative += regret;
        records.push(RoundRecord {
            t,
            first: i,
            second: j,
            feedback,
            regret,
            cumulative,
            sigma,
            beta,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    RegretTrace { policy: policy.label().into(), seed, records, error: None }
}

/// Per-round mean and standard error over the seeds of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub policy: String,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<u64>,
    pub mean_regret: Vec<f64>,
    pub se_regret: Vec<f64>,
    pub mean_cumulative: Vec<f64>,
    pub se_cumulative: Vec<f64>,
}

impl PolicyAggregate {
    pub fn final_cumulative(&self) -> f64 {
        self.mean_cumulative.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    /// Sorted by `(policy, seed)`.
    pub traces: Vec<RegretTrace>,
    /// Sorted by policy label.
    pub aggregates: Vec<PolicyAggregate>,
}

impl SuiteResult {
    pub fn aggregate(&self, policy: &str) -> Option<&PolicyAggregate> {
        self.aggregates.iter().find(|a| a.policy == policy)
    }
}

/// Mean and sample standard error (`n − 1` denominator; 0 for a single value).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Aggregates complete traces per policy. Traces that ended early are listed
/// as failed and left out of the statistics.
pub fn aggregate(traces: &[RegretTrace], horizon: usize) -> Vec<PolicyAggregate> {
    let mut by_policy: BTreeMap<&str, Vec<&RegretTrace>> = BTreeMap::new();
    for tr in traces {
        by_policy.entry(tr.policy.as_str()).or_default().push(tr);
    }
    by_policy
        .into_iter()
        .map(|(policy, mut trs)| {
            trs.sort_by_key(|t| t.seed);
            let (ok, failed): (Vec<_>, Vec<_>) = trs.into_iter().partition(|t| t.error.is_none() && t.len() == horizon);
            let mut agg = PolicyAggregate {
                policy: policy.to_string(),
                seeds: ok.iter().map(|t| t.seed).collect(),
                failed_seeds: failed.iter().map(|t| t.seed).collect(),
                mean_regret: Vec::with_capacity(horizon),
                se_regret: Vec::with_capacity(horizon),
                mean_cumulative: Vec::with_capacity(horizon),
                se_cumulative: Vec::with_capacity(horizon),
            };
            if ok.is_empty() {
                return agg;
            }
            for k in 0..horizon {
                let (m, s) = mean_se(&ok.iter().map(|t| t.records[k].regret).collect::<Vec<_>>());
                agg.mean_regret.push(m);
                agg.se_regret.push(s);
                let (m, s) = mean_se(&ok.iter().map(|t| t.records[k].cumulative).collect::<Vec<_>>());
                agg.mean_cumulative.push(m);
                agg.se_cumulative.push(s);
            }
            agg
        })
        .collect()
}

/// Runs every `(policy, seed)` episode in parallel and merges by key.
pub fn run_suite(cfg: &RunConfig) -> Result<SuiteResult, HarnessError> {
    cfg.validate()?;
    let env = cfg.build_environment()?;
    Ok(run_suite_on(cfg, &env))
}

pub fn run_suite_on(cfg: &RunConfig, env: &Environment) -> SuiteResult {
    let jobs: Vec<(&PolicySpec, u64)> =
        cfg.policies.iter().flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s))).collect();
    let mut traces: Vec<RegretTrace> = jobs.par_iter().map(|(p, s)| run_episode(cfg, env, p, *s)).collect();
    traces.sort_by(|a, b| (a.policy.as_str(), a.seed).cmp(&(b.policy.as_str(), b.seed)));
    let aggregates = aggregate(&traces, cfg.horizon);
    SuiteResult { traces, aggregates }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub policy: String,
    pub ratio: f64,
    pub budget: usize,
    /// Round whose regret is reported; `None` when the budget buys no round.
    pub round: Option<usize>,
    pub regret: Option<f64>,
    pub se: Option<f64>,
}

/// Scalar rounds bought by budget `c` at cost ratio `ξ`: `floor(c / ξ)`.
pub fn scalar_rounds(budget: usize, ratio: f64) -> usize {
    (budget as f64 / ratio + 1e-9).floor() as usize
}

/// Instantaneous regret versus budget. The preference policy plays `c`
/// rounds; the scalar policy plays `floor(c / ξ)`.
pub fn cost_table(
    preference: &PolicyAggregate,
    scalar: &PolicyAggregate,
    ratios: &[f64],
    step: usize,
) -> Vec<CostRow> {
    let mut rows = Vec::new();
    let max_budget = preference.mean_regret.len();
    let lookup = |agg: &PolicyAggregate, round: usize| -> (Option<usize>, Option<f64>, Option<f64>) {
        if round == 0 || round > agg.mean_regret.len() {
            (None, None, None)
        } else {
            (Some(round), Some(agg.mean_regret[round - 1]), Some(agg.se_regret[round - 1]))
        }
    };
    for &ratio in ratios {
        let mut budget = step;
        while budget <= max_budget {
            let (round, regret, se) = lookup(preference, budget);
            rows.push(CostRow { policy: preference.policy.clone(), ratio, budget, round, regret, se });
            let (round, regret, se) = lookup(scalar, scalar_rounds(budget, ratio));
            rows.push(CostRow { policy: scalar.policy.clone(), ratio, budget, round, regret, se });
            budget += step;
        }
    }
    rows
}

pub fn cost_adjusted(cfg: &RunConfig, suite: &SuiteResult) -> Result<Vec<CostRow>, HarnessError> {
    let spec = cfg.cost.clone().unwrap_or(CostSpec {
        ratios: vec![1.0, 3.0, 5.0, 7.0],
        step: DEFAULT_BUDGET_STEP,
        preference_policy: default_preference_policy(),
        scalar_policy: default_scalar_policy(),
    });
    let get = |name: &str| {
        suite
            .aggregate(name)
            .filter(|a| !a.seeds.is_empty())
            .ok_or_else(|| HarnessError::MissingPolicy(name.to_string()))
    };
    Ok(cost_table(get(&spec.preference_policy)?, get(&spec.scalar_policy)?, &spec.ratios, spec.step))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-round long format, one line per `(policy, seed, t)`. Wall-clock time
/// is left out so the bytes depend only on config and seed.
pub fn traces_csv(traces: &[RegretTrace]) -> String {
    let mut out = String::from("policy,seed,t,first,second,feedback,r,R,sigma,beta\n");
    for tr in traces {
        for r in &tr.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                tr.policy,
                tr.seed,
                r.t,
                r.first,
                r.second,
                r.feedback,
                r.regret,
                r.cumulative,
                opt(r.sigma),
                opt(r.beta)
            );
        }
    }
    out
}

pub fn aggregate_csv(aggs: &[PolicyAggregate]) -> String {
    let mut out = String::from("policy,t,mean_r,se_r,mean_R,se_R\n");
    for a in aggs {
        for k in 0..a.mean_regret.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                a.policy,
                k + 1,
                a.mean_regret[k],
                a.se_regret[k],
                a.mean_cumulative[k],
                a.se_cumulative[k]
            );
        }
    }
    out
}

pub fn cost_csv(rows: &[CostRow]) -> String {
    let mut out = String::from("policy,xi,budget,round,r,se\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.policy,
            r.ratio,
            r.budget,
            r.round.map(|v| v.to_string()).unwrap_or_default(),
            opt(r.regret),
            opt(r.se)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub policy: String,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<u64>,
    pub horizon: usize,
    pub final_mean_cumulative: Option<f64>,
    pub final_se_cumulative: Option<f64>,
    pub final_mean_regret: Option<f64>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub policies: Vec<SummaryEntry>,
}

pub const SUMMARY_SCHEMA: &str = "pfts-summary/1";

pub fn summary(suite: &SuiteResult, horizon: usize) -> Summary {
    let policies = suite
        .aggregates
        .iter()
        .map(|a| SummaryEntry {
            policy: a.policy.clone(),
            seeds: a.seeds.clone(),
            failed_seeds: a.failed_seeds.clone(),
            horizon,
            final_mean_cumulative: a.mean_cumulative.last().copied(),
            final_se_cumulative: a.se_cumulative.last().copied(),
            final_mean_regret: a.mean_regret.last().copied(),
            errors: suite
                .traces
                .iter()
                .filter(|t| t.policy == a.policy)
                .filter_map(|t| t.error.as_ref().map(|e| format!("seed {}: {e}", t.seed)))
                .collect(),
        })
        .collect();
    Summary { schema: SUMMARY_SCHEMA.into(), policies }
}

/// Files written by [`emit`].
#[derive(Debug, Clone, PartialEq)]
pub struct Emitted {
    pub traces: PathBuf,
    pub aggregate: PathBuf,
    pub summary: PathBuf,
    pub cost: Option<PathBuf>,
}

/// Writes `traces.csv`, `aggregate.csv`, `summary.json` and, when given,
/// `cost.csv` into `dir`.
pub fn emit(dir: &Path, suite: &SuiteResult, horizon: usize, cost: Option<&[CostRow]>) -> Result<Emitted, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let write = |name: &str, body: &str| -> Result<PathBuf, HarnessError> {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| io_err(&p, e))?;
        Ok(p)
    };
    let json = serde_json::to_string_pretty(&summary(suite, horizon)).expect("summary serializes");
    Ok(Emitted {
        traces: write("traces.csv", &traces_csv(&suite.traces))?,
        aggregate: write("aggregate.csv", &aggregate_csv(&suite.aggregates))?,
        summary: write("summary.json", &(json + "\n"))?,
        cost: cost.map(|rows| write("cost.csv", &cost_csv(rows))).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::load_tabular;

    fn ackley_cfg(policies: &str, horizon: usize, seeds: &str) -> RunConfig {
        RunConfig::from_toml_str(&format!(
            "horizon = {horizon}\nseeds = {seeds}\n{policies}\n[environment]\nkind = \"ackley\"\n[kernel]\nfamily = \"matern\"\nnu = 2.5\nlengthscale = 0.1\n"
        ))
        .unwrap()
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ackley_cfg("", 5, "[1]");
        assert_eq!(cfg.policies, default_policies());
        assert_eq!(cfg.lambda, 0.05);
        assert!(RunConfig::from_toml_str("horizon = 0\n[environment]\nkind = \"ackley\"\n").is_err());
        assert!(RunConfig::from_toml_str("horizon = 3\nseeds = []\n[environment]\nkind = \"ackley\"\n").is_err());
        assert!(matches!(
            RunConfig::from_toml_str("horizon = 3\nbogus = 1\n[environment]\nkind = \"ackley\"\n"),
            Err(HarnessError::ConfigParse(_))
        ));
        let dup = "[[policies]]\nname = \"random\"\n[[policies]]\nname = \"random\"\n";
        assert!(RunConfig::from_toml_str(&format!("horizon = 3\n{dup}[environment]\nkind = \"ackley\"\n")).is_err());
    }

    #[test]
    fn single_round_trace() {
        for p in ["pfts", "gpts", "maxminlcb", "popbo", "duel_ucb", "random"] {
            let cfg = ackley_cfg(&format!("[[policies]]\nname = \"{p}\""), 1, "[3]");
            let env = cfg.build_environment().unwrap();
            let tr = run_episode(&cfg, &env, &cfg.policies[0], 3);
            assert!(tr.error.is_none(), "{p}: {:?}", tr.error);
            assert_eq!(tr.len(), 1);
            assert_eq!(tr.records[0].cumulative, tr.records[0].regret);
        }
    }

    #[test]
    fn cumulative_is_running_sum_and_gpts_duplicates_arm() {
        let cfg = ackley_cfg("[[policies]]\nname = \"gpts\"\n[[policies]]\nname = \"pfts\"", 25, "[4]");
        let suite = run_suite(&cfg).unwrap();
        for tr in &suite.traces {
            let mut s = 0.0;
            for r in &tr.records {
                s += r.regret;
                assert!((r.cumulative - s).abs() <= 1e-10);
                if tr.policy == "gpts" {
                    assert_eq!(r.first, r.second);
                    assert!(r.sigma.is_none());
                } else {
                    assert!(r.feedback == 0.0 || r.feedback == 1.0);
                    assert!(r.sigma.is_some() && r.beta.is_some());
                }
            }
        }
    }

    #[test]
    fn popbo_carries_previous_first_arm() {
        let cfg = ackley_cfg("[[policies]]\nname = \"popbo\"", 8, "[0]");
        let env = cfg.build_environment().unwrap();
        let tr = run_episode(&cfg, &env, &cfg.policies[0], 0);
        assert_eq!(tr.records[0].second, 0);
        for w in tr.records.windows(2) {
            assert_eq!(w[1].second, w[0].first);
        }
    }

    #[test]
    fn random_baseline_is_flat() {
        let seeds: Vec<String> = (0..30).map(|s| s.to_string()).collect();
        let cfg = ackley_cfg("[[policies]]\nname = \"random\"", 300, &format!("[{}]", seeds.join(",")));
        let suite = run_suite(&cfg).unwrap();
        let agg = suite.aggregate("random").unwrap();
        let ts: Vec<f64> = (50..=300).map(|t| t as f64).collect();
        let ys: Vec<f64> = (50..=300).map(|t| agg.mean_regret[t - 1]).collect();
        let (tm, ym) = (ts.iter().sum::<f64>() / ts.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
        let slope = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum::<f64>()
            / ts.iter().map(|t| (t - tm).powi(2)).sum::<f64>();
        // change of the fitted line across the window, relative to the mean level
        assert!((slope * 250.0).abs() <= 0.1 * ym, "slope {slope}, level {ym}");
    }

    #[test]
    fn standard_error_formula() {
        assert_eq!(mean_se(&[2.5]), (2.5, 0.0));
        let v: Vec<f64> = (0..30).map(|i| ((i * 37 % 11) as f64).sqrt()).collect();
        let (m, se) = mean_se(&v);
        let n = v.len() as f64;
        let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((se - sd / n.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_seed_has_zero_se() {
        let cfg = ackley_cfg("[[policies]]\nname = \"random\"", 10, "[9]");
        let suite = run_suite(&cfg).unwrap();
        assert!(suite.aggregates[0].se_regret.iter().all(|&s| s == 0.0));
        assert!(suite.aggregates[0].se_cumulative.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn aggregation_ignores_seed_order() {
        let a = ackley_cfg("[[policies]]\nname = \"random\"\n[[policies]]\nname = \"pfts\"", 12, "[1, 2, 3]");
        let mut b = a.clone();
        b.seeds = vec![3, 1, 2];
        b.policies.reverse();
        let (sa, sb) = (run_suite(&a).unwrap(), run_suite(&b).unwrap());
        assert_eq!(traces_csv(&sa.traces), traces_csv(&sb.traces));
        assert_eq!(aggregate_csv(&sa.aggregates), aggregate_csv(&sb.aggregates));
    }

    #[test]
    fn shared_oracle_stream_across_policies() {
        // a scripted identical pair sequence sees identical labels
        let cfg = ackley_cfg("", 1, "[5]");
        let env = cfg.build_environment().unwrap();
        let labels = |seed| {
            let (rng, _) = episode_rngs(seed);
            let mut o = BtlOracle::new(env.utility().clone(), rng);
            (0..20).map(|k| o.compare_values(env.value(k), env.value(k + 1))).collect::<Vec<_>>()
        };
        assert_eq!(labels(5), labels(5));
        let (mut o, mut p) = episode_rngs(5);
        use rand::Rng;
        assert_ne!(o.random::<u64>(), p.random::<u64>());
    }

    #[test]
    fn cost_table_rounds() {
        let agg = |name: &str, n: usize| PolicyAggregate {
            policy: name.into(),
            seeds: vec![0],
            failed_seeds: vec![],
            mean_regret: (1..=n).map(|t| 1.0 / t as f64).collect(),
            se_regret: vec![0.0; n],
            mean_cumulative: vec![0.0; n],
            se_cumulative: vec![0.0; n],
        };
        let (p, g) = (agg("pfts", 800), agg("gpts", 800));
        let rows = cost_table(&p, &g, &[1.0, 3.0, 5.0, 7.0], 25);
        let find = |xi: f64, c: usize, pol: &str| {
            rows.iter().find(|r| r.ratio == xi && r.budget == c && r.policy == pol).unwrap().clone()
        };
        assert_eq!(find(7.0, 25, "gpts").round, Some(3));
        assert_eq!(find(7.0, 800, "gpts").round, Some(114));
        assert_eq!(find(1.0, 400, "gpts").regret, Some(g.mean_regret[399]));
        assert_eq!(find(3.0, 25, "pfts").round, Some(25));
        let small = cost_table(&p, &g, &[30.0], 25);
        assert_eq!(small.iter().find(|r| r.policy == "gpts").unwrap().round, None);
        for c in (25..=800).step_by(25) {
            let rounds: Vec<usize> = [1.0, 3.0, 5.0, 7.0].iter().map(|&x| scalar_rounds(c, x)).collect();
            assert!(rounds.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn emitted_csv_loads_back_and_is_stable() {
        let cfg = ackley_cfg("[[policies]]\nname = \"pfts\"", 15, "[11]");
        let suite = run_suite(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = emit(dir.path(), &suite, cfg.horizon, None).unwrap();
        let cols = vec!["t".to_string()];
        let (set, u) = load_tabular(&out.traces, &cols, "R", None).unwrap();
        assert_eq!(set.len(), 15);
        assert_eq!(u.eval(set.point(14)).unwrap(), suite.traces[0].cumulative());
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out.summary).unwrap()).unwrap();
        assert_eq!(json["schema"], SUMMARY_SCHEMA);
        assert_eq!(json["policies"][0]["policy"], "pfts");
        assert!(json["policies"][0]["final_mean_cumulative"].is_number());

        let again = run_suite(&cfg).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let out2 = emit(dir2.path(), &again, cfg.horizon, None).unwrap();
        for (a, b) in [(&out.traces, &out2.traces), (&out.aggregate, &out2.aggregate), (&out.summary, &out2.summary)] {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
    }

    #[test]
    fn golden_trace() {
        let cfg = ackley_cfg("[[policies]]\nname = \"pfts\"\n[[policies]]\nname = \"random\"", 6, "[2024]");
        let csv = traces_csv(&run_suite(&cfg).unwrap().traces);
        let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/ackley_pfts_random_6.csv");
        if std::env::var_os("PFTS_BLESS").is_some() {
            std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
            std::fs::write(&golden, &csv).unwrap();
        }
        assert_eq!(csv, std::fs::read_to_string(&golden).unwrap());
    }

    #[test]
    fn tabular_environment_resolves_relative_paths() {
        let cfg_text = "horizon = 3\n[environment]\nkind = \"tabular\"\npath = \"ocx24_synthetic.csv\"\nfeatures = [\"x_Ag\", \"x_Au\", \"x_Zn\"]\nutility = \"fe-h2\"\nrescale = { kind = \"min_max\", lo = 0.0, hi = 10.0 }\n";
        let mut cfg = RunConfig::from_toml_str(cfg_text).unwrap();
        cfg.base_dir = Some(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
        let env = cfg.build_environment().unwrap();
        assert_eq!(env.candidates().len(), 63);
        assert_eq!(env.best_value(), 10.0);

        let lc = "horizon = 3\n[environment]\nkind = \"tabular\"\npath = \"lcbench_synthetic.csv\"\nfeatures = [\"batch_size\", \"max_units\", \"learning_rate\", \"momentum\", \"weight_decay\"]\nutility = \"val_accuracy\"\nnormalize_features = true\n";
        let mut cfg = RunConfig::from_toml_str(lc).unwrap();
        cfg.base_dir = Some(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
        let env = cfg.build_environment().unwrap();
        for p in env.candidates().points() {
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
