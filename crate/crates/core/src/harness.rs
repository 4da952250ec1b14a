//! Paired bootstrap-filter versus VC-SMC experiments and the files behind them.
//!
//! Every trial simulates one dataset, runs both filters on it and writes its rows to
//! a staging file under `trials/trial_NNN/`. The merged `results.csv` is sorted by
//! trial id, so a config and seed always produce byte-identical outputs as long as
//! `train.record_timing` is off.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{simulate, Dataset, LinearGaussianModel, PlanarNavModel, ThreeDoorsModel};
use crate::error::{domain, Error, Result};
use crate::metrics::{kl_mixture_vs_particles, rmse};
use crate::proposal::{CopulaProposal, Frame, MarginalKind, VariationalParams};
use crate::smc::{
    filtering_moments, log_evidence, smc_run, write_beliefs, BootstrapProposal, ParticleSystem, StateSpaceModel,
    BELIEFS_HEADER,
};
use crate::stats::{derive_seed, Rng};
use crate::train::{improvement_reach, train, TrainConfig, TrainOutcome, TrainTrace};

/// Code version written next to every output.
pub const VERSION: &str = concat!("vcsmc ", env!("CARGO_PKG_VERSION"));

pub mod metric {
    pub const POSE_KL: &str = "pose_kl";
    pub const LANDMARK_RMSE: &str = "landmark_rmse";
    pub const RMSE: &str = "rmse";
    pub const LOG_Z: &str = "log_z";
    /// Mean of `Z_hat / Z` over repeated filter runs.
    pub const Z_RATIO: &str = "z_ratio";
    /// Mean of `log Z_hat - log Z` over repeated filter runs.
    pub const LOG_Z_BIAS: &str = "log_z_bias";
    /// Iteration at which 90% of the smoothed training improvement was reached;
    /// `iterations + 1` when it never was.
    pub const TRAIN_REACH: &str = "train_reach_90";
    pub const SELECTED_ITERATION: &str = "selected_iteration";
    pub const WALL_SECONDS: &str = "wall_seconds";

    /// `Some(true)` when lower values are better, `None` for metrics not compared.
    pub fn lower_is_better(name: &str) -> Option<bool> {
        match name {
            POSE_KL | LANDMARK_RMSE | RMSE => Some(true),
            LOG_Z => Some(false),
            _ => None,
        }
    }
}

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum EnvName {
    #[default]
    #[serde(rename = "threedoors")]
    ThreeDoors,
    #[serde(rename = "planarnav")]
    PlanarNav,
    #[serde(rename = "linear_gaussian_check")]
    LinearGaussianCheck,
}

impl EnvName {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvName::ThreeDoors => "threedoors",
            EnvName::PlanarNav => "planarnav",
            EnvName::LinearGaussianCheck => "linear_gaussian_check",
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "threedoors" | "3doors" => Ok(EnvName::ThreeDoors),
            "planarnav" | "planar" => Ok(EnvName::PlanarNav),
            "linear_gaussian_check" | "linear_gaussian" => Ok(EnvName::LinearGaussianCheck),
            other => Err(format!("unknown env `{other}` (expected threedoors, planarnav or linear_gaussian_check)")),
        }
    }
}

/// Filter that produced a result row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bpf,
    Vcsmc,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Bpf => "bpf",
            Method::Vcsmc => "vcsmc",
        }
    }
}

/// A whole experiment. Loaded from JSON with every missing field taking its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvName,
    pub trials: usize,
    /// Particles of both filters at evaluation time.
    pub particles: usize,
    /// `train.seed` is replaced per trial by a seed derived from [`Self::seed`].
    pub train: TrainConfig,
    pub frame: Frame,
    /// Mixture components of the 3Doors pose marginal; 1 gives a Gaussian.
    pub pose_components: usize,
    pub threedoors: ThreeDoorsModel,
    pub planarnav: PlanarNavModel,
    pub linear_gaussian: LinearGaussianModel,
    /// Filter runs per dataset in the linear-Gaussian calibration check.
    pub check_runs: usize,
    pub kl_mc_samples: usize,
    pub seed: u64,
    /// Concurrent trials; 0 uses one per core.
    pub workers: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvName::ThreeDoors,
            trials: 50,
            particles: 100,
            train: TrainConfig { record_timing: false, ..TrainConfig::default() },
            frame: Frame::TransitionResidual,
            pose_components: 3,
            threedoors: ThreeDoorsModel::default(),
            planarnav: PlanarNavModel::default(),
            linear_gaussian: LinearGaussianModel::default(),
            check_runs: 1000,
            kl_mc_samples: crate::metrics::KL_MC_SAMPLES,
            seed: 0,
            workers: 0,
            out: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    /// Defaults for `env`: 50 trials on 3Doors, 10 on planar navigation and 10
    /// datasets for the linear-Gaussian check.
    pub fn for_env(env: EnvName) -> Self {
        let trials = match env {
            EnvName::ThreeDoors => 50,
            EnvName::PlanarNav | EnvName::LinearGaussianCheck => 10,
        };
        Self { env, trials, ..Self::default() }
    }

    /// Defaults of the belief dump: one 3Doors trial with 500 particles.
    pub fn for_beliefs() -> Self {
        Self { trials: 1, particles: 500, ..Self::for_env(EnvName::ThreeDoors) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.particles == 0 || self.check_runs == 0 || self.pose_components == 0 {
            return domain("trials, particles, check_runs and pose_components must be positive");
        }
        if self.kl_mc_samples < 2 {
            return domain("kl_mc_samples must be at least 2");
        }
        self.train.validate()?;
        match self.env {
            EnvName::ThreeDoors => self.threedoors.validate(),
            EnvName::PlanarNav => self.planarnav.validate(),
            EnvName::LinearGaussianCheck => self.linear_gaussian.validate(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Seed of trial `trial`; every random stream of the trial derives from it.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.seed, trial as u64)
    }

    fn marginal_kinds(&self) -> Vec<MarginalKind> {
        match self.env {
            EnvName::ThreeDoors => {
                let mut kinds = vec![MarginalKind::Gaussian; 4];
                if self.pose_components > 1 {
                    kinds[0] = MarginalKind::Mixture { components: self.pose_components };
                }
                kinds
            }
            EnvName::PlanarNav => vec![MarginalKind::Gaussian; 3],
            EnvName::LinearGaussianCheck => vec![MarginalKind::Gaussian],
        }
    }

    fn model(&self) -> &dyn StateSpaceModel {
        match self.env {
            EnvName::ThreeDoors => &self.threedoors,
            EnvName::PlanarNav => &self.planarnav,
            EnvName::LinearGaussianCheck => &self.linear_gaussian,
        }
    }

    fn simulate(&self, seed: u64, rng: &mut Rng) -> Result<Dataset> {
        let (states, associations, observations, params) = match self.env {
            EnvName::ThreeDoors => {
                let run = self.threedoors.simulate(rng);
                (run.states, run.associations, run.observations, serde_json::to_value(&self.threedoors)?)
            }
            EnvName::PlanarNav => {
                let (s, o) = self.planarnav.simulate(rng);
                (s, Vec::new(), o, serde_json::to_value(&self.planarnav)?)
            }
            EnvName::LinearGaussianCheck => {
                let m = &self.linear_gaussian;
                let (s, o) = simulate(m, m.horizon, rng);
                (s, Vec::new(), o, serde_json::to_value(m)?)
            }
        };
        Ok(Dataset { env: self.env.as_str().into(), seed, params, states, associations, observations })
    }
}

/// One row of `results.csv`. Step 0 holds whole-run values; steps 1..=T are per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub trial: usize,
    pub method: Method,
    pub step: usize,
    pub metric_name: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub seed: u64,
}

/// A trial that raised an error; the remaining trials still run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub message: String,
}

/// Paired comparison of one whole-run metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub lower_is_better: bool,
    pub paired_trials: usize,
    /// Trials where VC-SMC is strictly better than the bootstrap filter.
    pub vcsmc_wins: usize,
    pub win_rate: f64,
    /// One-sided sign test of "VC-SMC is better", ties dropped.
    pub sign_test_p: f64,
    pub median_bpf: f64,
    pub median_vcsmc: f64,
}

/// Contents of `summary.json`, computed only from whole-run rows of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub env: EnvName,
    pub trials: usize,
    pub failed_trials: Vec<usize>,
    /// `medians[method][metric]` over trials.
    pub medians: BTreeMap<String, BTreeMap<String, f64>>,
    pub comparisons: Vec<Comparison>,
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// `P(Binomial(n, 1/2) >= k)`.
pub fn sign_test_p(k: usize, n: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let ln_choose = |n: usize, j: usize| libm::lgamma(n as f64 + 1.0) - libm::lgamma(j as f64 + 1.0) - libm::lgamma((n - j) as f64 + 1.0);
    let p: f64 = (k..=n).map(|j| (ln_choose(n, j) - n as f64 * std::f64::consts::LN_2).exp()).sum();
    p.min(1.0)
}

/// Summary statistics of `rows`; `failed` lists trials that produced no rows.
pub fn summarize(env: EnvName, trials: usize, failed: &[usize], rows: &[ResultRow]) -> Summary {
    let mut per: BTreeMap<(Method, &str), BTreeMap<usize, f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.step == 0) {
        per.entry((r.method, r.metric_name.as_str())).or_default().insert(r.trial, r.value);
    }
    let mut medians: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for ((method, name), vals) in &per {
        if let Some(m) = median(&vals.values().copied().collect::<Vec<_>>()) {
            medians.entry(method.as_str().to_string()).or_default().insert(name.to_string(), m);
        }
    }
    let mut comparisons = Vec::new();
    let names: Vec<&str> = per.keys().map(|k| k.1).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    for name in names {
        let (Some(lower), Some(b), Some(v)) =
            (metric::lower_is_better(name), per.get(&(Method::Bpf, name)), per.get(&(Method::Vcsmc, name)))
        else {
            continue;
        };
        let pairs: Vec<(f64, f64)> = b.iter().filter_map(|(t, bv)| v.get(t).map(|vv| (*bv, *vv))).collect();
        if pairs.is_empty() {
            continue;
        }
        let better = |bv: f64, vv: f64| if lower { vv < bv } else { vv > bv };
        let wins = pairs.iter().filter(|(bv, vv)| better(*bv, *vv)).count();
        let untied = pairs.iter().filter(|(bv, vv)| bv != vv).count();
        comparisons.push(Comparison {
            metric: name.to_string(),
            lower_is_better: lower,
            paired_trials: pairs.len(),
            vcsmc_wins: wins,
            win_rate: wins as f64 / pairs.len() as f64,
            sign_test_p: sign_test_p(wins, untied),
            median_bpf: median(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()).unwrap_or(0.0),
            median_vcsmc: median(&pairs.iter().map(|p| p.1).collect::<Vec<_>>()).unwrap_or(0.0),
        });
    }
    Summary { version: VERSION.into(), env, trials, failed_trials: failed.to_vec(), medians, comparisons }
}

/// What [`run_experiment`] produced.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<TrialFailure>,
    pub summary: Summary,
}

impl ExperimentReport {
    /// More than 10% of trials failed.
    pub fn too_many_failures(&self) -> bool {
        self.failures.len() * 10 > self.summary.trials
    }
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    if rows.is_empty() {
        w.write_record(["trial", "method", "step", "metric_name", "value", "stderr", "seed"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<ResultRow>, csv::Error> = r.deserialize().collect();
    Ok(rows?)
}

/// Writes `config.json` (loadable with `--config`) and `version.txt` into `dir`.
pub fn write_config_echo(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), config.to_json()?)?;
    fs::write(dir.join("version.txt"), format!("{VERSION}\n"))?;
    Ok(())
}

pub fn trial_dir(out: &Path, trial: usize) -> PathBuf {
    out.join("trials").join(format!("trial_{trial:03}"))
}

/// Simulated data and trained proposal of one trial.
struct Prepared {
    seed: u64,
    root: Rng,
    data: Dataset,
    outcome: TrainOutcome,
    train_seconds: f64,
}

fn write_trace(path: &Path, trace: &TrainTrace) -> Result<()> {
    trace.write_csv(BufWriter::new(File::create(path)?))
}

/// Simulates the trial's dataset and trains its proposal, writing the dataset, the
/// training trace, the trained parameters and (3Doors) the exact posterior to `dir`.
fn prepare(config: &ExperimentConfig, trial: usize, dir: &Path) -> Result<Prepared> {
    fs::create_dir_all(dir)?;
    let seed = config.trial_seed(trial);
    let root = Rng::new(seed);
    let data = config.simulate(seed, &mut root.split(0))?;
    data.save(&dir.join("dataset.json"))?;
    if config.env == EnvName::ThreeDoors {
        let post = config.threedoors.exact_posterior(&data.observations);
        fs::write(dir.join("posterior.json"), serde_json::to_string_pretty(&post)?)?;
    }
    let model = config.model();
    let horizon = data.observations.len();
    let init = VariationalParams::init(model.layout(), horizon, &config.marginal_kinds(), config.frame, &mut root.split(1))?;
    let tc = TrainConfig { seed: derive_seed(seed, 2), ..config.train.clone() };
    let start = Instant::now();
    let outcome = match train(model, &data.observations, init, &tc) {
        Ok(o) => o,
        Err(f) => {
            write_trace(&dir.join("train_trace.csv"), &f.trace)?;
            return Err(f.source);
        }
    };
    let train_seconds = start.elapsed().as_secs_f64();
    write_trace(&dir.join("train_trace.csv"), &outcome.trace)?;
    outcome.params.save(&dir.join("params.json"))?;
    Ok(Prepared { seed, root, data, outcome, train_seconds })
}

fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<Vec<ResultRow>> {
    let dir = trial_dir(&config.out, trial);
    let p = prepare(config, trial, &dir)?;
    let timing = config.train.record_timing;
    let mut rows = Vec::new();
    let mut push = |method: Method, step: usize, name: &str, value: f64, stderr: Option<f64>| {
        rows.push(ResultRow { trial, method, step, metric_name: name.into(), value, stderr, seed: p.seed });
    };

    let reach = improvement_reach(&p.outcome.trace.elbos(), config.train.convergence_window, 0.9)
        .unwrap_or(config.train.iterations + 1);
    push(Method::Vcsmc, 0, metric::TRAIN_REACH, reach as f64, None);
    push(Method::Vcsmc, 0, metric::SELECTED_ITERATION, p.outcome.selected_iteration as f64, None);

    let model = config.model();
    let q = CopulaProposal::new(&p.outcome.params)?;
    let obs = &p.data.observations;
    let n = config.particles;

    if config.env == EnvName::LinearGaussianCheck {
        let exact = config.linear_gaussian.kalman(obs).log_evidence;
        for (k, method) in [Method::Bpf, Method::Vcsmc].into_iter().enumerate() {
            let start = Instant::now();
            let mut gaps = Vec::with_capacity(config.check_runs);
            for r in 0..config.check_runs {
                let mut rng = Rng::new(derive_seed(p.seed, ((k as u64 + 1) << 32) + r as u64));
                let ps = match method {
                    Method::Bpf => smc_run(model, &BootstrapProposal, obs, n, &mut rng)?,
                    Method::Vcsmc => smc_run(model, &q, obs, n, &mut rng)?,
                };
                gaps.push(log_evidence(&ps) - exact);
            }
            let ratios: Vec<f64> = gaps.iter().map(|g| g.exp()).collect();
            let (m, se) = mean_and_se(&ratios);
            push(method, 0, metric::Z_RATIO, m, Some(se));
            let (m, se) = mean_and_se(&gaps);
            push(method, 0, metric::LOG_Z_BIAS, m, Some(se));
            push(method, 0, metric::LOG_Z, m + exact, Some(se));
            if timing {
                push(method, 0, metric::WALL_SECONDS, start.elapsed().as_secs_f64() + if k == 1 { p.train_seconds } else { 0.0 }, None);
            }
        }
    } else {
        let posterior = (config.env == EnvName::ThreeDoors).then(|| config.threedoors.exact_posterior(obs));
        for (k, method) in [Method::Bpf, Method::Vcsmc].into_iter().enumerate() {
            let start = Instant::now();
            let mut rng = p.root.split(3 + k as u64);
            let ps = match method {
                Method::Bpf => smc_run(model, &BootstrapProposal, obs, n, &mut rng)?,
                Method::Vcsmc => smc_run(model, &q, obs, n, &mut rng)?,
            };
            let seconds = start.elapsed().as_secs_f64() + if k == 1 { p.train_seconds } else { 0.0 };
            let means = filtering_moments(&ps).mean;
            let states = &p.data.states;
            push(method, 0, metric::LOG_Z, log_evidence(&ps), None);
            if let Some(post) = &posterior {
                let (mut kl_sum, mut se_sq) = (0.0, 0.0);
                for t in 0..obs.len() {
                    let values: Vec<f64> = ps.particles[t].iter().map(|x| x[0]).collect();
                    // both methods share the draws from the exact marginal
                    let mut kl_rng = p.root.split(100 + t as u64);
                    let kl = kl_mixture_vs_particles(&post.marginal(t, 0), &values, &ps.normalized_weights(t), config.kl_mc_samples, &mut kl_rng)?;
                    push(method, t + 1, metric::POSE_KL, kl.value, Some(kl.standard_error));
                    kl_sum += kl.value;
                    se_sq += kl.standard_error * kl.standard_error;
                    let step = rmse(trial, &[means[t][1..].to_vec()], &[states[t][1..].to_vec()])?;
                    push(method, t + 1, metric::LANDMARK_RMSE, step.pooled, None);
                }
                let steps = obs.len() as f64;
                push(method, 0, metric::POSE_KL, kl_sum / steps, Some(se_sq.sqrt() / steps));
                let est: Vec<Vec<f64>> = means.iter().map(|m| m[1..].to_vec()).collect();
                let truth: Vec<Vec<f64>> = states.iter().map(|s| s[1..].to_vec()).collect();
                push(method, 0, metric::LANDMARK_RMSE, rmse(trial, &est, &truth)?.pooled, None);
            } else {
                for t in 0..obs.len() {
                    push(method, t + 1, metric::RMSE, rmse(trial, &means[t..=t], &states[t..=t])?.pooled, None);
                }
                push(method, 0, metric::RMSE, rmse(trial, &means, states)?.pooled, None);
            }
            if timing {
                push(method, 0, metric::WALL_SECONDS, seconds, None);
            }
        }
    }
    write_results_csv(&dir.join("results.csv"), &rows)?;
    Ok(rows)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Domain(format!("cannot start worker pool: {e}")))
}

fn log_failures(out: &Path, failures: &[TrialFailure]) -> Result<()> {
    let path = out.join("errors.log");
    if failures.is_empty() {
        if path.exists() {
            fs::remove_file(path)?;
        }
        return Ok(());
    }
    let text: String = failures.iter().map(|f| format!("trial {}: {}\n", f.trial, f.message)).collect();
    fs::write(path, text)?;
    Ok(())
}

/// Runs every trial of `config` and writes `results.csv`, `summary.json`, the config
/// echo and per-trial artifacts under `config.out`.
///
/// A failing trial is logged to `errors.log` and skipped; check
/// [`ExperimentReport::too_many_failures`] for the overall verdict.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    write_config_echo(&config.out, config)?;
    let outcomes: Vec<Result<Vec<ResultRow>>> =
        pool(config.workers)?.install(|| (0..config.trials).into_par_iter().map(|k| run_trial(config, k)).collect());
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => rows.extend(r),
            Err(e) => {
                eprintln!("trial {trial} failed: {e}");
                failures.push(TrialFailure { trial, message: e.to_string() });
            }
        }
    }
    log_failures(&config.out, &failures)?;
    write_results_csv(&config.out.join("results.csv"), &rows)?;
    let failed: Vec<usize> = failures.iter().map(|f| f.trial).collect();
    let summary = summarize(config.env, config.trials, &failed, &rows);
    fs::write(config.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(ExperimentReport { rows, failures, summary })
}

/// What [`dump_beliefs`] produced.
#[derive(Debug, Clone)]
pub struct BeliefsReport {
    pub trials: usize,
    pub failures: Vec<TrialFailure>,
}

impl BeliefsReport {
    pub fn too_many_failures(&self) -> bool {
        self.failures.len() * 10 > self.trials
    }
}

/// Writes `beliefs_bpf.csv` and `beliefs_vcsmc.csv` (every particle, component and step)
/// under `config.out`, plus the per-trial artifacts of [`run_experiment`]. On 3Doors each
/// trial directory also holds the exact posterior mixture, `posterior.json`.
pub fn dump_beliefs(config: &ExperimentConfig) -> Result<BeliefsReport> {
    config.validate()?;
    if config.env == EnvName::LinearGaussianCheck {
        return domain("belief dumps are for threedoors or planarnav");
    }
    write_config_echo(&config.out, config)?;
    let run = |trial: usize| -> Result<(ParticleSystem, ParticleSystem)> {
        let p = prepare(config, trial, &trial_dir(&config.out, trial))?;
        let model = config.model();
        let q = CopulaProposal::new(&p.outcome.params)?;
        let obs = &p.data.observations;
        let bpf = smc_run(model, &BootstrapProposal, obs, config.particles, &mut p.root.split(3))?;
        let vc = smc_run(model, &q, obs, config.particles, &mut p.root.split(4))?;
        Ok((bpf, vc))
    };
    let outcomes: Vec<Result<(ParticleSystem, ParticleSystem)>> =
        pool(config.workers)?.install(|| (0..config.trials).into_par_iter().map(run).collect());
    let mut writers = Vec::new();
    for method in [Method::Bpf, Method::Vcsmc] {
        let path = config.out.join(format!("beliefs_{}.csv", method.as_str()));
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(BELIEFS_HEADER)?;
        writers.push(w);
    }
    let mut failures = Vec::new();
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((bpf, vc)) => {
                write_beliefs(&mut writers[0], trial, &bpf)?;
                write_beliefs(&mut writers[1], trial, &vc)?;
            }
            Err(e) => {
                eprintln!("trial {trial} failed: {e}");
                failures.push(TrialFailure { trial, message: e.to_string() });
            }
        }
    }
    for w in &mut writers {
        w.flush()?;
    }
    log_failures(&config.out, &failures)?;
    Ok(BeliefsReport { trials: config.trials, failures })
}
