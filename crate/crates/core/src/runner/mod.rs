//! Seeded multi-trial simulation, parameter sweeps and metric aggregation.

pub mod csv;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::click::{default_propensities, simulate_interaction, ExposureModel, Feedback};
use crate::envs::{EnvSpec, TrialEnv};
use crate::error::{Error, Result};
use crate::fairness::{FairnessLedger, FairnessMode};
use crate::metrics::ndcg;
use crate::policies::{build_policy, Policy, PolicyConfig};
use crate::ranking::{Ranking, Request};

pub use self::csv::{write_csv, write_sweep_csv};

pub const DEFAULT_LOG_INTERVAL: u64 = 50;

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub env: EnvSpec,
    pub policy: PolicyConfig,
    pub n_users: u64,
    pub n_trials: usize,
    pub seed: u64,
    pub log_interval: u64,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn new(env: EnvSpec, policy: PolicyConfig) -> Self {
        Self {
            experiment_id: policy.kind.to_string(),
            env,
            policy,
            n_users: 3000,
            n_trials: 1,
            seed: 0,
            log_interval: DEFAULT_LOG_INTERVAL,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::Config("n_users must be at least 1".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log_interval must be at least 1".into()));
        }
        if !(self.policy.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.policy.lambda
            )));
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}

/// Metrics at one checkpoint of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub trial: usize,
    pub step: u64,
    pub ndcg_cum: f64,
    pub unfair_exposure: f64,
    pub unfair_impact: f64,
    pub exp_ratios: Vec<f64>,
    pub imp_ratios: Vec<f64>,
    /// Seconds since the trial started; not written to CSV.
    pub wall_time: f64,
}

/// Evaluation-side bookkeeping with ground-truth merits.
#[derive(Clone, Debug)]
pub struct Evaluator {
    merit: Vec<f64>,
    ledger: FairnessLedger,
    ndcg_sum: f64,
}

impl Evaluator {
    pub fn new(env: &TrialEnv) -> Self {
        Self {
            merit: env.true_merit().to_vec(),
            ledger: FairnessLedger::new(env.catalog()),
            ndcg_sum: 0.0,
        }
    }

    pub fn record(
        &mut self,
        env: &TrialEnv,
        request: &Request,
        ranking: &Ranking,
        feedback: &Feedback,
        exposure: &ExposureModel,
    ) {
        self.ndcg_sum += ndcg(ranking, request.true_relevance());
        self.ledger
            .accumulate(ranking, feedback.clicks(), exposure, env.catalog());
    }

    pub fn ledger(&self) -> &FairnessLedger {
        &self.ledger
    }

    pub fn merit(&self) -> &[f64] {
        &self.merit
    }

    pub fn row(&self, trial: usize, wall_time: f64) -> Result<MetricsRow> {
        let tau = self.ledger.step_count();
        if tau == 0 {
            return Err(Error::EmptyHistory);
        }
        Ok(MetricsRow {
            trial,
            step: tau,
            ndcg_cum: self.ndcg_sum / tau as f64,
            unfair_exposure: self.ledger.overall_disparity(&self.merit, FairnessMode::Exposure)?,
            unfair_impact: self.ledger.overall_disparity(&self.merit, FairnessMode::Impact)?,
            exp_ratios: self.ledger.average_ratios(&self.merit, FairnessMode::Exposure)?,
            imp_ratios: self.ledger.average_ratios(&self.merit, FairnessMode::Impact)?,
            wall_time,
        })
    }
}

/// What happened on one simulation step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub request: Request,
    pub ranking: Ranking,
    pub feedback: Feedback,
}

/// Rng streams of one trial. Separate streams keep environments, users and
/// examinations identical across policies run with the same seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One trial, advanced step by step.
pub struct Trial<P: Policy + ?Sized> {
    pub index: usize,
    env: TrialEnv,
    exposure: ExposureModel,
    policy: Box<P>,
    evaluator: Evaluator,
    requests: ChaCha8Rng,
    clicks: ChaCha8Rng,
    decisions: ChaCha8Rng,
    step: u64,
}

/// Builds the environment of a trial from its seed.
pub fn trial_env(spec: &EnvSpec, trial_seed: u64) -> Result<TrialEnv> {
    spec.instantiate(&mut stream(trial_seed, 0))
}

impl<P: Policy + ?Sized> Trial<P> {
    pub fn new(index: usize, env: TrialEnv, policy: Box<P>, trial_seed: u64) -> Result<Self> {
        let exposure = default_propensities(env.catalog().len())?;
        Ok(Self {
            index,
            evaluator: Evaluator::new(&env),
            env,
            exposure,
            policy,
            requests: stream(trial_seed, 1),
            clicks: stream(trial_seed, 2),
            decisions: stream(trial_seed, 3),
            step: 0,
        })
    }

    pub fn env(&self) -> &TrialEnv {
        &self.env
    }

    pub fn exposure(&self) -> &ExposureModel {
        &self.exposure
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut P {
        &mut self.policy
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.evaluator
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// rank -> simulate -> observe -> evaluate.
    pub fn step(&mut self) -> Result<StepRecord> {
        let request = self.env.request(self.step, &mut self.requests)?;
        let ranking = self.policy.rank(request.features(), &mut self.decisions)?;
        let feedback = simulate_interaction(&ranking, &request, &self.exposure, &mut self.clicks)?;
        self.policy.observe(request.features(), &ranking, feedback.clicks())?;
        self.evaluator
            .record(&self.env, &request, &ranking, &feedback, &self.exposure);
        self.step += 1;
        Ok(StepRecord {
            request,
            ranking,
            feedback,
        })
    }
}

/// `step` is a checkpoint when it is a multiple of the interval or the last step.
pub fn is_checkpoint(step: u64, log_interval: u64, n_users: u64) -> bool {
    step == n_users || step % log_interval == 0
}

fn run_trial_inner(config: &ExperimentConfig, trial: usize) -> Result<Vec<MetricsRow>> {
    let seed = config.trial_seed(trial);
    let env = trial_env(&config.env, seed)?;
    let policy = build_policy(
        &config.policy,
        env.catalog(),
        &default_propensities(env.catalog().len())?,
        seed,
    )?;
    let mut runner = Trial::new(trial, env, policy, seed)?;
    let start = Instant::now();
    let mut rows = Vec::new();
    for _ in 0..config.n_users {
        runner.step()?;
        let tau = runner.steps_done();
        if is_checkpoint(tau, config.log_interval, config.n_users) {
            rows.push(runner.evaluator().row(trial, start.elapsed().as_secs_f64())?);
        }
    }
    Ok(rows)
}

/// Runs one trial; errors carry the trial index.
pub fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    run_trial_inner(config, trial).map_err(|e| Error::Trial {
        trial,
        source: Box::new(e),
    })
}

/// Across-trial mean and sample standard deviation at one checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub step: u64,
    pub mean: MetricsRow,
    pub sd: MetricsRow,
}

/// Per-trial rows (sorted by trial, step) plus per-checkpoint aggregates.
#[derive(Debug)]
pub struct ExperimentResult {
    pub experiment_id: String,
    pub rows: Vec<MetricsRow>,
    pub aggregates: Vec<AggregateRow>,
    /// Set when a trial failed; `rows` then holds the trials that finished.
    pub failure: Option<Error>,
}

impl ExperimentResult {
    pub fn is_partial(&self) -> bool {
        self.failure.is_some()
    }

    pub fn into_result(self) -> Result<Self> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(Self { failure: None, ..self }),
        }
    }

    /// Aggregate at the last checkpoint.
    pub fn final_aggregate(&self) -> Option<&AggregateRow> {
        self.aggregates.last()
    }

    pub fn trial_rows(&self, trial: usize) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(move |r| r.trial == trial)
    }
}

fn columns(row: &MetricsRow) -> Vec<f64> {
    let mut v = vec![row.ndcg_cum, row.unfair_exposure, row.unfair_impact];
    v.extend(&row.exp_ratios);
    v.extend(&row.imp_ratios);
    v.push(row.wall_time);
    v
}

fn from_columns(step: u64, m: usize, v: &[f64]) -> MetricsRow {
    MetricsRow {
        trial: 0,
        step,
        ndcg_cum: v[0],
        unfair_exposure: v[1],
        unfair_impact: v[2],
        exp_ratios: v[3..3 + m].to_vec(),
        imp_ratios: v[3 + m..3 + 2 * m].to_vec(),
        wall_time: v[3 + 2 * m],
    }
}

pub fn aggregate(rows: &[MetricsRow]) -> Vec<AggregateRow> {
    let mut steps: Vec<u64> = rows.iter().map(|r| r.step).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|step| {
            let at: Vec<Vec<f64>> = rows.iter().filter(|r| r.step == step).map(columns).collect();
            let m = rows[0].exp_ratios.len();
            let k = at.len() as f64;
            let width = at[0].len();
            let mean: Vec<f64> = (0..width).map(|c| at.iter().map(|r| r[c]).sum::<f64>() / k).collect();
            let sd: Vec<f64> = (0..width)
                .map(|c| {
                    if at.len() < 2 {
                        0.0
                    } else {
                        (at.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
                    }
                })
                .collect();
            AggregateRow {
                step,
                mean: from_columns(step, m, &mean),
                sd: from_columns(step, m, &sd),
            }
        })
        .collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every trial (in parallel over `workers` threads) and aggregates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let outcomes: Vec<Result<Vec<MetricsRow>>> = pool(config.workers)?.install(|| {
        (0..config.n_trials)
            .into_par_iter()
            .map(|t| run_trial(config, t))
            .collect()
    });
    let mut rows = Vec::new();
    let mut failure = None;
    for outcome in outcomes {
        match outcome {
            Ok(r) => rows.extend(r),
            Err(e) => {
                if failure.is_none() {
                    failure = Some(e);
                }
            }
        }
    }
    rows.sort_by_key(|r| (r.trial, r.step));
    let aggregates = if rows.is_empty() { Vec::new() } else { aggregate(&rows) };
    Ok(ExperimentResult {
        experiment_id: config.experiment_id.clone(),
        rows,
        aggregates,
        failure,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    PNeg,
    GroupSplit,
    BlockUsers,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "p_neg" => Ok(Self::PNeg),
            "group_split" => Ok(Self::GroupSplit),
            "block_users" => Ok(Self::BlockUsers),
            _ => Err(Error::Config(format!("unknown sweep parameter '{s}'"))),
        }
    }
}

fn whole(value: f64, name: &str) -> Result<u64> {
    if value >= 0.0 && value.fract() == 0.0 {
        Ok(value as u64)
    } else {
        Err(Error::Config(format!(
            "{name} must be a non-negative integer, got {value}"
        )))
    }
}

/// Copy of `config` with the swept parameter set to `value`.
pub fn apply_sweep(config: &ExperimentConfig, param: SweepParam, value: f64) -> Result<ExperimentConfig> {
    let mut c = config.clone();
    match (param, &mut c.env) {
        (SweepParam::Lambda, _) => c.policy.lambda = value,
        (SweepParam::PNeg, EnvSpec::News { p_neg, .. }) => *p_neg = value,
        (SweepParam::GroupSplit, EnvSpec::News { group_split, .. }) => {
            *group_split = whole(value, "group_split")? as usize
        }
        (SweepParam::BlockUsers, EnvSpec::News { block_users, .. }) => *block_users = whole(value, "block_users")?,
        (p, EnvSpec::Movies(_)) => {
            return Err(Error::Config(format!(
                "{p:?} can only be swept for the news environment"
            )))
        }
    }
    Ok(c)
}

/// One experiment per swept value.
pub struct SweepResult {
    pub param: SweepParam,
    pub blocks: Vec<(f64, ExperimentResult)>,
}

pub fn run_sweep(config: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut blocks = Vec::with_capacity(values.len());
    for &v in values {
        let result = run_experiment(&apply_sweep(config, param, v)?)?;
        let partial = result.is_partial();
        blocks.push((v, result));
        if partial {
            break;
        }
    }
    Ok(SweepResult { param, blocks })
}

impl SweepResult {
    pub fn failure(&self) -> Option<&Error> {
        self.blocks.iter().find_map(|(_, r)| r.failure.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::PolicyKind;

    fn config(kind: PolicyKind, users: u64, trials: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(EnvSpec::news(6, 3, 0.5), PolicyConfig::new(kind));
        c.n_users = users;
        c.n_trials = trials;
        c.log_interval = 10;
        c
    }

    #[test]
    fn checkpoint_count() {
        let rows = run_trial(&config(PolicyKind::DultrGlob, 100, 1), 0).unwrap();
        assert_eq!(rows.len(), 10);
        assert_eq!(rows.last().unwrap().step, 100);
        let mut c = config(PolicyKind::DultrGlob, 25, 1);
        c.log_interval = 10;
        let steps: Vec<u64> = run_trial(&c, 0).unwrap().iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![10, 20, 25]);
    }

    #[test]
    fn trial_is_deterministic() {
        let c = config(PolicyKind::FaircoImp, 40, 1);
        let strip = |rows: Vec<MetricsRow>| -> Vec<MetricsRow> {
            rows.into_iter().map(|r| MetricsRow { wall_time: 0.0, ..r }).collect()
        };
        assert_eq!(strip(run_trial(&c, 3).unwrap()), strip(run_trial(&c, 3).unwrap()));
    }

    #[test]
    fn aggregate_counts_and_means() {
        let c = ExperimentConfig {
            log_interval: 10,
            ..config(PolicyKind::Naive, 30, 2)
        };
        let result = run_experiment(&c).unwrap();
        assert_eq!(result.rows.len(), 6);
        assert_eq!(result.aggregates.len(), 3);
        let at_20: Vec<f64> = result
            .rows
            .iter()
            .filter(|r| r.step == 20)
            .map(|r| r.ndcg_cum)
            .collect();
        let mean = (at_20[0] + at_20[1]) / 2.0;
        assert!((result.aggregates[1].mean.ndcg_cum - mean).abs() < 1e-15);
    }

    #[test]
    fn sweep_rejects_movie_only_params() {
        let c = config(PolicyKind::Naive, 10, 1);
        assert!(apply_sweep(&c, SweepParam::GroupSplit, 2.5).is_err());
        assert_eq!(apply_sweep(&c, SweepParam::Lambda, 0.5).unwrap().policy.lambda, 0.5);
        let blocks = run_sweep(&c, SweepParam::Lambda, &[0.0, 0.01]).unwrap().blocks;
        assert_eq!(blocks.len(), 2);
    }
}
