//! Dynamic ranking policies.
//!
//! A policy sees each user's features, emits a ranking, and is then told
//! which items were clicked. It never sees true relevances or which items
//! were examined: [`Policy::rank`] and [`Policy::observe`] take features,
//! the shown ranking and the click vector only.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::click::ExposureModel;
use crate::error::{Error, Result};
use crate::estimators::{merit_estimate, GlobalEstimatorState, DEFAULT_MIN_MERIT};
use crate::fairness::{FairnessLedger, FairnessMode};
use crate::lp::{build_lp, bvn_decompose, sample_ranking, solve_fair_lp};
use crate::ranking::{argsort_desc, ItemCatalog, Ranking};
use crate::regression::{train, Adam, InteractionLog, Objective, RegressionModel, DEFAULT_EPOCHS, DEFAULT_HIDDEN};

pub const DEFAULT_LAMBDA: f64 = 0.01;

pub trait Policy: Send {
    fn name(&self) -> &'static str;

    /// Ranking for a user with the given features.
    fn rank(&mut self, features: &[f64], rng: &mut dyn RngCore) -> Result<Ranking>;

    /// Feedback for the ranking most recently returned by `rank`.
    fn observe(&mut self, features: &[f64], ranking: &Ranking, clicks: &[bool]) -> Result<()>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Naive,
    DultrGlob,
    DultrPers,
    FaircoExp,
    FaircoImp,
    Linprog,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Naive,
        PolicyKind::DultrGlob,
        PolicyKind::DultrPers,
        PolicyKind::FaircoExp,
        PolicyKind::FaircoImp,
        PolicyKind::Linprog,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Naive => "naive",
            PolicyKind::DultrGlob => "dultr-glob",
            PolicyKind::DultrPers => "dultr-pers",
            PolicyKind::FaircoExp => "fairco-exp",
            PolicyKind::FaircoImp => "fairco-imp",
            PolicyKind::Linprog => "linprog",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy '{s}'")))
    }
}

/// Where FairCo takes its relevance scores from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelevanceSource {
    #[default]
    Global,
    Personalized,
}

impl FromStr for RelevanceSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "personalized" => Ok(Self::Personalized),
            _ => Err(Error::Config(format!("unknown relevance source '{s}'"))),
        }
    }
}

/// Retraining schedule and network shape for personalized relevance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonalizedConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// First step count at which the network is trained.
    pub warmup: u64,
    pub retrain_every: u64,
}

impl PersonalizedConfig {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            hidden: DEFAULT_HIDDEN,
            epochs: DEFAULT_EPOCHS,
            learning_rate: 1e-3,
            warmup: 100,
            retrain_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub lambda: f64,
    pub min_merit: f64,
    pub relevance: RelevanceSource,
    pub personalized: Option<PersonalizedConfig>,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            lambda: DEFAULT_LAMBDA,
            min_merit: DEFAULT_MIN_MERIT,
            relevance: RelevanceSource::Global,
            personalized: None,
        }
    }
}

/// Builds a boxed policy. `seed` drives network initialization only.
pub fn build_policy(
    config: &PolicyConfig,
    catalog: &ItemCatalog,
    exposure: &ExposureModel,
    seed: u64,
) -> Result<Box<dyn Policy>> {
    if !(config.lambda >= 0.0) || !config.lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be >= 0, got {}", config.lambda)));
    }
    let pers = || {
        config
            .personalized
            .clone()
            .ok_or_else(|| Error::Config(format!("{} needs a personalized model config", config.kind)))
    };
    let policy: Box<dyn Policy> = match config.kind {
        PolicyKind::Naive => Box::new(Naive::new(exposure.clone())),
        PolicyKind::DultrGlob => Box::new(DultrGlob::new(exposure.clone())),
        PolicyKind::DultrPers => Box::new(DultrPers::new(catalog.len(), exposure.clone(), pers()?, seed)),
        PolicyKind::FaircoExp | PolicyKind::FaircoImp => {
            let mode = if config.kind == PolicyKind::FaircoExp {
                FairnessMode::Exposure
            } else {
                FairnessMode::Impact
            };
            let mut fairco = FairCo::new(catalog.clone(), exposure.clone(), mode, config.lambda)?;
            fairco.min_merit = config.min_merit;
            if config.relevance == RelevanceSource::Personalized {
                fairco = fairco.with_personalized(pers()?, seed);
            }
            Box::new(fairco)
        }
        PolicyKind::Linprog => {
            let mut lp = LinProg::new(catalog.clone(), exposure.clone(), config.lambda)?;
            lp.min_merit = config.min_merit;
            Box::new(lp)
        }
    };
    Ok(policy)
}

fn ips_or_zero(state: &GlobalEstimatorState, n: usize) -> Vec<f64> {
    state.ips_estimate().unwrap_or_else(|_| vec![0.0; n])
}

/// Ranks by raw click counts.
#[derive(Clone, Debug)]
pub struct Naive {
    exposure: ExposureModel,
    state: GlobalEstimatorState,
}

impl Naive {
    pub fn new(exposure: ExposureModel) -> Self {
        let n = exposure.len();
        Self {
            exposure,
            state: GlobalEstimatorState::new(n),
        }
    }

    pub fn estimator(&self) -> &GlobalEstimatorState {
        &self.state
    }
}

impl Policy for Naive {
    fn name(&self) -> &'static str {
        "naive"
    }

    fn rank(&mut self, _features: &[f64], rng: &mut dyn RngCore) -> Result<Ranking> {
        argsort_desc(self.state.naive_sums(), rng)
    }

    fn observe(&mut self, _features: &[f64], ranking: &Ranking, clicks: &[bool]) -> Result<()> {
        self.state.update(clicks, ranking, &self.exposure)
    }
}

/// Ranks by the global IPS relevance estimate.
#[derive(Clone, Debug)]
pub struct DultrGlob {
    exposure: ExposureModel,
    state: GlobalEstimatorState,
}

impl DultrGlob {
    pub fn new(exposure: ExposureModel) -> Self {
        let n = exposure.len();
        Self {
            exposure,
            state: GlobalEstimatorState::new(n),
        }
    }

    pub fn estimator(&self) -> &GlobalEstimatorState {
        &self.state
    }
}

impl Policy for DultrGlob {
    fn name(&self) -> &'static str {
        "dultr-glob"
    }

    fn rank(&mut self, _features: &[f64], rng: &mut dyn RngCore) -> Result<Ranking> {
        argsort_desc(&ips_or_zero(&self.state, self.exposure.len()), rng)
    }

    fn observe(&mut self, _features: &[f64], ranking: &Ranking, clicks: &[bool]) -> Result<()> {
        self.state.update(clicks, ranking, &self.exposure)
    }
}

/// Network trained on the propensity-weighted click log, with a global IPS
/// fallback until the first training round.
#[derive(Clone, Debug)]
pub struct PersonalizedRelevance {
    config: PersonalizedConfig,
    model: RegressionModel,
    optimizer: Adam,
    log: InteractionLog,
    trained: bool,
    retrains: usize,
}

impl PersonalizedRelevance {
    pub fn new(n_items: usize, config: PersonalizedConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = RegressionModel::new(config.feature_dim, config.hidden, n_items, &mut rng);
        Self {
            optimizer: Adam::new(config.learning_rate),
            log: InteractionLog::new(Objective::Unbiased, config.feature_dim, n_items),
            model,
            config,
            trained: false,
            retrains: 0,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn retrain_count(&self) -> usize {
        self.retrains
    }

    pub fn model(&self) -> &RegressionModel {
        &self.model
    }

    /// Personalized scores, or `None` before the first training round.
    pub fn scores(&self, features: &[f64]) -> Result<Option<Vec<f64>>> {
        if features.is_empty() {
            return Err(Error::Contract("personalized ranking needs user features".into()));
        }
        if !self.trained {
            return Ok(None);
        }
        self.model.predict(features).map(Some)
    }

    /// Logs one interaction; retrains on the whole log when the schedule says so.
    pub fn record(&mut self, features: &[f64], clicks: &[bool], propensities: &[f64]) -> Result<()> {
        self.log.push_interaction(features, clicks, propensities)?;
        let tau = self.log.len() as u64;
        let every = self.config.retrain_every.max(1);
        if tau >= self.config.warmup && tau % every == 0 {
            train(&mut self.model, &self.log, &mut self.optimizer, self.config.epochs)?;
            self.trained = true;
            self.retrains += 1;
        }
        Ok(())
    }
}

/// Ranks by the personalized network's predictions.
#[derive(Clone, Debug)]
pub struct DultrPers {
    exposure: ExposureModel,
    global: GlobalEstimatorState,
    personal: PersonalizedRelevance,
}

impl DultrPers {
    pub fn new(n_items: usize, exposure: ExposureModel, config: PersonalizedConfig, seed: u64) -> Self {
        Self {
            global: GlobalEstimatorState::new(n_items),
            personal: PersonalizedRelevance::new(n_items, config, seed),
            exposure,
        }
    }

    pub fn personalized(&self) -> &PersonalizedRelevance {
        &self.personal
    }
}

impl Policy for DultrPers {
    fn name(&self) -> &'static str {
        "dultr-pers"
    }

    fn rank(&mut self, features: &[f64], rng: &mut dyn RngCore) -> Result<Ranking> {
        let scores = match self.personal.scores(features)? {
            Some(s) => s,
            None => ips_or_zero(&self.global, self.exposure.len()),
        };
        argsort_desc(&scores, rng)
    }

    fn observe(&mut self, features: &[f64], ranking: &Ranking, clicks: &[bool]) -> Result<()> {
        self.global.update(clicks, ranking, &self.exposure)?;
        let props = self.exposure.item_propensities(ranking);
        self.personal.record(features, clicks, &props)
    }
}

/// Proportional fairness controller: sorts by `R(d|x) + lambda * err(d)`.
#[derive(Clone, Debug)]
pub struct FairCo {
    catalog: ItemCatalog,
    exposure: ExposureModel,
    mode: FairnessMode,
    lambda: f64,
    pub min_merit: f64,
    /// Clamp base relevances into `[0, 1]` before adding the correction.
    pub clip_relevance: bool,
    /// Stop refreshing merits once this many steps have been observed.
    pub freeze_merit_at: Option<u64>,
    global: GlobalEstimatorState,
    personal: Option<PersonalizedRelevance>,
    ledger: FairnessLedger,
    merit: Vec<f64>,
    frozen: bool,
}

impl FairCo {
    pub fn new(catalog: ItemCatalog, exposure: ExposureModel, mode: FairnessMode, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        if exposure.len() != catalog.len() {
            return Err(Error::DimensionMismatch {
                expected: catalog.len(),
                actual: exposure.len(),
            });
        }
        let m = catalog.group_count();
        Ok(Self {
            global: GlobalEstimatorState::new(catalog.len()),
            ledger: FairnessLedger::new(&catalog),
            merit: vec![DEFAULT_MIN_MERIT; m],
            catalog,
            exposure,
            mode,
            lambda,
            min_merit: DEFAULT_MIN_MERIT,
            clip_relevance: false,
            freeze_merit_at: None,
            personal: None,
            frozen: false,
        })
    }

    pub fn with_personalized(mut self, config: PersonalizedConfig, seed: u64) -> Self {
        self.personal = Some(PersonalizedRelevance::new(self.catalog.len(), config, seed));
        self
    }

    pub fn mode(&self) -> FairnessMode {
        self.mode
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn ledger(&self) -> &FairnessLedger {
        &self.ledger
    }

    pub fn estimator(&self) -> &GlobalEstimatorState {
        &self.global
    }

    /// Merits used by the most recent `rank` call.
    pub fn merit(&self) -> &[f64] {
        &self.merit
    }

    fn refresh_merit(&mut self) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        let relevance = ips_or_zero(&self.global, self.catalog.len());
        self.merit = merit_estimate(&relevance, &self.catalog, self.min_merit)?;
        if let Some(at) = self.freeze_merit_at {
            if self.global.step_count() >= at {
                self.frozen = true;
            }
        }
        Ok(())
    }

    /// `R(d|x) + lambda * err(d)` for the current state.
    pub fn scores(&mut self, features: &[f64]) -> Result<Vec<f64>> {
        self.refresh_merit()?;
        let personal = match &self.personal {
            Some(p) => p.scores(features)?,
            None => None,
        };
        let mut relevance = personal.unwrap_or_else(|| ips_or_zero(&self.global, self.catalog.len()));
        if self.clip_relevance {
            relevance.iter_mut().for_each(|r| *r = r.clamp(0.0, 1.0));
        }
        let err = self.ledger.error_term(&self.merit, &self.catalog, self.mode)?;
        Ok(relevance.iter().zip(&err).map(|(r, e)| r + self.lambda * e).collect())
    }
}

impl Policy for FairCo {
    fn name(&self) -> &'static str {
        match self.mode {
            FairnessMode::Exposure => "fairco-exp",
            FairnessMode::Impact => "fairco-imp",
        }
    }

    fn rank(&mut self, features: &[f64], rng: &mut dyn RngCore) -> Result<Ranking> {
        let scores = self.scores(features)?;
        argsort_desc(&scores, rng)
    }

    fn observe(&mut self, features: &[f64], ranking: &Ranking, clicks: &[bool]) -> Result<()> {
        self.global.update(clicks, ranking, &self.exposure)?;
        self.ledger.accumulate(ranking, clicks, &self.exposure, &self.catalog);
        if let Some(p) = &mut self.personal {
            let props = self.exposure.item_propensities(ranking);
            p.record(features, clicks, &props)?;
        }
        Ok(())
    }
}

/// Re-solves the impact-fairness LP every step and samples a ranking from
/// its Birkhoff-von-Neumann decomposition.
#[derive(Clone, Debug)]
pub struct LinProg {
    catalog: ItemCatalog,
    exposure: ExposureModel,
    lambda: f64,
    pub min_merit: f64,
    global: GlobalEstimatorState,
    ledger: FairnessLedger,
}

impl LinProg {
    pub fn new(catalog: ItemCatalog, exposure: ExposureModel, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self {
            global: GlobalEstimatorState::new(catalog.len()),
            ledger: FairnessLedger::new(&catalog),
            catalog,
            exposure,
            lambda,
            min_merit: DEFAULT_MIN_MERIT,
        })
    }

    pub fn ledger(&self) -> &FairnessLedger {
        &self.ledger
    }
}

impl Policy for LinProg {
    fn name(&self) -> &'static str {
        "linprog"
    }

    fn rank(&mut self, _features: &[f64], rng: &mut dyn RngCore) -> Result<Ranking> {
        let relevance = ips_or_zero(&self.global, self.catalog.len());
        let merit = merit_estimate(&relevance, &self.catalog, self.min_merit)?;
        // Solve over items relabeled in a randomly tie-broken relevance order
        // so that degenerate optima do not always favour low item ids.
        let relabel = argsort_desc(&relevance, rng)?;
        let order = relabel.order();
        let groups: Vec<usize> = order.iter().map(|&d| self.catalog.group_of(d)).collect();
        let local = ItemCatalog::from_groups(&groups)?;
        let local_relevance: Vec<f64> = order.iter().map(|&d| relevance[d]).collect();
        let lp = build_lp(
            &local_relevance,
            &self.ledger,
            &merit,
            self.lambda,
            &self.exposure,
            &local,
        )?;
        let solution = solve_fair_lp(&lp)?;
        let terms = bvn_decompose(&solution.matrix)?;
        let drawn = sample_ranking(&terms, rng)?;
        Ranking::new(drawn.order().iter().map(|&k| order[k]).collect())
    }

    fn observe(&mut self, _features: &[f64], ranking: &Ranking, clicks: &[bool]) -> Result<()> {
        self.global.update(clicks, ranking, &self.exposure)?;
        self.ledger.accumulate(ranking, clicks, &self.exposure, &self.catalog);
        Ok(())
    }
}
