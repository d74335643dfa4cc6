//! Position-based click model.
//!
//! A user examines the item at rank `j` with probability `propensity(j)`,
//! independently across positions, and clicks an examined item iff it is
//! relevant to them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ranking::{Ranking, Request};

/// Rank-to-examination-probability map.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureModel {
    propensity_by_rank: Vec<f64>,
}

impl ExposureModel {
    pub fn new(propensity_by_rank: Vec<f64>) -> Result<Self> {
        if propensity_by_rank.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        if let Some(&p) = propensity_by_rank.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::ZeroPropensity(p));
        }
        Ok(Self { propensity_by_rank })
    }

    /// `1 / log2(1 + rank)`, the DCG discount used as an examination curve.
    pub fn dcg_curve(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyCatalog);
        }
        Ok(Self {
            propensity_by_rank: (1..=n).map(|j| 1.0 / ((j + 1) as f64).log2()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.propensity_by_rank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.propensity_by_rank.is_empty()
    }

    /// Propensity at a zero-based display position.
    pub fn at_position(&self, position: usize) -> f64 {
        self.propensity_by_rank[position]
    }

    pub fn by_rank(&self) -> &[f64] {
        &self.propensity_by_rank
    }

    pub fn max(&self) -> f64 {
        self.propensity_by_rank.iter().copied().fold(f64::MIN, f64::max)
    }

    /// Propensity of every item under `ranking`, indexed by item.
    pub fn item_propensities(&self, ranking: &Ranking) -> Vec<f64> {
        ranking
            .positions()
            .iter()
            .map(|&pos| self.propensity_by_rank[pos])
            .collect()
    }
}

/// Default examination curve for `n` items.
pub fn default_propensities(n: usize) -> Result<ExposureModel> {
    ExposureModel::dcg_curve(n)
}

/// Outcome of one interaction, indexed by item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Feedback {
    clicks: Vec<bool>,
    examination: Vec<bool>,
}

impl Feedback {
    pub fn from_parts(examination: Vec<bool>, relevance: &[bool]) -> Result<Self> {
        if examination.len() != relevance.len() {
            return Err(Error::DimensionMismatch {
                expected: relevance.len(),
                actual: examination.len(),
            });
        }
        let clicks = examination.iter().zip(relevance).map(|(&e, &r)| e && r).collect();
        Ok(Self { clicks, examination })
    }

    pub fn clicks(&self) -> &[bool] {
        &self.clicks
    }

    /// Simulator-internal; never handed to policies.
    pub fn examination(&self) -> &[bool] {
        &self.examination
    }

    pub fn click_count(&self) -> usize {
        self.clicks.iter().filter(|&&c| c).count()
    }
}

/// Draws examinations for `ranking` and censors the request's relevance.
pub fn simulate_interaction<R: Rng + ?Sized>(
    ranking: &Ranking,
    request: &Request,
    exposure: &ExposureModel,
    rng: &mut R,
) -> Result<Feedback> {
    let n = ranking.len();
    if request.true_relevance().len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: request.true_relevance().len(),
        });
    }
    if exposure.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: exposure.len(),
        });
    }
    let mut examination = vec![false; n];
    for (position, &item) in ranking.order().iter().enumerate() {
        examination[item] = rng.random::<f64>() < exposure.at_position(position);
    }
    Feedback::from_parts(examination, request.true_relevance())
}
